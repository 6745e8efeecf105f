#pragma once

#include <string>
#include <string_view>

#include "audioplan/metrics.hpp"

namespace audioplan {

// LLM-judge request payloads for summarization and translation grading.
// Payloads are written to disk for an external caller; nothing here touches
// the network.
enum class JudgeKind { Summary, Translation };

JudgeKind judge_kind_from_string(std::string_view s);
std::string_view to_string(JudgeKind kind);

std::string_view judge_system_prompt(JudgeKind kind);

// Fills the user template from the pair: summary grading substitutes
// {language}/{reference_summary}/{predicted_summary}; translation grading
// substitutes {arabic_transcription}/{english_transcription}. Throws
// ValidationError when a substituted field is empty.
std::string judge_user_prompt(JudgeKind kind, const EvalPair& pair);

// One request per line: {"id": ..., "system": ..., "user": ...}.
std::string build_judge_request(JudgeKind kind, const EvalPair& pair);

}  // namespace audioplan
