#include "audioplan/judge.hpp"

#include <nlohmann/json.hpp>

namespace audioplan {

namespace {

constexpr std::string_view kSummarySystemPrompt =
    R"(You are a reference-grounded summarization quality evaluator.
Grade a predicted summary by comparing it with the reference summary.
Do NOT use outside knowledge. Judge in the same language as the summaries
(Arabic or English). Return ONLY a valid JSON object that matches the
schema exactly—no extra text.

Score each criterion as an INTEGER from 1 to 10 (1=poor, 10=excellent):

- Clarity
- Conciseness
- Coherence
- Completeness
- Semantic_Alignment
- Accuracy
- Relevance
- Information_Density

)";

constexpr std::string_view kSummaryUserTemplate =
    R"(Language: {language}
Reference summary: {reference_summary}
Predicted summary: {predicted_summary}

Evaluate the predicted summary by comparing it with the reference summary.
Output only the JSON described in the system prompt.)";

constexpr std::string_view kTranslationSystemPrompt =
    R"(You are an expert translation evaluator.

You will be given:
- An English transcription (may contain anonymized tokens such as ###, ####,
  and other placeholders)
- An Arabic transcription translated from the same English content

Your task is to evaluate how semantically equivalent the two transcriptions are.

Evaluation Rules (STRICT):
1. Ignore all anonymization tokens in English.
2. Ignore number differences caused by anonymization.
3. Ignore name differences and transliteration variations.
4. Be lenient with phonetic spellings in Arabic.
5. Focus only on semantic meaning and core information.
6. Judge based on events, facts, actions, relationships, and intent.

Score each criterion as an INTEGER from 1 to 10:

- semantic_equivalence
- information_preservation
- contextual_accuracy
- completeness
- coherence

Return ONLY a valid JSON object matching the schema exactly.
)";

constexpr std::string_view kTranslationUserTemplate =
    R"(Arabic translation:
{arabic_transcription}

Original English source:
{english_transcription}

Evaluate the quality of the Arabic translation relative to the English source.
Follow the evaluation rules defined in the system prompt.
Return only the required JSON output.)";

void substitute(std::string& text, std::string_view placeholder,
                std::string_view value, const std::string& pair_id) {
  if (value.empty())
    throw ValidationError("judge request for '" + pair_id +
                          "': empty value for " + std::string(placeholder));
  std::size_t pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
}

}  // namespace

JudgeKind judge_kind_from_string(std::string_view s) {
  if (s == "summary") return JudgeKind::Summary;
  if (s == "translation") return JudgeKind::Translation;
  throw ValidationError("unknown judge kind '" + std::string(s) +
                        "' (expected summary or translation)");
}

std::string_view to_string(JudgeKind kind) {
  return kind == JudgeKind::Summary ? "summary" : "translation";
}

std::string_view judge_system_prompt(JudgeKind kind) {
  return kind == JudgeKind::Summary ? kSummarySystemPrompt
                                    : kTranslationSystemPrompt;
}

std::string judge_user_prompt(JudgeKind kind, const EvalPair& pair) {
  if (kind == JudgeKind::Summary) {
    std::string user{kSummaryUserTemplate};
    substitute(user, "{language}", to_string(pair.lang), pair.id);
    substitute(user, "{reference_summary}", pair.reference, pair.id);
    substitute(user, "{predicted_summary}", pair.hypothesis, pair.id);
    return user;
  }
  std::string user{kTranslationUserTemplate};
  substitute(user, "{arabic_transcription}", pair.hypothesis, pair.id);
  substitute(user, "{english_transcription}", pair.reference, pair.id);
  return user;
}

std::string build_judge_request(JudgeKind kind, const EvalPair& pair) {
  nlohmann::ordered_json j;
  j["id"] = pair.id;
  j["system"] = std::string(judge_system_prompt(kind));
  j["user"] = judge_user_prompt(kind, pair);
  return j.dump();
}

}  // namespace audioplan
