#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "audioplan/manifest.hpp"

namespace audioplan {

// Unifies Alef variants with Hamza (U+0622/0623/0625 -> U+0627), strips the
// Arabic diacritics U+064B..U+0652 and U+0670, collapses whitespace runs and
// trims. Everything else passes through untouched.
std::string normalize_arabic(std::string_view text);

struct TextNormOptions {
  bool lowercase = true;          // ASCII case folding, English inputs
  bool strip_punctuation = false;  // ASCII punctuation removal
};

std::vector<std::string> tokenize(std::string_view text);

struct WerBreakdown {
  double rate = 0.0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_tokens = 0;
};

// Whitespace tokens, unit-cost edit distance. Arabic inputs are normalized
// first; English inputs are lowercased per options. rate may exceed 1.
WerBreakdown wer(std::string_view reference, std::string_view hypothesis,
                 Lang lang, const TextNormOptions& opts = {});

inline constexpr std::string_view kInvalidLabel = "INVALID";

// variant<TAB>canonical<TAB>task lines; '#' lines are comments. Canonical
// names must belong to the task's label set. Lookups are case-, whitespace-
// and punctuation-insensitive.
class AliasTable {
 public:
  static const AliasTable& builtin();
  static AliasTable from_tsv(std::string_view tsv,
                             const std::string& source_name);
  static AliasTable from_file(const std::string& path);

  // Extracts the value from {"dialect":...}/{"emotion":...} shaped outputs,
  // then resolves through the table; unmatched values become INVALID.
  std::string canonicalize(std::string_view raw, Task task) const;

  std::size_t size() const { return map_.size(); }

 private:
  std::map<std::pair<Task, std::string>, std::string> map_;
};

struct LabelScore {
  std::string label;
  std::size_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricReport {
  std::string metric;
  double corpus_score = 0.0;
  std::size_t item_count = 0;
  WerBreakdown wer_counts;             // wer only
  std::vector<LabelScore> per_label;   // f1 only
  std::vector<std::pair<std::string, double>> per_item;
};

// Per-class F1 from the confusion matrix, averaged with weights equal to
// gold-class support; zero-support classes are excluded. Predictions outside
// the label set (e.g. INVALID) count against their gold class everywhere.
MetricReport weighted_f1(
    const std::vector<std::pair<std::string, std::string>>& gold_pred,
    const std::vector<std::string>& label_set);

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b);

// ROUGE-L F1 over whitespace tokens: P = LCS/|hyp|, R = LCS/|ref|.
double rouge_l(std::string_view reference, std::string_view hypothesis,
               Lang lang = Lang::En, const TextNormOptions& opts = {});

struct GateCandidate {
  std::string id;
  std::string group;  // (transcription, summary) pair key
  double rate = 0.0;
};

// Keeps the single lowest-WER candidate strictly below threshold per group;
// ties go to the lowest id. Groups whose best candidate misses the threshold
// contribute nothing.
std::vector<std::string> quality_gate(std::vector<GateCandidate> candidates,
                                      double threshold = 0.15);

struct EvalPair {
  std::string id;
  std::string reference;
  std::string hypothesis;
  Task task = Task::Asr;
  Lang lang = Lang::Ar;
};

std::vector<EvalPair> parse_eval_pairs(std::istream& in,
                                       const std::string& source_name);
std::vector<EvalPair> load_eval_pairs(const std::string& path);

MetricReport eval_wer(const std::vector<EvalPair>& pairs,
                      const TextNormOptions& opts = {});
MetricReport eval_f1(const std::vector<EvalPair>& pairs,
                     const AliasTable& aliases = AliasTable::builtin());
MetricReport eval_rouge(const std::vector<EvalPair>& pairs,
                        const TextNormOptions& opts = {});

std::string serialize_report(const MetricReport& report);

}  // namespace audioplan
