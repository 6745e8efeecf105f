#include "audioplan/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "audioplan/alias_table_data.hpp"

namespace audioplan {

using ordered_json = nlohmann::ordered_json;

namespace {

// Minimal UTF-8 walk; malformed bytes pass through one at a time so no input
// can make normalization throw.
struct Utf8Cursor {
  std::string_view text;
  std::size_t pos = 0;

  bool done() const { return pos >= text.size(); }

  // Returns (codepoint, byte length); length 0 flags an invalid sequence.
  std::pair<char32_t, std::size_t> peek() const {
    const auto b0 = static_cast<unsigned char>(text[pos]);
    if (b0 < 0x80) return {b0, 1};
    std::size_t len = 0;
    char32_t cp = 0;
    if ((b0 & 0xe0) == 0xc0) {
      len = 2;
      cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
      len = 3;
      cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      return {b0, 0};
    }
    if (pos + len > text.size()) return {b0, 0};
    for (std::size_t i = 1; i < len; ++i) {
      const auto b = static_cast<unsigned char>(text[pos + i]);
      if ((b & 0xc0) != 0x80) return {b0, 0};
      cp = (cp << 6) | (b & 0x3f);
    }
    return {cp, len};
  }
};

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

bool is_ascii_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' ||
         cp == U'\f' || cp == U'\v';
}

bool is_arabic_diacritic(char32_t cp) {
  return (cp >= 0x064b && cp <= 0x0652) || cp == 0x0670;
}

bool is_hamza_alef_variant(char32_t cp) {
  return cp == 0x0622 || cp == 0x0623 || cp == 0x0625;
}

}  // namespace

std::string normalize_arabic(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  bool emitted_any = false;
  Utf8Cursor cur{text};
  while (!cur.done()) {
    auto [cp, len] = cur.peek();
    if (len == 0) {  // invalid byte: copy verbatim
      cur.pos += 1;
      if (pending_space && emitted_any) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(cp));
      emitted_any = true;
      continue;
    }
    cur.pos += len;
    if (is_arabic_diacritic(cp)) continue;
    if (is_ascii_space(cp)) {
      pending_space = true;
      continue;
    }
    if (is_hamza_alef_variant(cp)) cp = 0x0627;
    if (pending_space && emitted_any) out.push_back(' ');
    pending_space = false;
    append_utf8(out, cp);
    emitted_any = true;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    std::size_t start = i;
    while (i < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

namespace {

std::string prepare_text(std::string_view text, Lang lang,
                         const TextNormOptions& opts) {
  std::string s;
  if (lang == Lang::Ar) {
    s = normalize_arabic(text);
  } else {
    s.assign(text);
    if (opts.lowercase)
      for (char& c : s) c = static_cast<char>(std::tolower(
          static_cast<unsigned char>(c)));
  }
  if (opts.strip_punctuation) {
    std::string kept;
    kept.reserve(s.size());
    for (char c : s)
      if (!std::ispunct(static_cast<unsigned char>(c))) kept.push_back(c);
    s = std::move(kept);
  }
  return s;
}

enum class EditOp : unsigned char { Match, Substitute, Delete, Insert };

}  // namespace

WerBreakdown wer(std::string_view reference, std::string_view hypothesis,
                 Lang lang, const TextNormOptions& opts) {
  const auto ref = tokenize(prepare_text(reference, lang, opts));
  const auto hyp = tokenize(prepare_text(hypothesis, lang, opts));
  if (ref.empty())
    throw ValidationError("wer: reference is empty after normalization");

  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::vector<std::size_t>> dist(n + 1,
                                             std::vector<std::size_t>(m + 1));
  std::vector<std::vector<EditOp>> op(n + 1, std::vector<EditOp>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) {
    dist[i][0] = i;
    op[i][0] = EditOp::Delete;
  }
  for (std::size_t j = 0; j <= m; ++j) {
    dist[0][j] = j;
    op[0][j] = EditOp::Insert;
  }
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = ref[i - 1] == hyp[j - 1];
      const std::size_t diag = dist[i - 1][j - 1] + (same ? 0 : 1);
      const std::size_t del = dist[i - 1][j] + 1;
      const std::size_t ins = dist[i][j - 1] + 1;
      // Prefer the diagonal on ties so a substitution plus an insertion is
      // reported rather than two unaligned edits.
      if (diag <= del && diag <= ins) {
        dist[i][j] = diag;
        op[i][j] = same ? EditOp::Match : EditOp::Substitute;
      } else if (del <= ins) {
        dist[i][j] = del;
        op[i][j] = EditOp::Delete;
      } else {
        dist[i][j] = ins;
        op[i][j] = EditOp::Insert;
      }
    }
  }

  WerBreakdown out;
  out.ref_tokens = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    switch (op[i][j]) {
      case EditOp::Match:
        --i;
        --j;
        break;
      case EditOp::Substitute:
        ++out.substitutions;
        --i;
        --j;
        break;
      case EditOp::Delete:
        ++out.deletions;
        --i;
        break;
      case EditOp::Insert:
        ++out.insertions;
        --j;
        break;
    }
  }
  out.rate = static_cast<double>(out.substitutions + out.insertions +
                                 out.deletions) /
             static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Label canonicalization
// ---------------------------------------------------------------------------

namespace {

// Case-, whitespace- and punctuation-insensitive key: ASCII letters fold to
// lowercase, ASCII digits stay, other ASCII drops, non-ASCII bytes stay.
std::string alias_key(std::string_view raw) {
  std::string key;
  key.reserve(raw.size());
  for (char c : raw) {
    const auto uc = static_cast<unsigned char>(c);
    if (uc >= 0x80) {
      key.push_back(c);
    } else if (std::isalnum(uc)) {
      key.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  return key;
}

std::string extract_structured_value(std::string_view raw, Task task) {
  const auto first = raw.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos || raw[first] != '{')
    return std::string(raw);
  nlohmann::json j = nlohmann::json::parse(raw, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::string(raw);
  const char* field = task == Task::Did ? "dialect" : "emotion";
  if (j.contains(field) && j[field].is_string())
    return j[field].get<std::string>();
  return std::string(raw);
}

}  // namespace

AliasTable AliasTable::from_tsv(std::string_view tsv,
                                const std::string& source_name) {
  AliasTable table;
  // Canonical names resolve to themselves.
  for (Task t : {Task::Did, Task::Ser})
    for (const auto& canonical : task_label_set(t))
      table.map_[{t, alias_key(canonical)}] = canonical;

  std::istringstream in{std::string(tsv)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::string where =
        source_name + ":" + std::to_string(line_no);
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos
                                            : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw ValidationError(where +
                            ": expected variant<TAB>canonical<TAB>task");
    const std::string variant = line.substr(0, t1);
    const std::string canonical = line.substr(t1 + 1, t2 - t1 - 1);
    const Task task = task_from_string(line.substr(t2 + 1));
    if (!is_discriminative(task))
      throw ValidationError(where + ": aliases only apply to did/ser");
    const auto& allowed = task_label_set(task);
    if (std::find(allowed.begin(), allowed.end(), canonical) == allowed.end())
      throw ValidationError(where + ": canonical '" + canonical +
                            "' is not in the " +
                            std::string(to_string(task)) + " label set");
    table.map_[{task, alias_key(variant)}] = canonical;
  }
  return table;
}

AliasTable AliasTable::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open alias table: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_tsv(buf.str(), path);
}

const AliasTable& AliasTable::builtin() {
  static const AliasTable table =
      from_tsv(kBuiltinAliasTableTsv, "<builtin alias table>");
  return table;
}

std::string AliasTable::canonicalize(std::string_view raw, Task task) const {
  if (!is_discriminative(task))
    throw std::domain_error("canonicalize: task '" +
                            std::string(to_string(task)) + "' is generative");
  const std::string value = extract_structured_value(raw, task);
  const auto it = map_.find({task, alias_key(value)});
  if (it == map_.end()) return std::string(kInvalidLabel);
  return it->second;
}

// ---------------------------------------------------------------------------
// Weighted F1
// ---------------------------------------------------------------------------

MetricReport weighted_f1(
    const std::vector<std::pair<std::string, std::string>>& gold_pred,
    const std::vector<std::string>& label_set) {
  if (gold_pred.empty()) throw ValidationError("weighted_f1: empty input");

  std::map<std::string, std::size_t> tp, fp, fn, support;
  for (const auto& label : label_set) {
    tp[label] = fp[label] = fn[label] = support[label] = 0;
  }
  for (const auto& [gold, pred] : gold_pred) {
    if (!support.count(gold))
      throw ValidationError("weighted_f1: gold label '" + gold +
                            "' not in the label set");
    ++support[gold];
    if (pred == gold) {
      ++tp[gold];
    } else {
      ++fn[gold];
      if (support.count(pred)) ++fp[pred];
      // Predictions outside the set (e.g. INVALID) are wrong for every class
      // but are not a class themselves.
    }
  }

  MetricReport report;
  report.metric = "weighted_f1";
  report.item_count = gold_pred.size();
  double weighted = 0.0;
  const double total = static_cast<double>(gold_pred.size());
  for (const auto& label : label_set) {
    LabelScore score;
    score.label = label;
    score.support = support[label];
    const double p_den = static_cast<double>(tp[label] + fp[label]);
    const double r_den = static_cast<double>(tp[label] + fn[label]);
    score.precision = p_den > 0 ? static_cast<double>(tp[label]) / p_den : 0.0;
    score.recall = r_den > 0 ? static_cast<double>(tp[label]) / r_den : 0.0;
    score.f1 = (score.precision + score.recall) > 0
                   ? 2.0 * score.precision * score.recall /
                         (score.precision + score.recall)
                   : 0.0;
    if (score.support > 0)
      weighted += (static_cast<double>(score.support) / total) * score.f1;
    report.per_label.push_back(std::move(score));
  }
  report.corpus_score = weighted;
  return report;
}

// ---------------------------------------------------------------------------
// ROUGE-L
// ---------------------------------------------------------------------------

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        row[j] = prev[j - 1] + 1;
      else
        row[j] = std::max(prev[j], row[j - 1]);
    }
    std::swap(prev, row);
  }
  return prev[b.size()];
}

double rouge_l(std::string_view reference, std::string_view hypothesis,
               Lang lang, const TextNormOptions& opts) {
  const auto ref = tokenize(prepare_text(reference, lang, opts));
  const auto hyp = tokenize(prepare_text(hypothesis, lang, opts));
  if (ref.empty() || hyp.empty())
    throw ValidationError("rouge_l: empty side after tokenization");
  const std::size_t lcs = lcs_length(ref, hyp);
  if (lcs == 0) return 0.0;
  const double precision =
      static_cast<double>(lcs) / static_cast<double>(hyp.size());
  const double recall =
      static_cast<double>(lcs) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Synthesis quality gate
// ---------------------------------------------------------------------------

std::vector<std::string> quality_gate(std::vector<GateCandidate> candidates,
                                      double threshold) {
  std::map<std::string, const GateCandidate*> best;
  for (const auto& c : candidates) {
    if (c.rate < 0.0)
      throw ValidationError("quality_gate: negative WER for '" + c.id + "'");
    if (!(c.rate < threshold)) continue;  // the gate is strict
    auto [it, inserted] = best.emplace(c.group, &c);
    if (!inserted) {
      const GateCandidate* cur = it->second;
      if (c.rate < cur->rate || (c.rate == cur->rate && c.id < cur->id))
        it->second = &c;
    }
  }
  std::vector<std::string> selected;
  selected.reserve(best.size());
  for (const auto& [group, candidate] : best) selected.push_back(candidate->id);
  return selected;
}

// ---------------------------------------------------------------------------
// Corpus-level evaluation
// ---------------------------------------------------------------------------

std::vector<EvalPair> parse_eval_pairs(std::istream& in,
                                       const std::string& source_name) {
  std::vector<EvalPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where =
        source_name + ":" + std::to_string(line_no);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": malformed record: " + e.what());
    }
    if (!j.is_object()) throw ValidationError(where + ": not an object");
    for (const char* key : {"id", "reference", "hypothesis", "task", "lang"})
      if (!j.contains(key))
        throw ValidationError(where + ": missing key '" + key + "'");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "id" && it.key() != "reference" &&
          it.key() != "hypothesis" && it.key() != "task" &&
          it.key() != "lang")
        throw ValidationError(where + ": unknown key '" + it.key() + "'");
    }
    EvalPair p;
    try {
      p.id = j.at("id").get<std::string>();
      p.reference = j.at("reference").get<std::string>();
      p.hypothesis = j.at("hypothesis").get<std::string>();
      p.task = task_from_string(j.at("task").get<std::string>());
      p.lang = lang_from_string(j.at("lang").get<std::string>());
    } catch (const ValidationError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": bad field type: " + e.what());
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty())
    throw ValidationError(source_name + ": no evaluation pairs");
  return pairs;
}

std::vector<EvalPair> load_eval_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pairs file: " + path);
  return parse_eval_pairs(in, path);
}

MetricReport eval_wer(const std::vector<EvalPair>& pairs,
                      const TextNormOptions& opts) {
  if (pairs.empty()) throw ValidationError("eval_wer: no pairs");
  MetricReport report;
  report.metric = "wer";
  report.item_count = pairs.size();
  for (const auto& p : pairs) {
    const WerBreakdown w = wer(p.reference, p.hypothesis, p.lang, opts);
    report.wer_counts.substitutions += w.substitutions;
    report.wer_counts.insertions += w.insertions;
    report.wer_counts.deletions += w.deletions;
    report.wer_counts.ref_tokens += w.ref_tokens;
    report.per_item.emplace_back(p.id, w.rate);
  }
  report.corpus_score =
      static_cast<double>(report.wer_counts.substitutions +
                          report.wer_counts.insertions +
                          report.wer_counts.deletions) /
      static_cast<double>(report.wer_counts.ref_tokens);
  report.wer_counts.rate = report.corpus_score;
  return report;
}

MetricReport eval_f1(const std::vector<EvalPair>& pairs,
                     const AliasTable& aliases) {
  if (pairs.empty()) throw ValidationError("eval_f1: no pairs");
  const Task task = pairs.front().task;
  if (!is_discriminative(task))
    throw ValidationError("eval_f1: task '" + std::string(to_string(task)) +
                          "' is generative");
  std::vector<std::pair<std::string, std::string>> gold_pred;
  std::vector<std::pair<std::string, double>> per_item;
  for (const auto& p : pairs) {
    if (p.task != task)
      throw ValidationError("eval_f1: mixed tasks in pairs file ('" + p.id +
                            "')");
    const std::string gold = aliases.canonicalize(p.reference, task);
    if (gold == kInvalidLabel)
      throw ValidationError("eval_f1: gold label '" + p.reference +
                            "' for '" + p.id + "' is not canonicalizable");
    const std::string pred = aliases.canonicalize(p.hypothesis, task);
    gold_pred.emplace_back(gold, pred);
    per_item.emplace_back(p.id, gold == pred ? 1.0 : 0.0);
  }
  MetricReport report = weighted_f1(gold_pred, task_label_set(task));
  report.per_item = std::move(per_item);
  return report;
}

MetricReport eval_rouge(const std::vector<EvalPair>& pairs,
                        const TextNormOptions& opts) {
  if (pairs.empty()) throw ValidationError("eval_rouge: no pairs");
  MetricReport report;
  report.metric = "rouge_l";
  report.item_count = pairs.size();
  double sum = 0.0;
  for (const auto& p : pairs) {
    const double f1 = rouge_l(p.reference, p.hypothesis, p.lang, opts);
    sum += f1;
    report.per_item.emplace_back(p.id, f1);
  }
  report.corpus_score = sum / static_cast<double>(pairs.size());
  return report;
}

std::string serialize_report(const MetricReport& report) {
  ordered_json j;
  j["metric"] = report.metric;
  j["corpus_score"] = report.corpus_score;
  j["items"] = report.item_count;
  if (report.metric == "wer") {
    j["substitutions"] = report.wer_counts.substitutions;
    j["insertions"] = report.wer_counts.insertions;
    j["deletions"] = report.wer_counts.deletions;
    j["ref_tokens"] = report.wer_counts.ref_tokens;
  }
  if (!report.per_label.empty()) {
    ordered_json labels = ordered_json::array();
    for (const auto& s : report.per_label) {
      ordered_json lj;
      lj["label"] = s.label;
      lj["support"] = s.support;
      lj["precision"] = s.precision;
      lj["recall"] = s.recall;
      lj["f1"] = s.f1;
      labels.push_back(std::move(lj));
    }
    j["per_label"] = std::move(labels);
  }
  return j.dump();
}

}  // namespace audioplan
