#include "audioplan/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "audioplan/rng.hpp"

namespace audioplan {

using ordered_json = nlohmann::ordered_json;

bool is_discriminative(Task t) { return t == Task::Did || t == Task::Ser; }

std::string_view to_string(Task t) {
  switch (t) {
    case Task::Asr: return "asr";
    case Task::Did: return "did";
    case Task::Ser: return "ser";
    case Task::Tsum: return "tsum";
    case Task::Ssum: return "ssum";
  }
  return "?";
}

std::string_view to_string(Lang l) { return l == Lang::Ar ? "ar" : "en"; }

Task task_from_string(std::string_view s) {
  for (Task t : kAllTasks) {
    if (s == to_string(t)) return t;
  }
  throw ValidationError("unknown task '" + std::string(s) +
                        "' (expected one of asr, did, ser, tsum, ssum)");
}

Lang lang_from_string(std::string_view s) {
  if (s == "ar") return Lang::Ar;
  if (s == "en") return Lang::En;
  throw ValidationError("unknown lang '" + std::string(s) +
                        "' (expected ar or en)");
}

const std::vector<std::string>& dialect_labels() {
  static const std::vector<std::string> labels = {
      "Algeria",   "Egypt",    "Iraq",
      "Jordan",    "Kuwait",   "Lebanon",
      "Libya",     "Mauritania", "Modern Standard Arabic",
      "Morocco",   "Oman",     "Palestine",
      "Qatar",     "Saudi Arabia", "Sudan",
      "Syria",     "United Arab Emirates", "Yemen"};
  return labels;
}

const std::vector<std::string>& emotion_labels() {
  static const std::vector<std::string> labels = {
      "Anger", "Fear", "Happiness", "Neutral",
      "Questioning", "Sadness", "Surprise"};
  return labels;
}

const std::vector<std::string>& task_label_set(Task t) {
  if (t == Task::Did) return dialect_labels();
  if (t == Task::Ser) return emotion_labels();
  throw std::domain_error("task_label_set: task '" + std::string(to_string(t)) +
                          "' is generative and has no label set");
}

const std::string& SampleRecord::group_label() const {
  if (label) return *label;
  static const std::string ar = "ar";
  static const std::string en = "en";
  return lang == Lang::Ar ? ar : en;
}

bool operator==(const SampleRecord& a, const SampleRecord& b) {
  return a.id == b.id && a.task == b.task && a.label == b.label &&
         a.lang == b.lang && a.duration_s == b.duration_s &&
         a.embedding_ref == b.embedding_ref && a.text == b.text;
}

bool operator==(const Manifest& a, const Manifest& b) {
  return a.samples == b.samples;
}

namespace {

const char* const kRecordKeys[] = {"id",         "task", "label",        "lang",
                                   "duration_s", "embedding_ref", "text"};

SampleRecord parse_record(const std::string& line, const std::string& where) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(where + ": malformed record: " + e.what());
  }
  if (!j.is_object()) throw ValidationError(where + ": record is not an object");

  for (const char* key : kRecordKeys) {
    if (!j.contains(key))
      throw ValidationError(where + ": missing key '" + key + "'");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(std::begin(kRecordKeys), std::end(kRecordKeys),
                     [&](const char* k) { return it.key() == k; }) ==
        std::end(kRecordKeys))
      throw ValidationError(where + ": unknown key '" + it.key() + "'");
  }

  SampleRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.task = task_from_string(j.at("task").get<std::string>());
    if (!j.at("label").is_null()) r.label = j.at("label").get<std::string>();
    r.lang = lang_from_string(j.at("lang").get<std::string>());
    r.duration_s = j.at("duration_s").get<double>();
    r.embedding_ref = j.at("embedding_ref").get<std::string>();
    if (!j.at("text").is_null()) r.text = j.at("text").get<std::string>();
  } catch (const ValidationError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + ": bad field type: " + e.what());
  }
  return r;
}

void validate_record(const SampleRecord& r, const std::string& where) {
  if (r.id.empty()) throw ValidationError(where + ": empty id");
  if (!(r.duration_s >= 0.0))
    throw ValidationError(where + ": record '" + r.id +
                          "' has negative duration_s");
  if (r.duration_s > kMaxDurationSeconds) {
    std::ostringstream os;
    os << where << ": record '" << r.id << "' duration_s " << r.duration_s
       << " exceeds the 180 s cap";
    throw ValidationError(os.str());
  }
  if (is_discriminative(r.task)) {
    if (!r.label)
      throw ValidationError(where + ": record '" + r.id + "' task " +
                            std::string(to_string(r.task)) +
                            " requires a label");
    const auto& allowed = task_label_set(r.task);
    if (std::find(allowed.begin(), allowed.end(), *r.label) == allowed.end())
      throw ValidationError(where + ": record '" + r.id + "' has label '" +
                            *r.label + "' outside the " +
                            std::string(to_string(r.task)) + " label set");
  } else if (r.label) {
    throw ValidationError(where + ": record '" + r.id + "' task " +
                          std::string(to_string(r.task)) +
                          " must not carry a label");
  }
}

}  // namespace

Manifest parse_manifest(std::istream& in, const std::string& source_name) {
  Manifest m;
  m.source_path = source_name;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::ostringstream where;
    where << source_name << ":" << line_no;
    SampleRecord r = parse_record(line, where.str());
    validate_record(r, where.str());
    if (!seen.insert(r.id).second)
      throw ValidationError(where.str() + ": duplicate id '" + r.id + "'");
    m.samples.push_back(std::move(r));
  }
  if (m.samples.empty())
    throw ValidationError(source_name + ": manifest is empty");
  return m;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest file: " + path);
  return parse_manifest(in, path);
}

std::string serialize_record(const SampleRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["task"] = to_string(r.task);
  if (r.label)
    j["label"] = *r.label;
  else
    j["label"] = nullptr;
  j["lang"] = to_string(r.lang);
  j["duration_s"] = r.duration_s;
  j["embedding_ref"] = r.embedding_ref;
  if (r.text)
    j["text"] = *r.text;
  else
    j["text"] = nullptr;
  return j.dump();
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest file: " + path);
  for (const auto& r : m.samples) out << serialize_record(r) << "\n";
}

std::map<Task, double> task_prior(const Manifest& m, PriorMode mode) {
  if (m.samples.empty()) throw ValidationError("task_prior: empty manifest");
  std::map<Task, double> weight;
  double total = 0.0;
  for (const auto& r : m.samples) {
    const double w = mode == PriorMode::SampleCount ? 1.0 : r.duration_s;
    weight[r.task] += w;
    total += w;
  }
  if (total <= 0.0)
    throw ValidationError("task_prior: total duration is zero");
  for (auto& [task, w] : weight) w /= total;
  return weight;
}

std::map<std::string, std::size_t> label_distribution(const Manifest& m,
                                                      Task task) {
  if (!is_discriminative(task))
    throw std::domain_error("label_distribution: task '" +
                            std::string(to_string(task)) + "' is generative");
  std::map<std::string, std::size_t> counts;
  for (const auto& r : m.samples) {
    if (r.task == task) ++counts[*r.label];
  }
  return counts;
}

namespace {

// Largest-remainder apportionment of `total` across `weights`; ties go to the
// lower index. Callers order their strata deterministically.
std::vector<std::size_t> largest_remainder(const std::vector<double>& weights,
                                           std::size_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> alloc(weights.size(), 0);
  if (sum <= 0.0 || total == 0) return alloc;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota =
        static_cast<double>(total) * weights[i] / sum;
    alloc[i] = static_cast<std::size_t>(std::floor(quota));
    assigned += alloc[i];
    remainders.emplace_back(quota - std::floor(quota), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i) {
    ++alloc[remainders[i % remainders.size()].second];
    ++assigned;
  }
  return alloc;
}

}  // namespace

Manifest stratified_subset(const Manifest& m, double fraction,
                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValidationError("stratified_subset: fraction must be in (0, 1]");
  const std::size_t n = m.samples.size();
  const std::size_t budget =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));

  // Strata keyed by (task, label-or-pseudo-label), in deterministic order.
  std::map<std::pair<Task, std::string>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = m.samples[i];
    strata[{r.task, r.group_label()}].push_back(i);
  }

  std::vector<std::vector<std::size_t>*> pools;
  std::vector<double> sizes;
  for (auto& [key, members] : strata) {
    pools.push_back(&members);
    sizes.push_back(static_cast<double>(members.size()));
  }

  std::vector<std::size_t> alloc;
  if (budget >= pools.size()) {
    // Guarantee one sample per stratum, then apportion the rest by the
    // remaining stratum mass so proportions survive the floor.
    std::vector<double> extra_weight;
    extra_weight.reserve(sizes.size());
    for (double s : sizes) extra_weight.push_back(s - 1.0);
    alloc = largest_remainder(extra_weight, budget - pools.size());
    for (auto& a : alloc) ++a;
  } else {
    alloc = largest_remainder(sizes, budget);
  }

  Rng rng(derive_seed(seed, kDomainStratify));
  std::vector<std::size_t> selected;
  selected.reserve(budget);
  for (std::size_t s = 0; s < pools.size(); ++s) {
    std::vector<std::size_t> pool = *pools[s];
    rng.shuffle(pool);
    const std::size_t take = std::min(alloc[s], pool.size());
    selected.insert(selected.end(), pool.begin(), pool.begin() + take);
  }
  std::sort(selected.begin(), selected.end());

  Manifest out;
  out.source_path = m.source_path;
  out.samples.reserve(selected.size());
  for (std::size_t i : selected) out.samples.push_back(m.samples[i]);
  return out;
}

}  // namespace audioplan
