#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace audioplan {

// Input content that violates the file format or a dataset/config invariant.
// The CLI maps this to exit code 1; environment failures (missing files,
// unreadable paths) stay plain std::runtime_error and map to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { Asr, Did, Ser, Tsum, Ssum };
enum class Lang { Ar, En };

inline constexpr Task kAllTasks[] = {Task::Asr, Task::Did, Task::Ser,
                                     Task::Tsum, Task::Ssum};

bool is_discriminative(Task t);
std::string_view to_string(Task t);  // lowercase: asr did ser tsum ssum
std::string_view to_string(Lang l);  // ar en
Task task_from_string(std::string_view s);
Lang lang_from_string(std::string_view s);

// Closed label sets for the discriminative tasks.
const std::vector<std::string>& dialect_labels();  // 18-way, incl. MSA
const std::vector<std::string>& emotion_labels();  // 7-way
const std::vector<std::string>& task_label_set(Task t);

inline constexpr double kMaxDurationSeconds = 180.0;

struct SampleRecord {
  std::string id;
  Task task = Task::Asr;
  std::optional<std::string> label;  // present iff task is discriminative
  Lang lang = Lang::Ar;
  double duration_s = 0.0;
  std::string embedding_ref;
  std::optional<std::string> text;

  // Class label for discriminative samples; generative samples group under
  // their language pseudo-label.
  const std::string& group_label() const;
};

bool operator==(const SampleRecord& a, const SampleRecord& b);

struct Manifest {
  std::vector<SampleRecord> samples;  // file order, the determinism anchor
  std::string source_path;

  std::size_t size() const { return samples.size(); }
};

bool operator==(const Manifest& a, const Manifest& b);

// One record per line, keys exactly
//   id, task, label, lang, duration_s, embedding_ref, text
// (label and text may be null). Throws ValidationError with the offending
// line number / record id; std::runtime_error if the file cannot be read.
Manifest load_manifest(const std::string& path);
Manifest parse_manifest(std::istream& in, const std::string& source_name);
void save_manifest(const Manifest& m, const std::string& path);
std::string serialize_record(const SampleRecord& r);

enum class PriorMode { SampleCount, Duration };

// Per-task fractions (PriorDist). Sum to 1 within 1e-12.
std::map<Task, double> task_prior(const Manifest& m,
                                  PriorMode mode = PriorMode::SampleCount);

// Counts over exactly the labels present for a discriminative task.
std::map<std::string, std::size_t> label_distribution(const Manifest& m,
                                                      Task task);

// ceil(fraction * N) samples apportioned across (task, label) strata by
// largest remainder; every non-empty stratum keeps at least one sample when
// the budget allows. Deterministic given seed; output preserves manifest
// order among the selected records.
Manifest stratified_subset(const Manifest& m, double fraction,
                           std::uint64_t seed);

}  // namespace audioplan
