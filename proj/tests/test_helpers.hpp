#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "audioplan/codebook.hpp"
#include "audioplan/embedding.hpp"
#include "audioplan/manifest.hpp"
#include "audioplan/rng.hpp"

namespace testutil {

using namespace audioplan;

inline SampleRecord rec(std::string id, Task task,
                        std::optional<std::string> label, Lang lang,
                        double duration = 5.0, std::string ref = "") {
  SampleRecord r;
  r.id = std::move(id);
  r.task = task;
  r.label = std::move(label);
  r.lang = lang;
  r.duration_s = duration;
  r.embedding_ref = ref.empty() ? "emb/" + r.id + ".bin" : std::move(ref);
  return r;
}

struct SynthSpec {
  std::size_t asr = 0;
  std::size_t did = 0;
  std::size_t ser = 0;
  std::size_t tsum = 0;
  std::size_t ssum = 0;
  std::size_t did_label_count = 18;  // cycle through the first N labels
  std::size_t ser_label_count = 7;
};

// Deterministic multi-task manifest; languages alternate, durations vary.
inline Manifest synth_manifest(const SynthSpec& spec) {
  Manifest m;
  m.source_path = "<synthetic>";
  std::size_t serial = 0;
  const auto add = [&](Task task, std::size_t count,
                       const std::vector<std::string>* labels,
                       std::size_t label_count) {
    for (std::size_t i = 0; i < count; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%06zu",
                    std::string(to_string(task)).c_str(), serial++);
      std::optional<std::string> label;
      if (labels) label = (*labels)[i % label_count];
      const Lang lang = (serial % 2 == 0) ? Lang::Ar : Lang::En;
      m.samples.push_back(
          rec(buf, task, label, lang, 1.0 + static_cast<double>(i % 30)));
    }
  };
  add(Task::Asr, spec.asr, nullptr, 0);
  add(Task::Did, spec.did, &dialect_labels(), spec.did_label_count);
  add(Task::Ser, spec.ser, &emotion_labels(), spec.ser_label_count);
  add(Task::Tsum, spec.tsum, nullptr, 0);
  add(Task::Ssum, spec.ssum, nullptr, 0);
  return m;
}

// Codebook with pseudo-random assignments; enough for sampler tests, which
// only consume the assignment map.
inline Codebook synth_codebook(const Manifest& m, std::uint32_t k,
                               std::uint64_t seed) {
  Codebook cb;
  cb.k = k;
  cb.dim = 2;
  cb.seed = seed;
  cb.centroids.assign(static_cast<std::size_t>(k) * 2, 0.0f);
  Rng rng(seed);
  for (const auto& r : m.samples)
    cb.assignment[r.id] = static_cast<std::uint32_t>(rng.below(k));
  return cb;
}

// Gaussian noise from the deterministic Rng (Box-Muller).
inline double gauss(Rng& rng) {
  double u1 = rng.unit();
  while (u1 <= 0.0) u1 = rng.unit();
  const double u2 = rng.unit();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    const auto base = std::filesystem::temp_directory_path();
    path_ = base / ("audioplan_test_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI binary via the shell, capturing exit code and both streams.
inline CliResult run_cli(const std::string& cli_path, const std::string& args,
                         const TempDir& dir) {
  static int invocation = 0;
  const std::string out_path =
      dir.file("cli_out_" + std::to_string(invocation) + ".txt");
  const std::string err_path =
      dir.file("cli_err_" + std::to_string(invocation) + ".txt");
  ++invocation;
  const std::string cmd =
      cli_path + " " + args + " >" + out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  return r;
}

}  // namespace testutil
