#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "audioplan/codebook.hpp"
#include "audioplan/manifest.hpp"
#include "audioplan/rng.hpp"

namespace audioplan {

enum class Regime { Sm, Tpc, Ads, Hybrid };
std::string_view to_string(Regime r);  // SM TPC ADS HYBRID
Regime regime_from_string(std::string_view s);

struct CurriculumStage {
  std::string name;
  std::vector<Task> active_tasks;  // tasks introduced at this stage
  std::uint32_t begin = 0;
  std::uint32_t end = 0;  // half-open [begin, end)
};

// How a discriminative task's per-batch quota is split across its labels:
// equal shares (true balancing) or the labels' prior frequencies.
enum class LabelMode { Balanced, Prior };

struct RegimeConfig {
  Regime regime = Regime::Sm;
  std::uint32_t batch_size = 768;
  std::uint32_t total_steps = 1;
  std::uint64_t seed = 0;
  std::vector<CurriculumStage> stages;  // TPC / HYBRID only
  double replay_fraction = 0.2;
  std::optional<std::uint32_t> switch_step;  // HYBRID; defaults to total/2
  PriorMode prior_mode = PriorMode::SampleCount;
  LabelMode label_mode = LabelMode::Balanced;

  std::uint32_t hybrid_switch_step() const {
    return switch_step ? *switch_step : total_steps / 2;
  }
};

// Default curriculum: acoustic -> paralinguistic -> reasoning over 40/30/30
// of the horizon. Horizons too short for three stages collapse to one.
std::vector<CurriculumStage> default_stages(std::uint32_t horizon);

// Config file is a single JSON object with the RegimeConfig keys; unknown
// keys are an error. parse_regime_config reads the raw keys only, so CLI
// flag overrides can land before finalize_config fills default stages and
// checks the invariants. load_regime_config does both.
RegimeConfig parse_regime_config(const std::string& text);
void finalize_config(RegimeConfig& cfg);
RegimeConfig load_regime_config(const std::string& path);
std::string serialize_regime_config(const RegimeConfig& cfg);
void validate_config(const RegimeConfig& cfg);

const CurriculumStage& stage_for_step(const RegimeConfig& cfg,
                                      std::uint32_t step);

struct PlanItem {
  std::string id;
  Task task = Task::Asr;
  std::string label;  // class label or language pseudo-label
  std::optional<std::uint32_t> cluster;
};

struct PlanBatch {
  std::uint32_t step = 0;
  Regime regime = Regime::Sm;  // semantics that produced this batch
  std::string stage;           // empty outside curriculum phases
  std::vector<PlanItem> items;
  std::optional<double> lr;  // appended by the CLI under --emit-lr
};

struct BatchPlan {
  std::vector<PlanBatch> batches;
};

// (task, label-or-pseudo-label); map ordering = task enum order then label,
// which is also the within-batch emission order.
using GroupKey = std::pair<Task, std::string>;

// Per-batch quotas: batch_size apportioned across tasks by PriorDist
// (largest remainder), then split across each task's labels. Sums to
// batch_size exactly; throws when any group would get zero.
std::map<GroupKey, std::uint32_t> ads_quotas(
    const Manifest& m, std::uint32_t batch_size, PriorMode prior_mode,
    LabelMode label_mode = LabelMode::Balanced);

// Round-robin traversal over one group's non-empty clusters in ascending
// cluster-id order. Samples inside a cluster are consumed in seeded-shuffled
// order; once every pool is empty all pools reshuffle (a new local epoch)
// and the rotation continues, which is what repeats minority samples.
class RoundRobinPicker {
 public:
  // cluster_pools: (cluster id, member indices); need not be sorted.
  RoundRobinPicker(
      std::vector<std::pair<std::uint32_t, std::vector<std::size_t>>>
          cluster_pools,
      std::uint64_t seed);

  // Returns (manifest sample index, cluster id).
  std::pair<std::size_t, std::uint32_t> pick();

 private:
  struct Pool {
    std::uint32_t cluster_id;
    std::vector<std::size_t> members;
    std::size_t pos = 0;
  };
  void start_epoch();

  std::vector<Pool> pools_;
  std::size_t cursor_;
  std::size_t remaining_ = 0;
  Rng rng_;
};

BatchPlan plan_sm(const Manifest& m, const RegimeConfig& cfg);
BatchPlan plan_tpc(const Manifest& m, const RegimeConfig& cfg);
BatchPlan plan_ads(const Manifest& m, const Codebook& cb,
                   const RegimeConfig& cfg);
BatchPlan plan_hybrid(const Manifest& m, const Codebook& cb,
                      const RegimeConfig& cfg);
// Dispatch on cfg.regime; codebook may be null for SM/TPC.
BatchPlan plan_batches(const Manifest& m, const Codebook* cb,
                       const RegimeConfig& cfg);

// One JSON object per line: {step, regime, stage, items:[{id, task, label,
// cluster}]} (+ lr when present). parse_plan skips '#' comment lines.
std::string serialize_plan(const BatchPlan& plan);
BatchPlan parse_plan(std::istream& in, const std::string& source_name);
BatchPlan load_plan(const std::string& path);

struct PlanViolation {
  std::uint32_t step = 0;
  std::string what;
};

// Re-checks every sampler invariant on an emitted plan: batch size, step
// contiguity, regime tags, stage containment, ADS quotas and label coverage,
// cluster annotations, and round-robin traversal discipline. Returns the
// first violation, or nullopt when the plan is clean.
std::optional<PlanViolation> validate_plan(const BatchPlan& plan,
                                           const Manifest& m,
                                           const RegimeConfig& cfg,
                                           const Codebook* cb);

}  // namespace audioplan
