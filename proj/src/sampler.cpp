#include "audioplan/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace audioplan {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::Sm: return "SM";
    case Regime::Tpc: return "TPC";
    case Regime::Ads: return "ADS";
    case Regime::Hybrid: return "HYBRID";
  }
  return "?";
}

Regime regime_from_string(std::string_view s) {
  if (s == "SM") return Regime::Sm;
  if (s == "TPC") return Regime::Tpc;
  if (s == "ADS") return Regime::Ads;
  if (s == "HYBRID") return Regime::Hybrid;
  throw ValidationError("unknown regime '" + std::string(s) +
                        "' (expected SM, TPC, ADS or HYBRID)");
}

std::vector<CurriculumStage> default_stages(std::uint32_t horizon) {
  std::vector<CurriculumStage> stages;
  if (horizon == 0) return stages;
  if (horizon < 3) {
    stages.push_back({"combined",
                      {Task::Asr, Task::Did, Task::Ser, Task::Tsum, Task::Ssum},
                      0, horizon});
    return stages;
  }
  const auto e1 = static_cast<std::uint32_t>(horizon * 2ull / 5ull);
  const auto e2 = static_cast<std::uint32_t>(horizon * 7ull / 10ull);
  stages.push_back({"acoustic", {Task::Asr}, 0, e1});
  stages.push_back({"paralinguistic", {Task::Did, Task::Ser}, e1, e2});
  stages.push_back({"reasoning", {Task::Tsum, Task::Ssum}, e2, horizon});
  return stages;
}

namespace {

std::uint32_t stage_horizon(const RegimeConfig& cfg) {
  return cfg.regime == Regime::Hybrid ? cfg.hybrid_switch_step()
                                      : cfg.total_steps;
}

void check_keys(const ordered_json& j, std::initializer_list<const char*> keys,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) {
          return it.key() == k;
        }) == keys.end())
      throw ValidationError(where + ": unknown key '" + it.key() + "'");
  }
}

CurriculumStage parse_stage(const ordered_json& j, std::size_t idx) {
  const std::string where = "stages[" + std::to_string(idx) + "]";
  if (!j.is_object()) throw ValidationError(where + ": not an object");
  check_keys(j, {"name", "active_tasks", "step_range"}, where);
  CurriculumStage s;
  try {
    s.name = j.at("name").get<std::string>();
    for (const auto& t : j.at("active_tasks"))
      s.active_tasks.push_back(task_from_string(t.get<std::string>()));
    const auto& range = j.at("step_range");
    if (!range.is_array() || range.size() != 2)
      throw ValidationError(where + ": step_range must be [start, end]");
    s.begin = range[0].get<std::uint32_t>();
    s.end = range[1].get<std::uint32_t>();
  } catch (const ValidationError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return s;
}

}  // namespace

RegimeConfig parse_regime_config(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: not a JSON object");
  check_keys(j,
             {"regime", "batch_size", "total_steps", "seed", "stages",
              "replay_fraction", "switch_step", "prior_mode", "label_mode"},
             "config");

  RegimeConfig cfg;
  try {
    if (!j.contains("regime"))
      throw ValidationError("config: missing key 'regime'");
    cfg.regime = regime_from_string(j.at("regime").get<std::string>());
    if (!j.contains("batch_size"))
      throw ValidationError("config: missing key 'batch_size'");
    cfg.batch_size = j.at("batch_size").get<std::uint32_t>();
    if (!j.contains("total_steps"))
      throw ValidationError("config: missing key 'total_steps'");
    cfg.total_steps = j.at("total_steps").get<std::uint32_t>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("replay_fraction"))
      cfg.replay_fraction = j.at("replay_fraction").get<double>();
    if (j.contains("switch_step"))
      cfg.switch_step = j.at("switch_step").get<std::uint32_t>();
    if (j.contains("prior_mode")) {
      const auto mode = j.at("prior_mode").get<std::string>();
      if (mode == "sample_count")
        cfg.prior_mode = PriorMode::SampleCount;
      else if (mode == "duration")
        cfg.prior_mode = PriorMode::Duration;
      else
        throw ValidationError("config: prior_mode must be sample_count or "
                              "duration, got '" + mode + "'");
    }
    if (j.contains("label_mode")) {
      const auto mode = j.at("label_mode").get<std::string>();
      if (mode == "balanced")
        cfg.label_mode = LabelMode::Balanced;
      else if (mode == "prior")
        cfg.label_mode = LabelMode::Prior;
      else
        throw ValidationError(
            "config: label_mode must be balanced or prior, got '" + mode +
            "'");
    }
    if (j.contains("stages")) {
      const auto& stages = j.at("stages");
      if (!stages.is_array())
        throw ValidationError("config: stages must be an array");
      for (std::size_t i = 0; i < stages.size(); ++i)
        cfg.stages.push_back(parse_stage(stages[i], i));
    }
  } catch (const ValidationError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: bad field type: ") + e.what());
  }
  return cfg;
}

void finalize_config(RegimeConfig& cfg) {
  if (cfg.stages.empty() &&
      (cfg.regime == Regime::Tpc || cfg.regime == Regime::Hybrid))
    cfg.stages = default_stages(stage_horizon(cfg));
  validate_config(cfg);
}

RegimeConfig load_regime_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  RegimeConfig cfg = parse_regime_config(buf.str());
  finalize_config(cfg);
  return cfg;
}

std::string serialize_regime_config(const RegimeConfig& cfg) {
  ordered_json j;
  j["regime"] = std::string(to_string(cfg.regime));
  j["batch_size"] = cfg.batch_size;
  j["total_steps"] = cfg.total_steps;
  j["seed"] = cfg.seed;
  ordered_json stages = ordered_json::array();
  for (const auto& s : cfg.stages) {
    ordered_json sj;
    sj["name"] = s.name;
    ordered_json tasks = ordered_json::array();
    for (Task t : s.active_tasks) tasks.push_back(std::string(to_string(t)));
    sj["active_tasks"] = tasks;
    sj["step_range"] = {s.begin, s.end};
    stages.push_back(sj);
  }
  j["stages"] = stages;
  j["replay_fraction"] = cfg.replay_fraction;
  if (cfg.regime == Regime::Hybrid)
    j["switch_step"] = cfg.hybrid_switch_step();
  j["prior_mode"] =
      cfg.prior_mode == PriorMode::SampleCount ? "sample_count" : "duration";
  j["label_mode"] = cfg.label_mode == LabelMode::Balanced ? "balanced"
                                                          : "prior";
  return j.dump();
}

void validate_config(const RegimeConfig& cfg) {
  if (cfg.batch_size == 0)
    throw ValidationError("config: batch_size must be >= 1");
  if (cfg.total_steps == 0)
    throw ValidationError("config: total_steps must be >= 1");
  if (!(cfg.replay_fraction >= 0.0 && cfg.replay_fraction < 1.0))
    throw ValidationError("config: replay_fraction must be in [0, 1)");

  const bool uses_stages =
      cfg.regime == Regime::Tpc || cfg.regime == Regime::Hybrid;
  if (!uses_stages) {
    if (!cfg.stages.empty())
      throw ValidationError("config: stages are only valid for TPC/HYBRID");
    if (cfg.switch_step && cfg.regime != Regime::Hybrid)
      throw ValidationError("config: switch_step is only valid for HYBRID");
    return;
  }

  if (cfg.regime == Regime::Hybrid && cfg.hybrid_switch_step() > cfg.total_steps)
    throw ValidationError("config: switch_step exceeds total_steps");

  const std::uint32_t horizon = stage_horizon(cfg);
  if (horizon == 0) {
    if (!cfg.stages.empty())
      throw ValidationError(
          "config: stages given but the curriculum horizon is empty");
    return;
  }
  if (cfg.stages.empty())
    throw ValidationError("config: TPC/HYBRID needs at least one stage");

  std::uint32_t expect_begin = 0;
  std::set<Task> introduced;
  for (const auto& s : cfg.stages) {
    if (s.active_tasks.empty())
      throw ValidationError("config: stage '" + s.name +
                            "' has no active tasks");
    if (s.begin != expect_begin || s.begin >= s.end)
      throw ValidationError(
          "config: stage step ranges must be contiguous half-open intervals "
          "partitioning the horizon; stage '" + s.name + "' breaks at step " +
          std::to_string(s.begin));
    expect_begin = s.end;
    for (Task t : s.active_tasks) {
      if (!introduced.insert(t).second)
        throw ValidationError("config: task '" +
                              std::string(to_string(t)) +
                              "' introduced by more than one stage");
    }
  }
  if (expect_begin != horizon)
    throw ValidationError("config: stages cover [0, " +
                          std::to_string(expect_begin) +
                          ") but the horizon is " + std::to_string(horizon));
}

const CurriculumStage& stage_for_step(const RegimeConfig& cfg,
                                      std::uint32_t step) {
  for (const auto& s : cfg.stages) {
    if (step >= s.begin && step < s.end) return s;
  }
  throw ValidationError("stage_for_step: step " + std::to_string(step) +
                        " is outside the stage horizon");
}

// ---------------------------------------------------------------------------
// SM
// ---------------------------------------------------------------------------

BatchPlan plan_sm(const Manifest& m, const RegimeConfig& cfg) {
  if (m.samples.empty()) throw ValidationError("plan_sm: empty manifest");
  BatchPlan plan;
  plan.batches.reserve(cfg.total_steps);
  for (std::uint32_t step = 0; step < cfg.total_steps; ++step) {
    Rng rng(derive_seed(cfg.seed, kDomainBatch, step));
    PlanBatch batch;
    batch.step = step;
    batch.regime = Regime::Sm;
    batch.items.reserve(cfg.batch_size);
    for (std::uint32_t i = 0; i < cfg.batch_size; ++i) {
      const auto& r = m.samples[rng.below(m.samples.size())];
      batch.items.push_back({r.id, r.task, r.group_label(), std::nullopt});
    }
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// TPC
// ---------------------------------------------------------------------------

namespace {

struct StagePools {
  // Indexed like cfg.stages: samples of the stage's newly active tasks, and
  // the pooled samples of every earlier stage's tasks for replay.
  std::vector<std::vector<std::size_t>> current;
  std::vector<std::vector<std::size_t>> replay;
};

StagePools build_stage_pools(const Manifest& m, const RegimeConfig& cfg) {
  StagePools pools;
  pools.current.resize(cfg.stages.size());
  pools.replay.resize(cfg.stages.size());
  std::set<Task> earlier;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& stage = cfg.stages[s];
    const std::set<Task> active(stage.active_tasks.begin(),
                                stage.active_tasks.end());
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
      if (active.count(m.samples[i].task)) pools.current[s].push_back(i);
      if (earlier.count(m.samples[i].task)) pools.replay[s].push_back(i);
    }
    if (pools.current[s].empty())
      throw ValidationError("plan_tpc: stage '" + stage.name +
                            "' has no samples for its active tasks");
    earlier.insert(active.begin(), active.end());
  }
  return pools;
}

PlanBatch emit_tpc_batch(const Manifest& m, const RegimeConfig& cfg,
                         const StagePools& pools, std::uint32_t step) {
  const auto& stage = stage_for_step(cfg, step);
  const std::size_t stage_idx =
      static_cast<std::size_t>(&stage - cfg.stages.data());
  const auto& current = pools.current[stage_idx];
  const auto& replay = pools.replay[stage_idx];

  Rng rng(derive_seed(cfg.seed, kDomainBatch, step));
  PlanBatch batch;
  batch.step = step;
  batch.regime = Regime::Tpc;
  batch.stage = stage.name;
  batch.items.reserve(cfg.batch_size);
  for (std::uint32_t i = 0; i < cfg.batch_size; ++i) {
    const bool use_replay =
        !replay.empty() && rng.bernoulli(cfg.replay_fraction);
    const auto& pool = use_replay ? replay : current;
    const auto& r = m.samples[pool[rng.below(pool.size())]];
    batch.items.push_back({r.id, r.task, r.group_label(), std::nullopt});
  }
  return batch;
}

void check_tpc_task_coverage(const Manifest& m, const RegimeConfig& cfg) {
  std::set<Task> introduced;
  for (const auto& s : cfg.stages)
    introduced.insert(s.active_tasks.begin(), s.active_tasks.end());
  for (const auto& r : m.samples) {
    if (!introduced.count(r.task))
      throw ValidationError("plan_tpc: manifest task '" +
                            std::string(to_string(r.task)) +
                            "' is never introduced by any stage");
  }
}

}  // namespace

BatchPlan plan_tpc(const Manifest& m, const RegimeConfig& cfg) {
  if (m.samples.empty()) throw ValidationError("plan_tpc: empty manifest");
  check_tpc_task_coverage(m, cfg);
  const StagePools pools = build_stage_pools(m, cfg);
  BatchPlan plan;
  plan.batches.reserve(cfg.total_steps);
  for (std::uint32_t step = 0; step < cfg.total_steps; ++step)
    plan.batches.push_back(emit_tpc_batch(m, cfg, pools, step));
  return plan;
}

// ---------------------------------------------------------------------------
// ADS
// ---------------------------------------------------------------------------

namespace {

std::map<GroupKey, std::vector<std::size_t>> build_groups(const Manifest& m) {
  std::map<GroupKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto& r = m.samples[i];
    groups[{r.task, r.group_label()}].push_back(i);
  }
  return groups;
}

// Largest-remainder apportionment; ties by input order.
std::vector<std::uint32_t> apportion(const std::vector<double>& weights,
                                     std::uint32_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::uint32_t> alloc(weights.size(), 0);
  if (sum <= 0.0 || total == 0) return alloc;
  std::vector<std::pair<double, std::size_t>> rem;
  std::uint32_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = static_cast<double>(total) * weights[i] / sum;
    alloc[i] = static_cast<std::uint32_t>(std::floor(quota));
    assigned += alloc[i];
    rem.emplace_back(quota - std::floor(quota), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (std::size_t i = 0; assigned < total; ++i) {
    ++alloc[rem[i % rem.size()].second];
    ++assigned;
  }
  return alloc;
}

}  // namespace

std::map<GroupKey, std::uint32_t> ads_quotas(const Manifest& m,
                                             std::uint32_t batch_size,
                                             PriorMode prior_mode,
                                             LabelMode label_mode) {
  const auto groups = build_groups(m);
  if (batch_size < groups.size())
    throw ValidationError(
        "ads_quotas: batch_size " + std::to_string(batch_size) +
        " is smaller than the " + std::to_string(groups.size()) +
        " (task,label) groups; every group needs at least one slot");

  const auto weight_of = [&](std::size_t sample_idx) {
    return prior_mode == PriorMode::SampleCount
               ? 1.0
               : m.samples[sample_idx].duration_s;
  };

  // Task order is the enum order; labels sort lexicographically inside a
  // task, matching the GroupKey map order used at emission time.
  std::vector<Task> tasks;
  std::vector<double> task_weight;
  std::map<Task, std::vector<std::pair<std::string, double>>> labels_by_task;
  for (const auto& [key, members] : groups) {
    double w = 0.0;
    for (std::size_t idx : members) w += weight_of(idx);
    if (tasks.empty() || tasks.back() != key.first) {
      tasks.push_back(key.first);
      task_weight.push_back(0.0);
    }
    task_weight.back() += w;
    labels_by_task[key.first].emplace_back(key.second, w);
  }

  const std::vector<std::uint32_t> per_task =
      apportion(task_weight, batch_size);

  std::map<GroupKey, std::uint32_t> quotas;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& labels = labels_by_task[tasks[t]];
    std::vector<double> weights;
    weights.reserve(labels.size());
    const bool balanced =
        is_discriminative(tasks[t]) && label_mode == LabelMode::Balanced;
    for (const auto& [label, w] : labels)
      weights.push_back(balanced ? 1.0 : w);
    const auto per_label = apportion(weights, per_task[t]);
    for (std::size_t l = 0; l < labels.size(); ++l)
      quotas[{tasks[t], labels[l].first}] = per_label[l];
  }

  for (const auto& [key, quota] : quotas) {
    if (quota == 0)
      throw ValidationError(
          "ads_quotas: batch_size " + std::to_string(batch_size) +
          " leaves group (" + std::string(to_string(key.first)) + ", " +
          key.second + ") with a zero quota; raise batch_size");
  }
  return quotas;
}

RoundRobinPicker::RoundRobinPicker(
    std::vector<std::pair<std::uint32_t, std::vector<std::size_t>>>
        cluster_pools,
    std::uint64_t seed)
    : rng_(seed) {
  for (auto& [cluster_id, members] : cluster_pools) {
    if (members.empty()) continue;
    pools_.push_back({cluster_id, std::move(members), 0});
  }
  if (pools_.empty())
    throw ValidationError("round_robin_pick: empty (task,label) group");
  std::sort(pools_.begin(), pools_.end(),
            [](const Pool& a, const Pool& b) {
              return a.cluster_id < b.cluster_id;
            });
  cursor_ = pools_.size() - 1;  // first pick lands on the lowest cluster
  start_epoch();
}

void RoundRobinPicker::start_epoch() {
  for (auto& pool : pools_) {
    rng_.shuffle(pool.members);
    pool.pos = 0;
    remaining_ += pool.members.size();
  }
}

std::pair<std::size_t, std::uint32_t> RoundRobinPicker::pick() {
  if (remaining_ == 0) start_epoch();
  for (;;) {
    cursor_ = (cursor_ + 1) % pools_.size();
    Pool& pool = pools_[cursor_];
    if (pool.pos < pool.members.size()) {
      --remaining_;
      return {pool.members[pool.pos++], pool.cluster_id};
    }
  }
}

namespace {

// Holds the quota table and one round-robin stream per (task,label) group;
// state persists across every batch of the ADS phase.
class AdsPlanner {
 public:
  AdsPlanner(const Manifest& m, const Codebook& cb, const RegimeConfig& cfg)
      : manifest_(m),
        quotas_(ads_quotas(m, cfg.batch_size, cfg.prior_mode,
                           cfg.label_mode)) {
    for (const auto& [key, members] : build_groups(m)) {
      std::map<std::uint32_t, std::vector<std::size_t>> by_cluster;
      for (std::size_t idx : members) {
        const auto it = cb.assignment.find(m.samples[idx].id);
        if (it == cb.assignment.end())
          throw ValidationError("plan_ads: sample '" + m.samples[idx].id +
                                "' has no codebook assignment");
        by_cluster[it->second].push_back(idx);
      }
      std::vector<std::pair<std::uint32_t, std::vector<std::size_t>>> pools(
          by_cluster.begin(), by_cluster.end());
      const std::string tag =
          std::string(to_string(key.first)) + "\x1f" + key.second;
      pickers_.emplace(key, RoundRobinPicker(std::move(pools),
                                             derive_seed(cfg.seed,
                                                         kDomainRoundRobin,
                                                         fnv1a64(tag))));
    }
  }

  PlanBatch emit_batch(std::uint32_t step) {
    PlanBatch batch;
    batch.step = step;
    batch.regime = Regime::Ads;
    for (auto& [key, picker] : pickers_) {
      const std::uint32_t quota = quotas_.at(key);
      for (std::uint32_t q = 0; q < quota; ++q) {
        const auto [idx, cluster] = picker.pick();
        const auto& r = manifest_.samples[idx];
        batch.items.push_back({r.id, r.task, key.second, cluster});
      }
    }
    return batch;
  }

 private:
  const Manifest& manifest_;
  std::map<GroupKey, std::uint32_t> quotas_;
  std::map<GroupKey, RoundRobinPicker> pickers_;
};

}  // namespace

BatchPlan plan_ads(const Manifest& m, const Codebook& cb,
                   const RegimeConfig& cfg) {
  if (m.samples.empty()) throw ValidationError("plan_ads: empty manifest");
  AdsPlanner planner(m, cb, cfg);
  BatchPlan plan;
  plan.batches.reserve(cfg.total_steps);
  for (std::uint32_t step = 0; step < cfg.total_steps; ++step)
    plan.batches.push_back(planner.emit_batch(step));
  return plan;
}

BatchPlan plan_hybrid(const Manifest& m, const Codebook& cb,
                      const RegimeConfig& cfg) {
  if (m.samples.empty()) throw ValidationError("plan_hybrid: empty manifest");
  const std::uint32_t switch_step = cfg.hybrid_switch_step();
  BatchPlan plan;
  plan.batches.reserve(cfg.total_steps);
  if (switch_step > 0) {
    const StagePools pools = build_stage_pools(m, cfg);
    for (std::uint32_t step = 0; step < switch_step; ++step)
      plan.batches.push_back(emit_tpc_batch(m, cfg, pools, step));
  }
  if (switch_step < cfg.total_steps) {
    AdsPlanner planner(m, cb, cfg);
    for (std::uint32_t step = switch_step; step < cfg.total_steps; ++step)
      plan.batches.push_back(planner.emit_batch(step));
  }
  return plan;
}

BatchPlan plan_batches(const Manifest& m, const Codebook* cb,
                       const RegimeConfig& cfg) {
  validate_config(cfg);
  switch (cfg.regime) {
    case Regime::Sm:
      return plan_sm(m, cfg);
    case Regime::Tpc:
      return plan_tpc(m, cfg);
    case Regime::Ads:
      if (!cb)
        throw std::runtime_error("plan_batches: ADS requires a codebook");
      return plan_ads(m, *cb, cfg);
    case Regime::Hybrid:
      if (!cb)
        throw std::runtime_error("plan_batches: HYBRID requires a codebook");
      return plan_hybrid(m, *cb, cfg);
  }
  throw std::logic_error("plan_batches: unreachable");
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string serialize_plan(const BatchPlan& plan) {
  std::string out;
  for (const auto& batch : plan.batches) {
    ordered_json j;
    j["step"] = batch.step;
    j["regime"] = std::string(to_string(batch.regime));
    if (batch.stage.empty())
      j["stage"] = nullptr;
    else
      j["stage"] = batch.stage;
    ordered_json items = ordered_json::array();
    for (const auto& item : batch.items) {
      ordered_json ij;
      ij["id"] = item.id;
      ij["task"] = std::string(to_string(item.task));
      ij["label"] = item.label;
      if (item.cluster)
        ij["cluster"] = *item.cluster;
      else
        ij["cluster"] = nullptr;
      items.push_back(std::move(ij));
    }
    j["items"] = std::move(items);
    if (batch.lr) j["lr"] = *batch.lr;
    out += j.dump();
    out += "\n";
  }
  return out;
}

BatchPlan parse_plan(std::istream& in, const std::string& source_name) {
  BatchPlan plan;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::string where =
        source_name + ":" + std::to_string(line_no);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": malformed batch line: " + e.what());
    }
    if (!j.is_object()) throw ValidationError(where + ": not an object");
    check_keys(j, {"step", "regime", "stage", "items", "lr"}, where);
    PlanBatch batch;
    try {
      batch.step = j.at("step").get<std::uint32_t>();
      batch.regime = regime_from_string(j.at("regime").get<std::string>());
      if (!j.at("stage").is_null())
        batch.stage = j.at("stage").get<std::string>();
      if (j.contains("lr")) batch.lr = j.at("lr").get<double>();
      for (const auto& ij : j.at("items")) {
        check_keys(ij, {"id", "task", "label", "cluster"}, where);
        PlanItem item;
        item.id = ij.at("id").get<std::string>();
        item.task = task_from_string(ij.at("task").get<std::string>());
        item.label = ij.at("label").get<std::string>();
        if (!ij.at("cluster").is_null())
          item.cluster = ij.at("cluster").get<std::uint32_t>();
        batch.items.push_back(std::move(item));
      }
    } catch (const ValidationError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": bad field: " + e.what());
    }
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

BatchPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open plan file: " + path);
  return parse_plan(in, path);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

// Replays the rotation discipline of one group's emitted pick sequence:
// clusters must be visited in ascending cyclic order, a cluster is skipped
// only when its per-epoch pool is exhausted, samples may not repeat within
// an epoch, and all pools refill together.
class RoundRobinChecker {
 public:
  explicit RoundRobinChecker(
      const std::map<std::uint32_t, std::vector<std::string>>& cluster_members)
  {
    for (const auto& [cluster, members] : cluster_members)
      pools_.push_back({cluster,
                        std::set<std::string>(members.begin(), members.end()),
                        {}});
    cursor_ = pools_.size() - 1;
    for (auto& p : pools_) p.remaining = p.members;
  }

  // Returns an error description, or empty when the pick is legal.
  std::string advance(const std::string& id, std::uint32_t cluster) {
    if (total_remaining() == 0)
      for (auto& p : pools_) p.remaining = p.members;
    std::size_t next = cursor_;
    for (std::size_t hops = 0; hops < pools_.size(); ++hops) {
      next = (next + 1) % pools_.size();
      if (!pools_[next].remaining.empty()) break;
    }
    const auto& expected = pools_[next];
    if (expected.cluster != cluster)
      return "expected cluster " + std::to_string(expected.cluster) +
             " under round-robin traversal, saw cluster " +
             std::to_string(cluster);
    if (!pools_[next].remaining.count(id))
      return "sample '" + id + "' repeated within a round-robin epoch or "
             "does not belong to cluster " + std::to_string(cluster);
    pools_[next].remaining.erase(id);
    cursor_ = next;
    return {};
  }

 private:
  struct Pool {
    std::uint32_t cluster;
    std::set<std::string> members;
    std::set<std::string> remaining;
  };
  std::size_t total_remaining() const {
    std::size_t n = 0;
    for (const auto& p : pools_) n += p.remaining.size();
    return n;
  }
  std::vector<Pool> pools_;
  std::size_t cursor_;
};

}  // namespace

std::optional<PlanViolation> validate_plan(const BatchPlan& plan,
                                           const Manifest& m,
                                           const RegimeConfig& cfg,
                                           const Codebook* cb) {
  const auto fail = [](std::uint32_t step,
                       std::string what) -> std::optional<PlanViolation> {
    return PlanViolation{step, std::move(what)};
  };

  if (plan.batches.size() != cfg.total_steps)
    return fail(0, "plan holds " + std::to_string(plan.batches.size()) +
                       " batches but config expects " +
                       std::to_string(cfg.total_steps));

  std::unordered_map<std::string, const SampleRecord*> by_id;
  for (const auto& r : m.samples) by_id[r.id] = &r;

  const std::uint32_t switch_step =
      cfg.regime == Regime::Hybrid ? cfg.hybrid_switch_step() : 0;

  // Expected per-group quotas and round-robin checkers for ADS phases.
  std::map<GroupKey, std::uint32_t> quotas;
  std::map<GroupKey, RoundRobinChecker> checkers;
  const bool has_ads_phase =
      cfg.regime == Regime::Ads ||
      (cfg.regime == Regime::Hybrid && switch_step < cfg.total_steps);
  if (has_ads_phase) {
    if (!cb)
      return fail(0, "ADS validation requires the codebook");
    quotas = ads_quotas(m, cfg.batch_size, cfg.prior_mode, cfg.label_mode);
    std::map<GroupKey, std::map<std::uint32_t, std::vector<std::string>>>
        group_clusters;
    for (const auto& r : m.samples) {
      const auto it = cb->assignment.find(r.id);
      if (it == cb->assignment.end())
        return fail(0, "sample '" + r.id + "' has no codebook assignment");
      group_clusters[{r.task, r.group_label()}][it->second].push_back(r.id);
    }
    for (const auto& [key, clusters] : group_clusters)
      checkers.emplace(key, RoundRobinChecker(clusters));
  }

  // Introduced-task set per stage for containment checks.
  std::vector<std::set<Task>> introduced_by_stage(cfg.stages.size());
  {
    std::set<Task> acc;
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
      acc.insert(cfg.stages[s].active_tasks.begin(),
                 cfg.stages[s].active_tasks.end());
      introduced_by_stage[s] = acc;
    }
  }

  for (std::uint32_t step = 0; step < plan.batches.size(); ++step) {
    const auto& batch = plan.batches[step];
    if (batch.step != step)
      return fail(step, "step indices not contiguous: saw " +
                            std::to_string(batch.step) + " at position " +
                            std::to_string(step));
    if (batch.items.size() != cfg.batch_size)
      return fail(step, "batch size violation: " +
                            std::to_string(batch.items.size()) + " items, "
                            "expected " + std::to_string(cfg.batch_size));

    Regime expected_regime = cfg.regime;
    if (cfg.regime == Regime::Hybrid)
      expected_regime = step < switch_step ? Regime::Tpc : Regime::Ads;
    if (batch.regime != expected_regime)
      return fail(step, "regime tag '" +
                            std::string(to_string(batch.regime)) +
                            "' does not match expected '" +
                            std::string(to_string(expected_regime)) + "'");

    for (const auto& item : batch.items) {
      const auto it = by_id.find(item.id);
      if (it == by_id.end())
        return fail(step, "item id '" + item.id + "' not in manifest");
      const auto& r = *it->second;
      if (item.task != r.task || item.label != r.group_label())
        return fail(step, "item '" + item.id +
                              "' task/label does not match the manifest");
    }

    if (expected_regime == Regime::Tpc) {
      const auto& stage = stage_for_step(cfg, step);
      const std::size_t stage_idx =
          static_cast<std::size_t>(&stage - cfg.stages.data());
      if (batch.stage != stage.name)
        return fail(step, "stage tag '" + batch.stage +
                              "' does not match expected '" + stage.name +
                              "'");
      for (const auto& item : batch.items) {
        if (!introduced_by_stage[stage_idx].count(item.task))
          return fail(step, "stage containment violation: task '" +
                                std::string(to_string(item.task)) +
                                "' not yet introduced in stage '" +
                                stage.name + "'");
        if (item.cluster)
          return fail(step, "curriculum item '" + item.id +
                                "' carries a cluster id");
      }
    } else if (expected_regime == Regime::Sm) {
      if (!batch.stage.empty())
        return fail(step, "SM batch carries a stage tag");
      for (const auto& item : batch.items)
        if (item.cluster)
          return fail(step,
                      "SM item '" + item.id + "' carries a cluster id");
    } else {  // ADS
      if (!batch.stage.empty())
        return fail(step, "ADS batch carries a stage tag");
      std::map<GroupKey, std::uint32_t> counts;
      for (const auto& item : batch.items) {
        if (!item.cluster)
          return fail(step, "ADS item '" + item.id + "' lacks a cluster id");
        const auto assigned = cb->assignment.at(item.id);
        if (*item.cluster != assigned)
          return fail(step, "item '" + item.id + "' cluster " +
                                std::to_string(*item.cluster) +
                                " does not match codebook cluster " +
                                std::to_string(assigned));
        ++counts[{item.task, item.label}];
      }
      for (const auto& [key, quota] : quotas) {
        const auto it = counts.find(key);
        const std::uint32_t got = it == counts.end() ? 0 : it->second;
        if (got == 0)
          return fail(step, "label coverage violation: group (" +
                                std::string(to_string(key.first)) + ", " +
                                key.second + ") missing from batch");
        if (got != quota)
          return fail(step, "quota violation: group (" +
                                std::string(to_string(key.first)) + ", " +
                                key.second + ") has " + std::to_string(got) +
                                " items, expected " + std::to_string(quota));
      }
      for (const auto& [key, count] : counts) {
        if (!quotas.count(key))
          return fail(step, "unexpected group (" +
                                std::string(to_string(key.first)) + ", " +
                                key.second + ") in batch");
      }
      for (const auto& item : batch.items) {
        auto chk = checkers.find({item.task, item.label});
        const std::string err = chk->second.advance(item.id, *item.cluster);
        if (!err.empty())
          return fail(step, "round-robin violation in group (" +
                                std::string(to_string(item.task)) + ", " +
                                item.label + "): " + err);
      }
    }
  }
  return std::nullopt;
}

}  // namespace audioplan
