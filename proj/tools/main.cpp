// audioplan: build embedding codebooks, emit deterministic batch plans for
// the SM / TPC / ADS / HYBRID scheduling regimes, validate emitted plans,
// and score WER / weighted-F1 / ROUGE-L evaluation files.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "audioplan/codebook.hpp"
#include "audioplan/judge.hpp"
#include "audioplan/manifest.hpp"
#include "audioplan/metrics.hpp"
#include "audioplan/rng.hpp"
#include "audioplan/runplan.hpp"
#include "audioplan/sampler.hpp"

namespace {

using namespace audioplan;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

std::string provenance_header(const std::string& descriptor,
                              std::uint64_t seed) {
  std::ostringstream os;
  os << "# audioplan v" << kVersion << " config=" << std::hex
     << fnv1a64(descriptor) << std::dec << " seed=" << seed << "\n";
  return os.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write output file: " + path);
  return out;
}

struct BuildCodebookArgs {
  std::string manifest_path;
  std::string embeddings_dir;
  std::uint32_t k = 500;
  double subset_fraction = 0.03;
  std::uint64_t seed = 0;
  std::string out_path;
};

int cmd_build_codebook(const BuildCodebookArgs& args) {
  const Manifest manifest = load_manifest(args.manifest_path);
  DirEmbeddingStore store(args.embeddings_dir);
  const Codebook cb = build_codebook(manifest, store, args.k,
                                     args.subset_fraction, args.seed);
  save_codebook(cb, args.out_path);
  std::cerr << "codebook: K=" << cb.k << " d=" << cb.dim
            << " subset=" << cb.fit_subset_size
            << " iterations=" << cb.iterations << " inertia=" << cb.inertia
            << " -> " << args.out_path << "\n";
  return 0;
}

struct PlanArgs {
  std::string manifest_path;
  std::string config_path;
  std::string codebook_path;
  std::string out_path;
  bool emit_lr = false;
  // Flag overrides for the config file.
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> batch_size;
  std::optional<std::string> regime;
  std::optional<std::uint32_t> switch_step;
  std::optional<double> replay_fraction;
};

RegimeConfig resolve_config(const PlanArgs& args) {
  std::ifstream in(args.config_path);
  if (!in)
    throw std::runtime_error("cannot open config file: " + args.config_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  RegimeConfig cfg = parse_regime_config(buf.str());
  if (args.seed) cfg.seed = *args.seed;
  if (args.batch_size) cfg.batch_size = *args.batch_size;
  if (args.regime) cfg.regime = regime_from_string(*args.regime);
  if (args.switch_step) cfg.switch_step = *args.switch_step;
  if (args.replay_fraction) cfg.replay_fraction = *args.replay_fraction;
  finalize_config(cfg);
  return cfg;
}

std::optional<Codebook> maybe_load_codebook(const std::string& path,
                                            const RegimeConfig& cfg) {
  const bool needed =
      cfg.regime == Regime::Ads || cfg.regime == Regime::Hybrid;
  if (path.empty()) {
    if (needed)
      throw std::runtime_error(
          "regime " + std::string(to_string(cfg.regime)) +
          " samples from codebook clusters; pass --codebook");
    return std::nullopt;
  }
  return load_codebook(path);
}

int cmd_plan_batches(const PlanArgs& args) {
  const Manifest manifest = load_manifest(args.manifest_path);
  const RegimeConfig cfg = resolve_config(args);
  const auto codebook = maybe_load_codebook(args.codebook_path, cfg);

  BatchPlan plan =
      plan_batches(manifest, codebook ? &*codebook : nullptr, cfg);

  if (args.emit_lr) {
    LrScheduleConfig lr;
    lr.epoch1_steps = static_cast<std::uint32_t>(
        (manifest.size() + cfg.batch_size - 1) / cfg.batch_size);
    lr.total_steps = cfg.total_steps;
    for (auto& batch : plan.batches) batch.lr = lr_at(batch.step, lr);
  }

  auto out = open_out(args.out_path);
  out << provenance_header(serialize_regime_config(cfg), cfg.seed);
  out << serialize_plan(plan);

  std::map<Task, std::size_t> per_task;
  for (const auto& batch : plan.batches)
    for (const auto& item : batch.items) ++per_task[item.task];
  std::cerr << "plan: regime=" << to_string(cfg.regime)
            << " batches=" << plan.batches.size()
            << " batch_size=" << cfg.batch_size << " seed=" << cfg.seed
            << "\n";
  for (const auto& [task, count] : per_task)
    std::cerr << "  task " << to_string(task) << ": " << count << " items\n";
  for (const auto& stage : cfg.stages)
    std::cerr << "  stage " << stage.name << ": steps [" << stage.begin
              << ", " << stage.end << ")\n";
  return 0;
}

struct ValidateArgs {
  std::string plan_path;
  std::string manifest_path;
  std::string config_path;
  std::string codebook_path;
  PlanArgs overrides;  // reuses the plan override flags
};

int cmd_validate_plan(const ValidateArgs& args) {
  const Manifest manifest = load_manifest(args.manifest_path);
  PlanArgs cfg_args = args.overrides;
  cfg_args.config_path = args.config_path;
  const RegimeConfig cfg = resolve_config(cfg_args);
  const auto codebook = maybe_load_codebook(args.codebook_path, cfg);
  const BatchPlan plan = load_plan(args.plan_path);
  const auto violation =
      validate_plan(plan, manifest, cfg, codebook ? &*codebook : nullptr);
  if (violation) {
    std::cerr << "plan invalid at step " << violation->step << ": "
              << violation->what << "\n";
    return 1;
  }
  std::cerr << "plan ok: " << plan.batches.size() << " batches validated\n";
  return 0;
}

struct EvalArgs {
  std::string metric;
  std::string pairs_path;
  std::string out_path;
  std::string per_item_path;
  std::string aliases_path;
  std::string gate_out_path;
  double threshold = 0.15;
  bool keep_case = false;
  bool strip_punctuation = false;
};

int cmd_eval(const EvalArgs& args) {
  const auto pairs = load_eval_pairs(args.pairs_path);
  TextNormOptions opts;
  opts.lowercase = !args.keep_case;
  opts.strip_punctuation = args.strip_punctuation;

  MetricReport report;
  if (args.metric == "wer") {
    report = eval_wer(pairs, opts);
  } else if (args.metric == "f1") {
    if (!args.aliases_path.empty())
      report = eval_f1(pairs, AliasTable::from_file(args.aliases_path));
    else
      report = eval_f1(pairs);
  } else {
    report = eval_rouge(pairs, opts);
  }

  const std::string descriptor = args.metric + "|" + args.pairs_path;
  if (!args.out_path.empty()) {
    auto out = open_out(args.out_path);
    out << provenance_header(descriptor, 0);
    out << serialize_report(report) << "\n";
  } else {
    std::cout << serialize_report(report) << "\n";
  }
  if (!args.per_item_path.empty()) {
    auto out = open_out(args.per_item_path);
    out << provenance_header(descriptor, 0);
    for (const auto& [id, score] : report.per_item) {
      ordered_json j;
      j["id"] = id;
      j["score"] = score;
      out << j.dump() << "\n";
    }
  }
  if (args.metric == "wer" && !args.gate_out_path.empty()) {
    std::vector<GateCandidate> candidates;
    for (const auto& [id, rate] : report.per_item)
      candidates.push_back({id, "", rate});
    const auto selected = quality_gate(std::move(candidates), args.threshold);
    auto out = open_out(args.gate_out_path);
    out << provenance_header(descriptor, 0);
    for (const auto& id : selected) out << id << "\n";
  }
  std::cerr << args.metric << " corpus score: " << report.corpus_score
            << " over " << report.item_count << " items\n";
  return 0;
}

int cmd_stats(const std::string& manifest_path) {
  const Manifest manifest = load_manifest(manifest_path);
  std::map<Task, std::size_t> counts;
  std::map<Task, double> seconds;
  for (const auto& r : manifest.samples) {
    ++counts[r.task];
    seconds[r.task] += r.duration_s;
  }
  ordered_json tasks = ordered_json::array();
  double total_hours = 0.0;
  for (const auto& [task, count] : counts) {
    ordered_json tj;
    tj["task"] = std::string(to_string(task));
    tj["count"] = count;
    const double hours = seconds[task] / 3600.0;
    tj["hours"] = hours;
    total_hours += hours;
    if (is_discriminative(task)) {
      ordered_json labels;
      for (const auto& [label, n] : label_distribution(manifest, task))
        labels[label] = n;
      tj["labels"] = labels;
    } else {
      tj["labels"] = nullptr;
    }
    tasks.push_back(std::move(tj));
  }
  ordered_json j;
  j["samples"] = manifest.size();
  j["hours"] = total_hours;
  j["tasks"] = std::move(tasks);
  std::cout << j.dump() << "\n";
  return 0;
}

struct JudgeArgs {
  std::string pairs_path;
  std::string kind = "summary";
  std::string out_path;
};

int cmd_emit_judge_requests(const JudgeArgs& args) {
  const auto pairs = load_eval_pairs(args.pairs_path);
  const JudgeKind kind = judge_kind_from_string(args.kind);
  auto out = open_out(args.out_path);
  out << provenance_header(args.kind + "|" + args.pairs_path, 0);
  for (const auto& pair : pairs)
    out << build_judge_request(kind, pair) << "\n";
  std::cerr << "wrote " << pairs.size() << " " << args.kind
            << " judge requests to " << args.out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic batch planning and evaluation for multi-task "
               "audio instruction tuning"};
  app.require_subcommand(1);

  BuildCodebookArgs cb_args;
  auto* cb_cmd = app.add_subcommand(
      "build-codebook", "fit the embedding-space codebook and assign samples");
  cb_cmd->add_option("--manifest", cb_args.manifest_path)->required();
  cb_cmd->add_option("--embeddings", cb_args.embeddings_dir)->required();
  cb_cmd->add_option("--k", cb_args.k, "cluster count")->capture_default_str();
  cb_cmd->add_option("--subset-fraction", cb_args.subset_fraction,
                     "fit on this stratified fraction")
      ->capture_default_str();
  cb_cmd->add_option("--seed", cb_args.seed)->capture_default_str();
  cb_cmd->add_option("--out", cb_args.out_path)->required();

  PlanArgs plan_args;
  auto* plan_cmd =
      app.add_subcommand("plan-batches", "emit a batch plan for a regime");
  plan_cmd->add_option("--manifest", plan_args.manifest_path)->required();
  plan_cmd->add_option("--config", plan_args.config_path)->required();
  plan_cmd->add_option("--codebook", plan_args.codebook_path,
                       "required for ADS/HYBRID");
  plan_cmd->add_option("--out", plan_args.out_path)->required();
  plan_cmd->add_flag("--emit-lr", plan_args.emit_lr,
                     "append the learning rate to each batch line");
  plan_cmd->add_option("--seed", plan_args.seed, "override config seed");
  plan_cmd->add_option("--batch-size", plan_args.batch_size);
  plan_cmd->add_option("--regime", plan_args.regime);
  plan_cmd->add_option("--switch-step", plan_args.switch_step);
  plan_cmd->add_option("--replay-fraction", plan_args.replay_fraction);

  ValidateArgs val_args;
  auto* val_cmd = app.add_subcommand(
      "validate-plan", "re-check every sampler invariant on an emitted plan");
  val_cmd->add_option("--plan", val_args.plan_path)->required();
  val_cmd->add_option("--manifest", val_args.manifest_path)->required();
  val_cmd->add_option("--config", val_args.config_path)->required();
  val_cmd->add_option("--codebook", val_args.codebook_path);
  val_cmd->add_option("--seed", val_args.overrides.seed);
  val_cmd->add_option("--batch-size", val_args.overrides.batch_size);
  val_cmd->add_option("--regime", val_args.overrides.regime);
  val_cmd->add_option("--switch-step", val_args.overrides.switch_step);
  val_cmd->add_option("--replay-fraction", val_args.overrides.replay_fraction);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score an evaluation file");
  eval_cmd->add_option("--metric", eval_args.metric)
      ->required()
      ->check(CLI::IsMember({"wer", "f1", "rouge"}));
  eval_cmd->add_option("--pairs", eval_args.pairs_path)->required();
  eval_cmd->add_option("--out", eval_args.out_path,
                       "report file (default: stdout)");
  eval_cmd->add_option("--per-item", eval_args.per_item_path,
                       "per-item detail file");
  eval_cmd->add_option("--aliases", eval_args.aliases_path,
                       "alias table overriding the built-in one");
  eval_cmd->add_option("--gate-out", eval_args.gate_out_path,
                       "write ids passing the WER quality gate");
  eval_cmd->add_option("--threshold", eval_args.threshold,
                       "quality gate WER threshold")
      ->capture_default_str();
  eval_cmd->add_flag("--keep-case", eval_args.keep_case,
                     "skip English lowercasing");
  eval_cmd->add_flag("--strip-punctuation", eval_args.strip_punctuation);

  std::string stats_manifest;
  auto* stats_cmd = app.add_subcommand(
      "stats", "per-task counts, hours and label histograms");
  stats_cmd->add_option("--manifest", stats_manifest)->required();

  JudgeArgs judge_args;
  auto* judge_cmd = app.add_subcommand("emit-judge-requests",
                                       "write LLM-judge request payloads");
  judge_cmd->add_option("--pairs", judge_args.pairs_path)->required();
  judge_cmd->add_option("--kind", judge_args.kind)
      ->check(CLI::IsMember({"summary", "translation"}))
      ->capture_default_str();
  judge_cmd->add_option("--out", judge_args.out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (cb_cmd->parsed()) return cmd_build_codebook(cb_args);
    if (plan_cmd->parsed()) return cmd_plan_batches(plan_args);
    if (val_cmd->parsed()) return cmd_validate_plan(val_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (stats_cmd->parsed()) return cmd_stats(stats_manifest);
    if (judge_cmd->parsed()) return cmd_emit_judge_requests(judge_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
