#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sgq/graph.hpp"
#include "sgq/memory.hpp"
#include "sgq/model.hpp"
#include "sgq/quant_config.hpp"
#include "sgq/report.hpp"
#include "sgq/search.hpp"
#include "sgq/synthetic.hpp"
#include "sgq/trainer.hpp"

namespace sgq::cli {

namespace {

namespace fs = std::filesystem;

/// Raised for invalid flag combinations detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InfeasibleSearch {};

struct CommonOptions {
  std::string dataset;
  std::string out = ".";
  std::uint64_t seed = 0;
  std::size_t epochs = 200;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  std::size_t patience = 20;
};

struct TrainOptions {
  std::string arch = "gcn";
  bool no_self_loops = false;
  bool raw_ones = false;
};

struct EvalOptions {
  std::string checkpoint;
  std::string config;
  std::string arch;
};

struct SearchOptions {
  std::string checkpoint;
  std::string arch;
  std::string granularity = "lwq_cwq";
  std::vector<int> bit_choices{kDefaultTemplate.begin(), kDefaultTemplate.end()};
  std::vector<std::uint32_t> split_points;
  std::size_t n_mea = 40;
  std::size_t n_iter = 5;
  std::size_t n_sample = 2000;
  double drop_threshold = 0.005;
  std::size_t search_epochs = 50;
  std::size_t jobs = 1;
  std::string rule = std::string(to_string(SelectionRule::kCheapestPredictedFeasible));
};

struct SynthOptions {
  std::string name = "cora";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

Dataset load_any_dataset(const std::string& spec) {
  if (spec == "synthetic:cora") return make_citation_like(cora_like());
  if (spec == "synthetic:citeseer") return make_citation_like(citeseer_like());
  return load_dataset(spec);
}

TrainParams train_params(const CommonOptions& o) {
  TrainParams p;
  p.epochs = o.epochs;
  p.learning_rate = o.learning_rate;
  p.weight_decay = o.weight_decay;
  p.seed = o.seed;
  p.early_stop_patience = o.patience;
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return p;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError("cannot create output directory " + dir);
}

/// Appends one timestamped line; the only non-deterministic output.
void log_line(const std::string& dir, const std::string& message) {
  std::ofstream log(fs::path(dir) / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  log << stamp << ' ' << message << '\n';
}

std::string join_args(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

GnnModel load_checked_model(const std::string& checkpoint, const std::string& arch) {
  GnnModel model = load_model(checkpoint);
  if (!arch.empty() && parse_arch(arch) != model.arch) {
    throw UsageError("--arch " + arch + " does not match checkpoint arch " + std::string(to_string(model.arch)));
  }
  return model;
}

MetricsRow metrics_row(const QuantConfig& cfg, const MemoryReport& full, const MemoryReport& mem, double accuracy) {
  return {cfg.id(), mem.average_bits, mem.feature_mb(), saving_ratio(full, mem), accuracy};
}

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  CitationLikeSpec spec;
  if (o.name == "cora") {
    spec = cora_like();
  } else if (o.name == "citeseer") {
    spec = citeseer_like();
  } else {
    throw UsageError("unknown synthetic dataset '" + o.name + "' (expected cora or citeseer)");
  }
  if (o.seed_given) spec.seed = o.seed;
  const Dataset ds = make_citation_like(spec);
  save_dataset(ds, o.out);
  out << "wrote " << o.out << ": " << ds.num_nodes() << " nodes, " << ds.graph.num_edges() / 2 << " links, "
      << ds.feature_dim() << " features, " << ds.num_classes << " classes\n";
  return kOk;
}

int cmd_train(const CommonOptions& c, const TrainOptions& t, const std::string& command_line, std::ostream& out) {
  const Arch arch = parse_arch(t.arch);
  const auto params = train_params(c);
  const Dataset ds = load_any_dataset(c.dataset);
  ensure_dir(c.out);
  log_line(c.out, "start: " + command_line);
  const auto result = train_full_precision(arch, ds, params, ModelOptions{!t.no_self_loops, t.raw_ones});
  save_model(result.model, fs::path(c.out) / "model.sgqm");

  const auto ctx = make_context(ds.graph, result.model.self_loops);
  const auto layout = layout_of(result.model, ctx);
  const auto fp = QuantConfig::full_precision();
  const auto mem = feature_memory_bits(result.model, layout, fp);
  upsert_metrics(fs::path(c.out) / "metrics.csv", metrics_row(fp, mem, mem, result.test_acc));
  out << "trained " << to_string(arch) << ": val " << format_number(result.val_acc) << ", test "
      << format_number(result.test_acc) << " (best epoch " << result.best_epoch << ")\n";
  log_line(c.out, "done: test " + format_number(result.test_acc));
  return kOk;
}

int cmd_quantize_eval(const CommonOptions& c, const EvalOptions& e, const std::string& command_line, std::ostream& out) {
  const auto params = train_params(c);
  const GnnModel model = load_checked_model(e.checkpoint, e.arch);
  const QuantConfig cfg = load_config(e.config);
  const Dataset ds = load_any_dataset(c.dataset);
  ensure_dir(c.out);
  log_line(c.out, "start: " + command_line);

  const auto ctx = make_context(ds.graph, model.self_loops);
  const auto layout = layout_of(model, ctx);
  const auto full = feature_memory_bits(model, layout, QuantConfig::full_precision());
  const auto mem = feature_memory_bits(model, layout, cfg);
  double accuracy = 0.0;
  const bool all_full = std::all_of(cfg.slots().begin(), cfg.slots().end(), [](int b) { return b == kFullPrecisionBits; });
  if (all_full) {
    accuracy = evaluate(model, ds, cfg, Split::kTest);
  } else {
    const auto stats = calibrate_model(model, ds.features, ctx);
    accuracy = finetune_quantized(model, ds, ctx, stats, cfg, params).test_acc;
  }
  const auto row = metrics_row(cfg, full, mem, accuracy);
  upsert_metrics(fs::path(c.out) / "metrics.csv", row);
  out << kMetricsHeader << '\n' << to_csv(row) << '\n';
  log_line(c.out, "done: " + to_csv(row));
  return kOk;
}

int cmd_search(const CommonOptions& c, const SearchOptions& s, const std::string& command_line, std::ostream& out) {
  const auto params = train_params(c);
  const GnnModel model = load_checked_model(s.checkpoint, s.arch);
  const Dataset ds = load_any_dataset(c.dataset);
  const auto ctx = make_context(ds.graph, model.self_loops);

  SearchSpace space;
  try {
    space.granularity = parse_granularity(s.granularity);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  space.depth = model.depth();
  space.bit_choices = s.bit_choices;
  for (int b : space.bit_choices) {
    if (b < 1 || b > 16) throw UsageError("--bits entries must be in [1,16]");
  }
  if (topology_aware(space.granularity)) {
    if (s.split_points.empty()) {
      space.buckets = DegreeBuckets::from_quartiles(ctx.degrees);
    } else if (s.split_points.size() == 3) {
      try {
        space.buckets = DegreeBuckets({s.split_points[0], s.split_points[1], s.split_points[2]});
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    } else {
      throw UsageError("--split-points needs exactly 3 values");
    }
  }

  SearchParams sp;
  sp.n_mea = s.n_mea;
  sp.n_iter = s.n_iter;
  sp.n_sample = s.n_sample;
  sp.drop_threshold = s.drop_threshold;
  sp.seed = c.seed;
  sp.jobs = s.jobs;
  try {
    sp.rule = parse_selection_rule(s.rule);
    sp.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  ensure_dir(c.out);
  log_line(c.out, "start: " + command_line);
  const auto layout = layout_of(model, ctx);
  const auto stats = calibrate_model(model, ds.features, ctx);
  const auto full = feature_memory_bits(model, layout, QuantConfig::full_precision());
  const double fp_val = evaluate(model, ds, QuantConfig::full_precision(), Split::kVal);

  TrainParams short_params = params;
  short_params.epochs = s.search_epochs;
  const Evaluator evaluator = [&](const QuantConfig& cfg) {
    return finetune_quantized(model, ds, ctx, stats, cfg, short_params).val_acc;
  };
  const MemoryFn memory_fn = [&](const QuantConfig& cfg) { return feature_memory_bits(model, layout, cfg).feature_mb(); };
  const SearchResult result = explore(space, evaluator, fp_val, sp, memory_fn);

  write_text(fs::path(c.out) / "search_log.csv", search_log_csv(result));
  write_text(fs::path(c.out) / "trajectory.csv", trajectory_csv(result));
  if (!result.feasible()) {
    std::error_code ec;
    fs::remove(fs::path(c.out) / "winner.json", ec);
    log_line(c.out, "done: no feasible config");
    throw InfeasibleSearch{};
  }
  save_config(*result.best_config, fs::path(c.out) / "winner.json");
  const auto final_run = finetune_quantized(model, ds, ctx, stats, *result.best_config, params);
  const auto mem = feature_memory_bits(model, layout, *result.best_config);
  const auto row = metrics_row(*result.best_config, full, mem, final_run.test_acc);
  upsert_metrics(fs::path(c.out) / "metrics.csv", row);
  out << "winner " << result.best_config->id() << " (val " << format_number(result.accuracy) << " vs full precision "
      << format_number(fp_val) << ")\n"
      << kMetricsHeader << '\n'
      << to_csv(row) << '\n';
  log_line(c.out, "done: " + to_csv(row));
  return kOk;
}

int cmd_report(const std::string& dir, std::ostream& out) {
  const fs::path metrics = fs::path(dir) / "metrics.csv";
  if (!fs::exists(metrics)) throw FormatError("no metrics.csv in " + dir);
  auto rows = read_metrics(metrics);
  if (rows.empty()) throw FormatError("metrics.csv in " + dir + " has no rows");
  const Report report = build_report(std::move(rows));
  write_text(fs::path(dir) / "granularity_series.csv", report.series_csv);
  out << report.table;
  return kOk;
}

void add_common(CLI::App* cmd, CommonOptions& c, bool needs_training) {
  cmd->add_option("--dataset", c.dataset, "SGQD file, or synthetic:cora / synthetic:citeseer")->required();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  if (!needs_training) return;
  cmd->add_option("--epochs", c.epochs, "Maximum training epochs")->capture_default_str();
  cmd->add_option("--lr", c.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--weight-decay", c.weight_decay, "L2 weight decay")->capture_default_str();
  cmd->add_option("--patience", c.patience, "Early-stop patience on validation accuracy (0 = off)")
      ->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const CLI::IsMember kArchNames({"gcn", "gat", "agnn"});
  CLI::App app{"Mixed-precision feature quantization for graph neural networks"};
  app.require_subcommand(1);

  CommonOptions common;
  TrainOptions train;
  EvalOptions eval;
  SearchOptions search;
  SynthOptions synth;
  std::string report_dir;

  auto* synth_cmd = app.add_subcommand("synth", "Write a seeded citation-style dataset");
  synth_cmd->add_option("--name", synth.name, "cora or citeseer")
      ->check(CLI::IsMember({"cora", "citeseer"}))
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed (default: preset)");
  synth_cmd->add_option("--out", synth.out, "Output .sgqd path")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a full-precision model");
  add_common(train_cmd, common, true);
  train_cmd->add_option("--arch", train.arch, "gcn, gat or agnn")->check(kArchNames)->capture_default_str();
  train_cmd->add_flag("--no-self-loops", train.no_self_loops, "Aggregate over neighbors only");
  train_cmd->add_flag("--raw-ones", train.raw_ones, "GCN: unnormalized all-ones attention");

  auto* eval_cmd = app.add_subcommand("quantize-eval", "Finetune a checkpoint under one config and record metrics");
  add_common(eval_cmd, common, true);
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--config", eval.config, "Config JSON")->required();
  eval_cmd->add_option("--arch", eval.arch, "Expected arch of the checkpoint")->check(kArchNames);

  auto* search_cmd = app.add_subcommand("search", "Auto-bit selection over a config space");
  add_common(search_cmd, common, true);
  search_cmd->add_option("--checkpoint", search.checkpoint, "Model checkpoint")->required();
  search_cmd->add_option("--arch", search.arch, "Expected arch of the checkpoint")->check(kArchNames);
  search_cmd->add_option("--granularity", search.granularity, "uniform, lwq, cwq, lwq_cwq or lwq_cwq_taq")
      ->check(CLI::IsMember({"uniform", "lwq", "cwq", "lwq_cwq", "lwq_cwq_taq"}))
      ->capture_default_str();
  search_cmd->add_option("--bits", search.bit_choices, "Bit-width choices")->delimiter(',')->capture_default_str();
  search_cmd->add_option("--split-points", search.split_points, "Degree split points D1,D2,D3 (default: quartiles)")
      ->delimiter(',');
  search_cmd->add_option("--n-mea", search.n_mea, "Configs measured per iteration")->capture_default_str();
  search_cmd->add_option("--n-iter", search.n_iter, "Iterations")->capture_default_str();
  search_cmd->add_option("--n-sample", search.n_sample, "Configs scored by the cost model per iteration")
      ->capture_default_str();
  search_cmd->add_option("--drop-threshold", search.drop_threshold, "Max validation accuracy drop")
      ->capture_default_str();
  search_cmd->add_option("--search-epochs", search.search_epochs, "Finetune epochs per measured config")
      ->capture_default_str();
  search_cmd->add_option("--jobs", search.jobs, "Concurrent measurements")->capture_default_str();
  search_cmd->add_option("--rule", search.rule, "top-predicted or cheapest-feasible")
      ->check(CLI::IsMember({"top-predicted", "cheapest-feasible"}))
      ->capture_default_str();

  auto* report_cmd = app.add_subcommand("report", "Summarize metrics.csv of a run directory");
  report_cmd->add_option("dir", report_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  synth.seed_given = synth_cmd->count("--seed") > 0;

  const std::string command_line = join_args(argc, argv);
  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*train_cmd) return cmd_train(common, train, command_line, out);
    if (*eval_cmd) return cmd_quantize_eval(common, eval, command_line, out);
    if (*search_cmd) return cmd_search(common, search, command_line, out);
    if (*report_cmd) return cmd_report(report_dir, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InfeasibleSearch&) {
    err << "no feasible config: every measured config exceeds the accuracy drop threshold\n";
    return kInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace sgq::cli
