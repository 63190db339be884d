// dmlsim: deterministic simulator and analytic cost engine for distributed
// training orchestrations (cl, fl, sl, hsfl, hfsl) over wireless topologies.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "dmlsim/config.hpp"
#include "dmlsim/metrics.hpp"

namespace {

using namespace dmlsim;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitValidation = 3;
constexpr int kExitGradcheck = 4;

struct CommonOpts {
  std::string config_path;
  std::optional<uint32_t> rounds;
  std::optional<uint64_t> seed_init, seed_data, seed_segments, seed_failures;
  std::optional<std::string> out_dir;
  std::optional<std::string> format;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Experiment config file (JSON)")
      ->required();
  cmd->add_option("--rounds", opts.rounds, "Override the configured round count");
  cmd->add_option("--seed.init", opts.seed_init, "Override model init seed");
  cmd->add_option("--seed.data", opts.seed_data, "Override batch-order seed");
  cmd->add_option("--seed.segments", opts.seed_segments,
                  "Override segment-choice seed");
  cmd->add_option("--seed.failures", opts.seed_failures,
                  "Override failure-draw seed");
  cmd->add_option("--out", opts.out_dir,
                  "Output directory (default: config value or $DMLSIM_OUT)");
  cmd->add_option("--format", opts.format, "Report formats: csv, json, or csv,json");
}

ExperimentConfig load_with_overrides(const CommonOpts& opts) {
  ExperimentConfig cfg = ExperimentConfig::load(opts.config_path);
  if (opts.rounds) cfg.rounds = *opts.rounds;
  if (cfg.rounds < 1) fail(ErrorKind::config, "rounds must be >= 1");
  if (opts.seed_init) cfg.seeds.init = *opts.seed_init;
  if (opts.seed_data) cfg.seeds.data = *opts.seed_data;
  if (opts.seed_segments) cfg.seeds.segments = *opts.seed_segments;
  if (opts.seed_failures) cfg.seeds.failures = *opts.seed_failures;
  if (opts.out_dir) {
    cfg.output.dir = *opts.out_dir;
  } else if (const char* env = std::getenv("DMLSIM_OUT")) {
    if (cfg.output.dir == "out") cfg.output.dir = env;
  }
  if (opts.format) {
    cfg.output.formats.clear();
    std::istringstream ss(*opts.format);
    std::string token;
    while (std::getline(ss, token, ','))
      if (!token.empty()) cfg.output.formats.push_back(token);
    for (const std::string& f : cfg.output.formats)
      if (f != "csv" && f != "json")
        fail(ErrorKind::config, "unknown report format '" + f + "'");
  }
  return cfg;
}

std::vector<RoundResult> run_architecture(const ExperimentConfig& cfg,
                                          Architecture arch, uint32_t rounds) {
  Experiment experiment(cfg.build(arch));
  std::vector<RoundResult> results;
  results.reserve(rounds);
  for (uint32_t r = 0; r < rounds; ++r) {
    results.push_back(experiment.run_round());
    const RoundResult& rr = results.back();
    std::cout << "arch=" << to_string(arch) << " round=" << rr.trace.round
              << " comm_bytes="
              << rr.trace.client_bytes(cfg.accounting.count_handoff_bytes)
              << " client_flops=" << rr.trace.client_flops()
              << " sim_seconds=" << format_double(rr.trace.duration().to_double())
              << " accuracy=" << format_double(rr.accuracy)
              << (rr.trace.aborted ? " aborted=1" : "") << "\n";
  }
  return results;
}

void write_reports(const ExperimentConfig& cfg, const Report& report) {
  std::filesystem::create_directories(cfg.output.dir);
  for (const std::string& format : cfg.output.formats) {
    std::string path =
        cfg.output.dir + "/" + cfg.output.prefix + "." + format;
    if (format == "csv")
      export_csv(report, path);
    else
      export_json(report, path);
    std::cout << "wrote " << path << "\n";
  }
}

int cmd_run(const CommonOpts& opts, const std::string& trace_path,
            const std::string& dump_model_path) {
  ExperimentConfig cfg = load_with_overrides(opts);
  Experiment experiment(cfg.build());
  std::vector<RoundResult> results;
  results.reserve(cfg.rounds);
  for (uint32_t r = 0; r < cfg.rounds; ++r) {
    results.push_back(experiment.run_round());
    const RoundResult& rr = results.back();
    std::cout << "arch=" << to_string(cfg.architecture)
              << " round=" << rr.trace.round << " comm_bytes="
              << rr.trace.client_bytes(cfg.accounting.count_handoff_bytes)
              << " client_flops=" << rr.trace.client_flops()
              << " sim_seconds=" << format_double(rr.trace.duration().to_double())
              << " accuracy=" << format_double(rr.accuracy)
              << (rr.trace.aborted ? " aborted=1" : "") << "\n";
  }
  AnalyticParams params = derive_params(cfg.build());
  Report report = summarize({{cfg.architecture, results}}, cfg.accounting,
                            {{cfg.architecture, params}});
  write_reports(cfg, report);
  if (!trace_path.empty()) {
    std::filesystem::create_directories(
        std::filesystem::path(trace_path).parent_path());
    std::vector<RoundTrace> traces;
    for (const RoundResult& r : results) traces.push_back(r.trace);
    export_trace_json(traces, trace_path);
    std::cout << "wrote " << trace_path << "\n";
  }
  if (!dump_model_path.empty()) {
    std::filesystem::create_directories(
        std::filesystem::path(dump_model_path).parent_path());
    write_param_vector(dump_model_path, experiment.global_params());
    std::cout << "wrote " << dump_model_path << "\n";
  }
  return kExitOk;
}

int cmd_compare(const CommonOpts& opts, const std::vector<std::string>& archs) {
  ExperimentConfig cfg = load_with_overrides(opts);
  std::vector<std::string> arch_names = archs;
  if (arch_names.empty())
    arch_names = {"cl", "fl", "sl", "hsfl", "hfsl"};
  std::vector<std::pair<Architecture, std::vector<RoundResult>>> runs;
  std::vector<std::pair<Architecture, AnalyticParams>> analytic;
  for (const std::string& name : arch_names) {
    Architecture arch = parse_architecture(name);
    runs.emplace_back(arch, run_architecture(cfg, arch, cfg.rounds));
    analytic.emplace_back(arch, derive_params(cfg.build(arch)));
  }
  Report report = summarize(runs, cfg.accounting, analytic);
  write_reports(cfg, report);
  return kExitOk;
}

int cmd_validate(const CommonOpts& opts, uint64_t phantom_bytes) {
  ExperimentConfig cfg = load_with_overrides(opts);
  // Accounting is validated with failures disabled and per-client downlinks.
  if (cfg.topology_shorthand) cfg.topology_shorthand->failure_prob = 0.0;
  if (cfg.topology_explicit)
    for (Link& l : cfg.topology_explicit->links) l.failure_prob = 0.0;
  cfg.accounting.downlink = DownlinkConvention::per_client;

  bool all_passed = true;
  for (Architecture arch : {Architecture::fl, Architecture::hsfl,
                            Architecture::sl, Architecture::hfsl}) {
    ExperimentSetup setup = cfg.build(arch);
    if (arch == Architecture::hfsl) setup.knobs.main_sync_every = 1;
    Experiment experiment(std::move(setup));
    std::vector<RoundTrace> traces;
    for (uint32_t r = 0; r < cfg.rounds; ++r)
      traces.push_back(experiment.run_round().trace);
    AnalyticParams params = derive_params(cfg.build(arch));
    ValidationCheck check = validate_accounting(traces, arch, params,
                                                cfg.accounting, phantom_bytes);
    std::cout << "validate arch=" << to_string(arch)
              << " convention=" << check.convention
              << " simulated_bytes=" << check.simulated_bytes
              << " analytic_bytes=" << format_double(check.analytic_bytes)
              << " delta=" << check.byte_delta
              << " client_flops=" << check.simulated_client_flops
              << " analytic_flops=" << format_double(check.analytic_flops)
              << (check.passed ? " [ok]" : " [MISMATCH]") << "\n";
    if (!check.passed) {
      all_passed = false;
      for (const std::string& line : check.offending_events)
        std::cout << "  " << line << "\n";
    }
  }

  // Degeneracy cross-check: a one-segment configuration must reproduce the
  // full-model formula exactly.
  {
    ExperimentConfig degenerate = cfg;
    degenerate.knobs.segment_count = 1;
    degenerate.knobs.segments_sent = 1;
    degenerate.knobs.vertical_rounds = 1;
    degenerate.knobs.horizontal_aggregation = false;
    Experiment experiment(degenerate.build(Architecture::hsfl));
    std::vector<RoundTrace> traces;
    for (uint32_t r = 0; r < cfg.rounds; ++r)
      traces.push_back(experiment.run_round().trace);
    AnalyticParams params = derive_params(degenerate.build(Architecture::fl));
    ValidationCheck check = validate_accounting(
        traces, Architecture::fl, params, degenerate.accounting, 0);
    std::cout << "validate arch=hsfl(M=1,m=1) against fl formula delta="
              << check.byte_delta << (check.passed ? " [ok]" : " [MISMATCH]")
              << "\n";
    if (!check.passed) all_passed = false;
  }

  if (!all_passed) return kExitValidation;
  std::cout << "all accounting checks passed\n";
  return kExitOk;
}

int cmd_gradcheck(const std::string& descriptor, uint64_t seed, double eps) {
  ModelSpec spec = parse_spec_descriptor(descriptor);
  Model model = init_model(spec, seed);
  Rng rng(mix64(seed, 0xba7c4));
  Batch batch;
  batch.inputs = Matrix(8, spec.input_width());
  for (double& v : batch.inputs.data) v = rng.uniform(-1.0, 1.0);
  batch.labels.resize(8);
  for (auto& l : batch.labels)
    l = uint32_t(rng.below(spec.output_width()));
  GradCheckResult result = grad_check(model, batch, eps, seed);
  // Very small eps loses accuracy to cancellation; the gate is relaxed
  // below 1e-5 (see --help).
  double threshold = eps < 1e-5 ? 1e-2 : 1e-4;
  std::cout << "gradcheck spec=" << descriptor << " eps=" << format_double(eps)
            << " checked=" << result.checked
            << " max_rel_error=" << format_double(result.max_rel_error)
            << " threshold=" << format_double(threshold) << "\n";
  if (result.max_rel_error < threshold) return kExitOk;
  std::cout << "worst coordinate: layer=" << result.layer
            << (result.is_bias ? " bias" : " weight") << "[" << result.index
            << "] analytic=" << format_double(result.analytic)
            << " numeric=" << format_double(result.numeric) << "\n";
  return kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dmlsim: deterministic simulator and analytic cost engine for\n"
      "distributed training orchestrations (cl, fl, sl, hsfl, hfsl).\n"
      "\n"
      "Config keys (strict; unknown keys are rejected):\n"
      "  architecture, rounds\n"
      "  dataset{kind, classes, per_class, dim, separation, seed,\n"
      "          test_fraction, train_images, train_labels, test_images,\n"
      "          test_labels} or a \"synth:...\"/\"idx:...\" descriptor string\n"
      "  partition{groups}\n"
      "  model{hidden, param_dtype_bytes}\n"
      "  protocol{segment_count, segments_sent, cut_layer, label_sharing,\n"
      "           vertical_rounds, horizontal_aggregation, local_epochs, lr,\n"
      "           batch_size, main_sync_every}\n"
      "  topology{cellular_clients, d2d_clusters, edge_servers,\n"
      "           uplink_bytes_per_sec, downlink_bytes_per_sec,\n"
      "           d2d_bytes_per_sec, edge_main_bytes_per_sec,\n"
      "           client_flops_per_sec, edge_flops_per_sec,\n"
      "           main_flops_per_sec, failure_prob}\n"
      "           or explicit {nodes, links, clusters}\n"
      "  seeds{init, data, segments, failures}\n"
      "  accounting{downlink_convention, count_label_bytes,\n"
      "             label_bytes_per_sample, count_handoff_bytes}\n"
      "  output{dir, formats, prefix}\n"};
  app.require_subcommand(1);

  CommonOpts run_opts, compare_opts, validate_opts;
  std::vector<std::string> compare_archs;
  uint64_t phantom_bytes = 0;
  std::string trace_path, dump_model_path;
  std::string gradcheck_spec = "mlp:16-32-4";
  uint64_t gradcheck_seed = 1;
  double gradcheck_eps = 1e-4;

  CLI::App* run = app.add_subcommand("run", "Run the configured experiment");
  add_common(run, run_opts);
  run->add_option("--trace", trace_path,
                  "Write the event-level round traces to this JSON file");
  run->add_option("--dump-model", dump_model_path,
                  "Write the final flattened model parameters to this file");

  CLI::App* compare = app.add_subcommand(
      "compare", "Run several architectures with identical seeds");
  add_common(compare, compare_opts);
  compare->add_option("--arch", compare_archs,
                      "Architectures to compare (repeatable; default: all)");

  CLI::App* validate = app.add_subcommand(
      "validate", "Cross-check simulated byte/FLOP totals against the "
                  "closed-form costs (failures forced off)");
  add_common(validate, validate_opts);
  validate->add_option("--inject-phantom-bytes", phantom_bytes, "")
      ->group("");  // test hook, hidden from help

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of the training gradients");
  gradcheck->add_option("--spec", gradcheck_spec,
                        "Spec descriptor, e.g. mlp:16-32-4");
  gradcheck->add_option("--seed", gradcheck_seed, "Init and batch seed");
  gradcheck
      ->add_option("--eps", gradcheck_eps,
                   "Central-difference step in (0, 1e-2]. Below 1e-5 the "
                   "pass threshold is relaxed to 1e-2 because of floating "
                   "point cancellation.")
      ->check(CLI::Range(1e-12, 1e-2));

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_opts, trace_path, dump_model_path);
    if (compare->parsed()) return cmd_compare(compare_opts, compare_archs);
    if (validate->parsed()) return cmd_validate(validate_opts, phantom_bytes);
    if (gradcheck->parsed())
      return cmd_gradcheck(gradcheck_spec, gradcheck_seed, gradcheck_eps);
  } catch (const dmlsim::SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case dmlsim::ErrorKind::config:
      case dmlsim::ErrorKind::format:
        return kExitConfig;
      case dmlsim::ErrorKind::validation:
        return kExitValidation;
      default:
        return kExitRuntime;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
