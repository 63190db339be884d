#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmlsim/metrics.hpp"
#include "dmlsim/orchestration.hpp"

namespace dmlsim {

// Dataset descriptor: synthetic blobs or an IDX file pair.
struct DatasetConfig {
  std::string kind = "synth";  // "synth" | "idx"
  // synth
  uint32_t classes = 4;
  uint32_t per_class = 250;
  uint32_t dim = 16;
  double separation = 4.0;
  uint64_t seed = 5;
  double test_fraction = 0.2;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
};

struct OutputConfig {
  std::string dir = "out";
  std::vector<std::string> formats = {"csv", "json"};
  std::string prefix = "report";
};

// The complete experiment configuration. Parsing is strict: unknown keys are
// an error, and every knob is range-checked before any work starts.
struct ExperimentConfig {
  Architecture architecture = Architecture::fl;
  uint32_t rounds = 10;
  DatasetConfig dataset;
  std::vector<std::vector<uint32_t>> partition_groups;
  std::vector<uint32_t> hidden_layers = {32};
  uint32_t param_dtype_bytes = 4;
  ProtocolKnobs knobs;
  Seeds seeds;
  AccountingOptions accounting;
  OutputConfig output;

  // Topology: either a shorthand or an explicit node/link/cluster list.
  std::optional<TopologyShorthand> topology_shorthand;
  std::optional<TopologySpec> topology_explicit;

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig parse(const std::string& json_text,
                                const std::string& origin);

  // Assembles dataset, shards, topology, and model spec. The architecture
  // argument overrides the configured one (used by the compare command).
  ExperimentSetup build(std::optional<Architecture> arch_override = {}) const;
};

// "mlp:16-32-4" -> widths {16,32,4}.
ModelSpec parse_spec_descriptor(const std::string& descriptor,
                                uint32_t param_dtype_bytes = 4);

}  // namespace dmlsim
