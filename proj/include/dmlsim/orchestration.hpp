#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dmlsim/dataset.hpp"
#include "dmlsim/network.hpp"
#include "dmlsim/partition.hpp"
#include "dmlsim/trace.hpp"

namespace dmlsim {

// per_client: the server's model download is logged once per client.
// broadcast: one transmission per edge server per round. The convention
// changes the byte accounting, not the schedule.
enum class DownlinkConvention { per_client, broadcast };

std::string to_string(DownlinkConvention c);

struct ProtocolKnobs {
  uint32_t segment_count = 1;  // M: equal slices of the flat parameter vector
  uint32_t segments_sent = 1;  // m: slices each client transmits per round
  size_t cut_layer = 1;
  bool label_sharing = true;
  uint32_t vertical_rounds = 1;
  bool horizontal_aggregation = false;
  uint32_t local_epochs = 1;
  double lr = 0.05;
  size_t batch_size = 32;
  // Rounds between full-model uploads to the main server (0 = never).
  // Applies to hfsl; hsfl always uploads after its vertical rounds.
  uint32_t main_sync_every = 1;

  void validate() const;
};

struct Seeds {
  uint64_t init = 1;
  uint64_t data = 2;
  uint64_t segments = 3;
  uint64_t failures = 4;
};

struct AccountingOptions {
  DownlinkConvention downlink = DownlinkConvention::per_client;
  bool count_label_bytes = false;
  uint32_t label_bytes_per_sample = 1;
  bool count_handoff_bytes = true;
};

// Which segment ids a client transmits. Default: seeded uniform choice
// without replacement; receivers may install their own policy.
using SegmentPolicy = std::function<std::vector<uint32_t>(
    uint32_t client_index, uint32_t round, uint32_t vertical_round,
    uint32_t segment_count, uint32_t segments_sent, Rng& rng)>;

struct ExperimentSetup {
  Architecture arch = Architecture::fl;
  ModelSpec spec;
  Topology topology;
  Dataset train;
  Dataset test;
  std::vector<Shard> shards;  // one per topology client, in client order
  ProtocolKnobs knobs;
  Seeds seeds;
  AccountingOptions accounting;
  SegmentPolicy segment_policy;  // empty = default policy
};

struct RoundResult {
  RoundTrace trace;
  double accuracy = 0.0;
};

// Argmax classification accuracy over the full set; ties break to the lowest
// class index.
double evaluate(const Model& model, const Dataset& test);

// Deterministic batch index plan for one (client, round, epoch): the shard is
// shuffled with its own stream and cut into batch_size slices (final slice
// may be short).
std::vector<std::vector<size_t>> plan_batches(const Shard& shard,
                                              size_t batch_size,
                                              uint64_t data_seed,
                                              uint32_t client_index,
                                              uint32_t round, uint32_t epoch);

// Round state machine for one architecture. Rounds are deterministic
// functions of (setup, round index); identical setups give bit-identical
// trajectories.
class Experiment {
 public:
  explicit Experiment(ExperimentSetup setup);

  RoundResult run_round();
  uint32_t round() const { return round_; }

  // Composed full model (client+server parts joined for split protocols).
  Model global_model() const;
  ParamVector global_params() const;

  const ExperimentSetup& setup() const { return setup_; }
  const CutPlan& cut_plan() const { return cut_; }

 private:
  struct SplitState {
    Model client_part;
    Model server_part;
    std::optional<Model> tail_part;
  };

  RoundResult run_cl_round();
  RoundResult run_fl_round();
  RoundResult run_sl_round();
  RoundResult run_hsfl_round();
  RoundResult run_hfsl_round();

  Model train_local(Model model, uint32_t client_index, uint32_t base_epoch,
                    uint64_t* samples_out) const;
  std::vector<uint32_t> choose_segments(uint32_t client_index,
                                        uint32_t vertical_round, Rng& rng) const;
  SplitState split_global(const Model& full) const;
  Model compose_split(const SplitState& s) const;

  ExperimentSetup setup_;
  uint32_t round_ = 0;
  std::vector<std::string> client_ids_;  // topology client order
  Model global_;                  // cl/fl/hsfl global; hfsl composed model
  std::vector<Model> locals_;     // hsfl: persistent per-client models
  std::vector<Model> edge_models_;  // hsfl: per edge server
  CutPlan cut_;                   // sl/hfsl
  SplitState split_;              // sl: traveling client part + server part
};

// Sequential segment-wise aggregation pass along one device chain (used by
// the segmented protocol on d2d clusters); exposed for direct testing.
struct ChainContribution {
  std::vector<double> payload_mean;  // padded segment scalars
  double weight = 0.0;
};

struct ChainPassResult {
  // segment id -> aggregated contribution held by the chain terminus
  std::map<uint32_t, ChainContribution> contributions;
  // distinct segments carried on each intermediate hop, then at the upload
  std::vector<uint64_t> hop_segment_counts;
  uint64_t upload_segment_count = 0;
};

// members: (flattened model, aggregation weight, chosen segment ids) per
// chain position. hop_failure(position, segment_id) is drawn once per chosen
// segment at that member's outgoing transmission; a dropped segment loses
// only that member's contribution while the inherited running value
// continues down the chain.
ChainPassResult d2d_chain_pass(
    const std::vector<std::tuple<ParamVector, double, std::vector<uint32_t>>>&
        members,
    uint32_t segment_count,
    const std::function<bool(size_t, uint32_t)>& hop_failure);

}  // namespace dmlsim
