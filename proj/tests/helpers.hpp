#pragma once

// Shared fixtures for the protocol tests and the acceptance suite.

#include <vector>

#include "dmlsim/dataset.hpp"
#include "dmlsim/metrics.hpp"
#include "dmlsim/network.hpp"
#include "dmlsim/orchestration.hpp"

namespace dmlsim::testing {

struct SetupOptions {
  Architecture arch = Architecture::fl;
  uint32_t clients = 4;
  uint32_t classes = 4;
  uint32_t per_class = 12;
  uint32_t dim = 6;
  double separation = 4.0;
  std::vector<uint32_t> hidden = {8};
  std::vector<uint32_t> d2d_clusters = {};  // cellular clients if empty
  double failure_prob = 0.0;
  uint32_t segment_count = 1;
  uint32_t segments_sent = 1;
  size_t cut_layer = 1;
  bool label_sharing = true;
  uint32_t vertical_rounds = 1;
  bool horizontal = false;
  uint32_t edge_servers = 1;
  uint32_t local_epochs = 1;
  double lr = 0.05;
  size_t batch_size = 8;
  uint32_t main_sync_every = 1;
  uint64_t dataset_seed = 5;
  Seeds seeds = {};
  DownlinkConvention downlink = DownlinkConvention::per_client;
};

// Synthetic non-IID setup: class c lives on client c (classes == clients)
// unless a custom group layout is wanted.
inline ExperimentSetup make_setup(const SetupOptions& o) {
  ExperimentSetup setup;
  setup.arch = o.arch;
  Dataset full = synth_blobs(o.classes, o.per_class, o.dim, o.separation,
                             o.dataset_seed);
  auto [train, test] = split_train_test(full, 0.25);
  setup.train = std::move(train);
  setup.test = std::move(test);

  std::vector<std::vector<uint32_t>> groups(o.clients);
  for (uint32_t c = 0; c < o.classes; ++c)
    groups[c % o.clients].push_back(c);
  setup.shards = partition_by_labels(setup.train, groups);

  TopologyShorthand sh;
  sh.cellular_clients = o.d2d_clusters.empty() ? o.clients : 0;
  sh.d2d_clusters = o.d2d_clusters;
  sh.edge_servers = o.edge_servers;
  sh.failure_prob = o.failure_prob;
  setup.topology = Topology::build(expand_shorthand(sh));

  std::vector<uint32_t> widths;
  widths.push_back(o.dim);
  widths.insert(widths.end(), o.hidden.begin(), o.hidden.end());
  widths.push_back(o.classes);
  setup.spec = ModelSpec::mlp(widths);

  setup.knobs.segment_count = o.segment_count;
  setup.knobs.segments_sent = o.segments_sent;
  setup.knobs.cut_layer = o.cut_layer;
  setup.knobs.label_sharing = o.label_sharing;
  setup.knobs.vertical_rounds = o.vertical_rounds;
  setup.knobs.horizontal_aggregation = o.horizontal;
  setup.knobs.local_epochs = o.local_epochs;
  setup.knobs.lr = o.lr;
  setup.knobs.batch_size = o.batch_size;
  setup.knobs.main_sync_every = o.main_sync_every;
  setup.seeds = o.seeds;
  setup.accounting.downlink = o.downlink;
  return setup;
}

// Reference trajectory: plain sequential training of the full (unsplit)
// model over the clients' batch sequences, exactly as the split protocol
// visits them.
inline Model unsplit_sequential_round(Model model, const ExperimentSetup& setup,
                                      uint32_t round) {
  for (uint32_t ci = 0; ci < setup.shards.size(); ++ci) {
    for (uint32_t e = 0; e < setup.knobs.local_epochs; ++e) {
      auto batches = plan_batches(setup.shards[ci], setup.knobs.batch_size,
                                  setup.seeds.data, ci, round, e);
      for (const auto& idxs : batches) {
        Batch b = make_batch(setup.train, idxs);
        ForwardPass fwd = forward(model, b.inputs);
        auto [loss, gl] = loss_and_grad(fwd.logits, b.labels);
        (void)loss;
        Gradients g = backward(model, fwd, gl);
        model = sgd_step(std::move(model), g, setup.knobs.lr);
      }
    }
  }
  return model;
}

}  // namespace dmlsim::testing
