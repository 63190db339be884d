#include "dmlsim/orchestration.hpp"

#include <algorithm>
#include <set>

#include "internal.hpp"

namespace dmlsim {

using internal::EventBuilder;

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::cl: return "cl";
    case Architecture::fl: return "fl";
    case Architecture::sl: return "sl";
    case Architecture::hsfl: return "hsfl";
    case Architecture::hfsl: return "hfsl";
  }
  return "?";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "cl") return Architecture::cl;
  if (s == "fl") return Architecture::fl;
  if (s == "sl") return Architecture::sl;
  if (s == "hsfl") return Architecture::hsfl;
  if (s == "hfsl") return Architecture::hfsl;
  fail(ErrorKind::config, "unknown architecture '" + s + "'");
}

std::string to_string(DownlinkConvention c) {
  return c == DownlinkConvention::per_client ? "per_client" : "broadcast";
}

void ProtocolKnobs::validate() const {
  if (segment_count < 1)
    fail(ErrorKind::config, "protocol.segment_count must be >= 1");
  if (segments_sent < 1 || segments_sent > segment_count)
    fail(ErrorKind::config,
         "protocol.segments_sent must be in [1, segment_count]");
  if (vertical_rounds < 1)
    fail(ErrorKind::config, "protocol.vertical_rounds must be >= 1");
  if (local_epochs < 1)
    fail(ErrorKind::config, "protocol.local_epochs must be >= 1");
  if (!(lr > 0.0)) fail(ErrorKind::config, "protocol.lr must be positive");
  if (batch_size < 1)
    fail(ErrorKind::config, "protocol.batch_size must be >= 1");
}

std::vector<std::vector<size_t>> plan_batches(const Shard& shard,
                                              size_t batch_size,
                                              uint64_t data_seed,
                                              uint32_t client_index,
                                              uint32_t round, uint32_t epoch) {
  std::vector<size_t> order = shard.indices;
  Rng rng(mix64(data_seed, client_index, round, epoch));
  rng.shuffle(order);
  std::vector<std::vector<size_t>> batches;
  for (size_t pos = 0; pos < order.size(); pos += batch_size) {
    size_t end = std::min(pos + batch_size, order.size());
    batches.emplace_back(order.begin() + pos, order.begin() + end);
  }
  return batches;
}

double evaluate(const Model& model, const Dataset& test) {
  if (test.dim() != model.spec.input_width())
    fail(ErrorKind::shape, "evaluate: test input width " +
                               std::to_string(test.dim()) +
                               " != model input width " +
                               std::to_string(model.spec.input_width()));
  size_t correct = 0;
  constexpr size_t kChunk = 512;
  for (size_t begin = 0; begin < test.size(); begin += kChunk) {
    size_t end = std::min(begin + kChunk, test.size());
    Matrix chunk(end - begin, test.dim());
    std::copy_n(&test.inputs.data[begin * test.dim()],
                (end - begin) * test.dim(), chunk.data.begin());
    ForwardPass fwd = forward(model, chunk);
    for (size_t r = 0; r < fwd.logits.rows; ++r) {
      size_t best = 0;
      for (size_t c = 1; c < fwd.logits.cols; ++c)
        if (fwd.logits.at(r, c) > fwd.logits.at(r, best)) best = c;
      if (best == test.labels[begin + r]) ++correct;
    }
  }
  return test.size() == 0 ? 0.0 : double(correct) / double(test.size());
}

namespace internal {

Model slice_model(const Model& full, size_t begin, size_t end) {
  Model m;
  m.spec.param_dtype_bytes = full.spec.param_dtype_bytes;
  m.spec.layers.assign(full.spec.layers.begin() + begin,
                       full.spec.layers.begin() + end);
  m.spec.validate(/*require_logit_output=*/false);
  m.weights.assign(full.weights.begin() + begin, full.weights.begin() + end);
  m.biases.assign(full.biases.begin() + begin, full.biases.begin() + end);
  return m;
}

Model compose_models(const std::vector<const Model*>& parts,
                     uint32_t param_dtype_bytes) {
  Model m;
  m.spec.param_dtype_bytes = param_dtype_bytes;
  for (const Model* p : parts) {
    if (!m.spec.layers.empty() &&
        m.spec.layers.back().out != p->spec.layers.front().in)
      fail(ErrorKind::shape, "compose_models: parts are not adjacent");
    m.spec.layers.insert(m.spec.layers.end(), p->spec.layers.begin(),
                         p->spec.layers.end());
    m.weights.insert(m.weights.end(), p->weights.begin(), p->weights.end());
    m.biases.insert(m.biases.end(), p->biases.begin(), p->biases.end());
  }
  m.spec.validate(/*require_logit_output=*/false);
  return m;
}

}  // namespace internal

Experiment::Experiment(ExperimentSetup setup) : setup_(std::move(setup)) {
  setup_.spec.validate();
  setup_.knobs.validate();
  const Topology& topo = setup_.topology;
  client_ids_ = topo.clients();
  if (setup_.shards.size() != client_ids_.size())
    fail(ErrorKind::config, "experiment: " + std::to_string(setup_.shards.size()) +
                                " shards for " +
                                std::to_string(client_ids_.size()) +
                                " topology clients");
  Architecture a = setup_.arch;
  if (a == Architecture::cl || a == Architecture::fl || a == Architecture::sl) {
    if (!topo.clusters().empty())
      fail(ErrorKind::config, "experiment: " + to_string(a) +
                                  " does not support d2d clusters");
    if (topo.edges().size() != 1)
      fail(ErrorKind::config,
           "experiment: " + to_string(a) + " requires exactly one edge server");
  }
  global_ = init_model(setup_.spec, setup_.seeds.init);
  if (a == Architecture::hsfl) {
    uint64_t params = setup_.spec.param_count();
    uint32_t m_count = setup_.knobs.segment_count;
    if (m_count > params)
      fail(ErrorKind::config, "experiment: segment_count exceeds parameter count");
    uint64_t padded = (params + m_count - 1) / m_count;
    if (uint64_t(m_count - 1) * padded > params)
      fail(ErrorKind::config,
           "experiment: segment_count pads beyond the final segment");
    locals_.assign(client_ids_.size(), global_);
  }
  if (a == Architecture::hsfl || a == Architecture::hfsl)
    edge_models_.assign(topo.edges().size(), global_);
  if (a == Architecture::sl || a == Architecture::hfsl) {
    cut_ = cut_at_layer(setup_.spec, setup_.knobs.cut_layer,
                        setup_.knobs.label_sharing);
    if (a == Architecture::hfsl) {
      if (!setup_.knobs.label_sharing && !topo.clusters().empty())
        fail(ErrorKind::config,
             "experiment: U-shaped split is not supported on d2d pipelines");
      for (const Cluster& c : topo.clusters())
        if (c.chain.size() > setup_.spec.layers.size())
          fail(ErrorKind::config, "experiment: cluster '" + c.id + "' has " +
                                      std::to_string(c.chain.size()) +
                                      " members but the model has only " +
                                      std::to_string(setup_.spec.layers.size()) +
                                      " layers to split");
    }
    split_ = split_global(global_);
  }
}

Experiment::SplitState Experiment::split_global(const Model& full) const {
  SplitState s;
  size_t nl = full.spec.layers.size();
  s.client_part = internal::slice_model(full, 0, cut_.cut_layer);
  if (cut_.label_sharing) {
    s.server_part = internal::slice_model(full, cut_.cut_layer, nl);
  } else {
    s.server_part = internal::slice_model(full, cut_.cut_layer, nl - 1);
    s.tail_part = internal::slice_model(full, nl - 1, nl);
  }
  return s;
}

Model Experiment::compose_split(const SplitState& s) const {
  std::vector<const Model*> parts{&s.client_part, &s.server_part};
  if (s.tail_part) parts.push_back(&*s.tail_part);
  Model m = internal::compose_models(parts, setup_.spec.param_dtype_bytes);
  m.spec.validate();
  return m;
}

Model Experiment::global_model() const {
  switch (setup_.arch) {
    case Architecture::cl:
    case Architecture::fl:
      return global_;
    case Architecture::sl:
      return compose_split(split_);
    case Architecture::hsfl:
    case Architecture::hfsl: {
      if (edge_models_.size() == 1) return edge_models_[0];
      // Evaluation-side view only; carries no logged traffic.
      std::vector<WeightedModel> entries;
      std::vector<double> weights(edge_models_.size(), 0.0);
      for (size_t ci = 0; ci < client_ids_.size(); ++ci) {
        const std::string& edge = setup_.topology.edge_of(client_ids_[ci]);
        for (size_t e = 0; e < setup_.topology.edges().size(); ++e)
          if (setup_.topology.edges()[e] == edge)
            weights[e] += double(std::max<size_t>(setup_.shards[ci].indices.size(), 1));
      }
      for (size_t e = 0; e < edge_models_.size(); ++e)
        entries.push_back({&edge_models_[e], weights[e]});
      return fedavg(entries);
    }
  }
  fail(ErrorKind::state, "global_model: bad architecture");
}

ParamVector Experiment::global_params() const { return flatten(global_model()); }

Model Experiment::train_local(Model model, uint32_t client_index,
                              uint32_t base_epoch, uint64_t* samples_out) const {
  const Shard& shard = setup_.shards[client_index];
  uint64_t samples = 0;
  for (uint32_t e = 0; e < setup_.knobs.local_epochs; ++e) {
    auto batches = plan_batches(shard, setup_.knobs.batch_size,
                                setup_.seeds.data, client_index, round_,
                                base_epoch + e);
    for (const auto& idxs : batches) {
      Batch b = make_batch(setup_.train, idxs);
      ForwardPass fwd = forward(model, b.inputs);
      auto [loss, grad_logits] = loss_and_grad(fwd.logits, b.labels);
      (void)loss;
      Gradients grads = backward(model, fwd, grad_logits);
      model = sgd_step(std::move(model), grads, setup_.knobs.lr);
      samples += idxs.size();
    }
  }
  if (samples_out) *samples_out = samples;
  return model;
}

std::vector<uint32_t> Experiment::choose_segments(uint32_t client_index,
                                                  uint32_t vertical_round,
                                                  Rng& rng) const {
  if (setup_.segment_policy)
    return setup_.segment_policy(client_index, round_, vertical_round,
                                 setup_.knobs.segment_count,
                                 setup_.knobs.segments_sent, rng);
  return rng.sample_without_replacement(setup_.knobs.segment_count,
                                        setup_.knobs.segments_sent);
}

RoundResult Experiment::run_round() {
  RoundResult result;
  switch (setup_.arch) {
    case Architecture::cl: result = run_cl_round(); break;
    case Architecture::fl: result = run_fl_round(); break;
    case Architecture::sl: result = run_sl_round(); break;
    case Architecture::hsfl: result = run_hsfl_round(); break;
    case Architecture::hfsl: result = run_hfsl_round(); break;
  }
  result.trace.arch = setup_.arch;
  result.trace.round = round_;
  ++round_;
  result.accuracy = evaluate(global_model(), setup_.test);
  return result;
}

RoundResult Experiment::run_cl_round() {
  // Single node (the edge server) trains over the union of all shards.
  Shard all;
  all.client_id = 0;
  std::set<size_t> merged;
  std::set<uint32_t> labels;
  for (const Shard& s : setup_.shards) {
    merged.insert(s.indices.begin(), s.indices.end());
    labels.insert(s.label_set.begin(), s.label_set.end());
  }
  all.indices.assign(merged.begin(), merged.end());
  all.label_set.assign(labels.begin(), labels.end());

  // Batch stream keyed like a client with index 0, so a one-client FL run on
  // the same index set follows the identical sample sequence.
  uint64_t samples = 0;
  Model model = global_;
  for (uint32_t e = 0; e < setup_.knobs.local_epochs; ++e) {
    auto batches = plan_batches(all, setup_.knobs.batch_size, setup_.seeds.data,
                                0, round_, e);
    for (const auto& idxs : batches) {
      Batch b = make_batch(setup_.train, idxs);
      ForwardPass fwd = forward(model, b.inputs);
      auto [loss, grad_logits] = loss_and_grad(fwd.logits, b.labels);
      (void)loss;
      Gradients grads = backward(model, fwd, grad_logits);
      model = sgd_step(std::move(model), grads, setup_.knobs.lr);
      samples += idxs.size();
    }
  }
  global_ = std::move(model);

  EventBuilder eb;
  const std::string& node_id = setup_.topology.edges()[0];
  uint64_t flops = count_flops(setup_.spec, samples);
  eb.compute(node_id, flops, compute_time(flops, setup_.topology.node(node_id)),
             /*client_side=*/true, {}, "train");
  RoundResult result;
  result.trace.timing = schedule_round(std::move(eb.events));
  return result;
}

RoundResult Experiment::run_fl_round() {
  const Topology& topo = setup_.topology;
  const std::string& edge = topo.edges()[0];
  uint64_t model_bytes = setup_.spec.param_bytes();
  Rng fail_rng(mix64(setup_.seeds.failures, round_));

  EventBuilder eb;
  std::vector<Model> trained;
  std::vector<double> weights;
  std::vector<size_t> upload_events;
  std::vector<bool> delivered;
  for (uint32_t ci = 0; ci < client_ids_.size(); ++ci) {
    const std::string& cid = client_ids_[ci];
    uint64_t samples = 0;
    trained.push_back(train_local(global_, ci, 0, &samples));
    weights.push_back(double(std::max<uint64_t>(samples, 1)));
    uint64_t flops = count_flops(setup_.spec, samples);
    size_t train_ev = eb.compute(cid, flops,
                                 compute_time(flops, topo.node(cid)),
                                 /*client_side=*/true, {}, "train");
    const Link& up = topo.link(cid, edge);
    // One failure draw per full-model upload.
    bool ok = !sample_failure(up, fail_rng);
    upload_events.push_back(eb.transmit(cid, edge, model_bytes,
                                        transmission_time(model_bytes, up),
                                        LinkClass::uplink, {train_ev}, ok,
                                        "model_upload"));
    delivered.push_back(ok);
  }

  std::vector<WeightedModel> received;
  for (size_t ci = 0; ci < trained.size(); ++ci)
    if (delivered[ci]) received.push_back({&trained[ci], weights[ci]});

  RoundResult result;
  if (received.empty()) {
    // Every upload failed: the round is aborted and the global model kept.
    result.trace.aborted = true;
    result.trace.timing = schedule_round(std::move(eb.events));
    return result;
  }

  global_ = fedavg(received);
  size_t agg_ev = eb.compute(edge, 0, Ratio(), /*client_side=*/false,
                             upload_events, "fedavg");
  if (setup_.accounting.downlink == DownlinkConvention::per_client) {
    for (const std::string& cid : client_ids_) {
      const Link& down = topo.link(edge, cid);
      eb.transmit(edge, cid, model_bytes, transmission_time(model_bytes, down),
                  LinkClass::downlink, {agg_ev}, true, "model_download");
    }
  } else {
    Ratio dur;
    for (const std::string& cid : client_ids_)
      dur = max(dur, transmission_time(model_bytes, topo.link(edge, cid)));
    eb.transmit(edge, "*", model_bytes, dur, LinkClass::downlink, {agg_ev},
                true, "model_broadcast");
  }
  result.trace.timing = schedule_round(std::move(eb.events));
  return result;
}

}  // namespace dmlsim
