#include <algorithm>

#include "dmlsim/orchestration.hpp"
#include "internal.hpp"

namespace dmlsim {

using internal::EventBuilder;

namespace {

struct SplitBatchCtx {
  EventBuilder* eb;
  const Topology* topo;
  std::string client;
  std::string server;
  const CutPlan* cut;
  const AccountingOptions* acct;
  double lr;
  uint32_t scalar_bytes;
};

std::vector<size_t> dep_of(size_t ev) {
  return ev == SIZE_MAX ? std::vector<size_t>{} : std::vector<size_t>{ev};
}

// One activation/gradient exchange: client forward, cut traffic up, server
// forward/backward, cut gradient down, client backward, SGD on every part.
// When the exchange failure draw hits, the batch is skipped after the failed
// activation upload. Returns the last event index.
size_t run_split_batch(SplitBatchCtx& ctx, size_t prev, bool exchange_ok,
                       const Batch& batch, Model& head, Model& mid,
                       std::optional<Model>& tail) {
  EventBuilder& eb = *ctx.eb;
  const Topology& topo = *ctx.topo;
  const Node& client_node = topo.node(ctx.client);
  const Node& server_node = topo.node(ctx.server);
  const Link& up = topo.link(ctx.client, ctx.server);
  const Link& down = topo.link(ctx.server, ctx.client);
  uint64_t rows = batch.size();
  uint64_t cut_bytes = rows * ctx.cut->cut_width * ctx.scalar_bytes;
  uint64_t act_up_bytes = cut_bytes;
  if (ctx.cut->label_sharing && ctx.acct->count_label_bytes)
    act_up_bytes += rows * ctx.acct->label_bytes_per_sample;

  uint64_t f_head = forward_flops(head.spec, rows);
  uint64_t f_mid = forward_flops(mid.spec, rows);

  size_t ev = eb.compute(ctx.client, f_head,
                         compute_time(f_head, client_node), true,
                         dep_of(prev), "client_forward");
  ForwardPass head_fwd = forward(head, batch.inputs);

  ev = eb.transmit(ctx.client, ctx.server, act_up_bytes,
                   transmission_time(act_up_bytes, up), LinkClass::uplink,
                   {ev}, exchange_ok, "activation_up");
  if (!exchange_ok) return ev;  // batch dropped for this round

  ev = eb.compute(ctx.server, f_mid, compute_time(f_mid, server_node), false,
                  {ev}, "server_forward");
  ForwardPass mid_fwd = forward(mid, head_fwd.logits);

  Matrix act_grad;
  Gradients mid_grads;
  if (ctx.cut->label_sharing) {
    auto [loss, grad_logits] = loss_and_grad(mid_fwd.logits, batch.labels);
    (void)loss;
    ev = eb.compute(ctx.server, 2 * f_mid, compute_time(2 * f_mid, server_node),
                    false, {ev}, "server_backward");
    mid_grads = backward(mid, mid_fwd, grad_logits, &act_grad);
  } else {
    // U-shaped split: the server output returns to the client, which holds
    // the output layer, computes the loss, and sends the gradient back.
    uint64_t tail_bytes = rows * ctx.cut->tail_cut_width * ctx.scalar_bytes;
    uint64_t f_tail = forward_flops(tail->spec, rows);
    ev = eb.transmit(ctx.server, ctx.client, tail_bytes,
                     transmission_time(tail_bytes, down), LinkClass::downlink,
                     {ev}, true, "server_output_down");
    ev = eb.compute(ctx.client, f_tail, compute_time(f_tail, client_node),
                    true, {ev}, "tail_forward");
    ForwardPass tail_fwd = forward(*tail, mid_fwd.logits);
    auto [loss, grad_logits] = loss_and_grad(tail_fwd.logits, batch.labels);
    (void)loss;
    ev = eb.compute(ctx.client, 2 * f_tail,
                    compute_time(2 * f_tail, client_node), true, {ev},
                    "tail_backward");
    Matrix tail_in_grad;
    Gradients tail_grads = backward(*tail, tail_fwd, grad_logits, &tail_in_grad);
    *tail = sgd_step(std::move(*tail), tail_grads, ctx.lr);
    ev = eb.transmit(ctx.client, ctx.server, tail_bytes,
                     transmission_time(tail_bytes, up), LinkClass::uplink,
                     {ev}, true, "tail_gradient_up");
    ev = eb.compute(ctx.server, 2 * f_mid, compute_time(2 * f_mid, server_node),
                    false, {ev}, "server_backward");
    mid_grads = backward(mid, mid_fwd, tail_in_grad, &act_grad);
  }
  mid = sgd_step(std::move(mid), mid_grads, ctx.lr);

  ev = eb.transmit(ctx.server, ctx.client, cut_bytes,
                   transmission_time(cut_bytes, down), LinkClass::downlink,
                   {ev}, true, "cut_gradient_down");
  ev = eb.compute(ctx.client, 2 * f_head, compute_time(2 * f_head, client_node),
                  true, {ev}, "client_backward");
  Gradients head_grads = backward(head, head_fwd, act_grad);
  head = sgd_step(std::move(head), head_grads, ctx.lr);
  return ev;
}

}  // namespace

RoundResult Experiment::run_sl_round() {
  const Topology& topo = setup_.topology;
  const std::string& server = topo.edges()[0];
  uint32_t dtype = setup_.spec.param_dtype_bytes;
  uint64_t handoff_bytes = cut_.client_params * dtype;
  Rng fail_rng(mix64(setup_.seeds.failures, round_));

  EventBuilder eb;
  size_t prev = SIZE_MAX;  // clients proceed strictly sequentially

  for (uint32_t ci = 0; ci < client_ids_.size(); ++ci) {
    const std::string& cid = client_ids_[ci];
    SplitBatchCtx ctx{&eb,  &topo, cid,
                      server, &cut_, &setup_.accounting,
                      setup_.knobs.lr, dtype};
    for (uint32_t e = 0; e < setup_.knobs.local_epochs; ++e) {
      auto batches = plan_batches(setup_.shards[ci], setup_.knobs.batch_size,
                                  setup_.seeds.data, ci, round_, e);
      for (const auto& idxs : batches) {
        Batch b = make_batch(setup_.train, idxs);
        bool ok = !sample_failure(topo.link(cid, server), fail_rng);
        prev = run_split_batch(ctx, prev, ok, b, split_.client_part,
                               split_.server_part, split_.tail_part);
      }
    }
    // Hand the client-side parameters to the next client, relayed through
    // the server: one logged transfer, both legs timed.
    const std::string& next = client_ids_[(ci + 1) % client_ids_.size()];
    Ratio dur = transmission_time(handoff_bytes, topo.link(cid, server)) +
                transmission_time(handoff_bytes, topo.link(server, next));
    prev = eb.transmit(cid, next, handoff_bytes, dur, LinkClass::handoff,
                       dep_of(prev), true, "client_model_handoff");
  }

  RoundResult result;
  result.trace.timing = schedule_round(std::move(eb.events));
  return result;
}

RoundResult Experiment::run_hfsl_round() {
  const Topology& topo = setup_.topology;
  const ProtocolKnobs& knobs = setup_.knobs;
  uint32_t dtype = setup_.spec.param_dtype_bytes;
  uint64_t model_bytes = setup_.spec.param_bytes();
  uint64_t part_up_bytes = cut_.client_params * dtype;
  Rng fail_rng(mix64(setup_.seeds.failures, round_));

  const std::vector<std::string>& edges = topo.edges();
  std::map<std::string, size_t> edge_index;
  for (size_t e = 0; e < edges.size(); ++e) edge_index[edges[e]] = e;
  std::map<std::string, uint32_t> client_index;
  for (uint32_t ci = 0; ci < client_ids_.size(); ++ci)
    client_index[client_ids_[ci]] = ci;

  EventBuilder eb;
  std::vector<size_t> edge_last(edges.size(), SIZE_MAX);
  std::vector<double> edge_weight(edges.size(), 0.0);

  for (size_t e = 0; e < edges.size(); ++e) {
    const std::string& edge_id = edges[e];
    SplitState base = split_global(edge_models_[e]);

    // Materialized aggregation entries: full models with weights.
    std::vector<Model> entry_models;
    std::vector<double> entry_weights;
    std::vector<size_t> upload_evs;

    // --- Cellular clients: per-client server copies, fully parallel. ---
    std::vector<Model> c_parts, h_parts;
    std::vector<std::optional<Model>> t_parts;
    std::vector<double> c_weights;
    double cell_samples = 0.0;
    for (const std::string& cid : topo.cellular_clients()) {
      if (edge_index.at(topo.edge_of(cid)) != e) continue;
      uint32_t ci = client_index.at(cid);
      Model head = base.client_part;
      Model mid = base.server_part;  // the server's copy for this client
      std::optional<Model> tail = base.tail_part;
      SplitBatchCtx ctx{&eb,   &topo, cid,
                        edge_id, &cut_, &setup_.accounting,
                        knobs.lr, dtype};
      size_t prev = SIZE_MAX;
      uint64_t samples = 0;
      for (uint32_t ep = 0; ep < knobs.local_epochs; ++ep) {
        auto batches = plan_batches(setup_.shards[ci], knobs.batch_size,
                                    setup_.seeds.data, ci, round_, ep);
        for (const auto& idxs : batches) {
          Batch b = make_batch(setup_.train, idxs);
          bool ok = !sample_failure(topo.link(cid, edge_id), fail_rng);
          prev = run_split_batch(ctx, prev, ok, b, head, mid, tail);
          if (ok) samples += idxs.size();
        }
      }
      upload_evs.push_back(eb.transmit(
          cid, edge_id, part_up_bytes,
          transmission_time(part_up_bytes, topo.link(cid, edge_id)),
          LinkClass::uplink, dep_of(prev), true, "client_part_upload"));
      double w = double(std::max<uint64_t>(samples, 1));
      c_parts.push_back(std::move(head));
      h_parts.push_back(std::move(mid));
      t_parts.push_back(std::move(tail));
      c_weights.push_back(w);
      cell_samples += w;
    }
    bool have_cellular = !c_parts.empty();
    if (have_cellular) {
      auto avg_parts = [&](const std::vector<Model>& parts) {
        std::vector<WeightedModel> ms;
        for (size_t i = 0; i < parts.size(); ++i)
          ms.push_back({&parts[i], c_weights[i]});
        return fedavg(ms);
      };
      SplitState merged;
      merged.client_part = avg_parts(c_parts);
      merged.server_part = avg_parts(h_parts);
      if (base.tail_part) {
        std::vector<Model> tails;
        for (auto& t : t_parts) tails.push_back(std::move(*t));
        merged.tail_part = avg_parts(tails);
      }
      entry_models.push_back(compose_split(merged));
      entry_weights.push_back(cell_samples);
    }

    // --- D2D clusters: pipeline over the chain, rotated start per round. ---
    for (const Cluster& cluster : topo.clusters()) {
      if (edge_index.at(cluster.edge_id) != e) continue;
      size_t k = cluster.chain.size();
      std::vector<ModelSpec> part_specs = split_even_by_params(setup_.spec, k);
      std::vector<size_t> bounds(k + 1, 0);
      for (size_t p = 0; p < k; ++p)
        bounds[p + 1] = bounds[p] + part_specs[p].layers.size();
      std::vector<Model> parts;
      for (size_t p = 0; p < k; ++p)
        parts.push_back(
            internal::slice_model(edge_models_[e], bounds[p], bounds[p + 1]));

      // The pipeline start rotates along the ring each round, so a different
      // member's data drives each round's pass.
      size_t start = round_ % k;
      auto holder = [&](size_t p) { return cluster.chain[(start + p) % k]; };
      uint32_t input_ci = client_index.at(holder(0));

      size_t prev = SIZE_MAX;
      uint64_t samples = 0;
      for (uint32_t ep = 0; ep < knobs.local_epochs; ++ep) {
        auto batches = plan_batches(setup_.shards[input_ci], knobs.batch_size,
                                    setup_.seeds.data, input_ci, round_, ep);
        for (const auto& idxs : batches) {
          Batch b = make_batch(setup_.train, idxs);
          uint64_t rows = b.size();
          bool ok = k == 1 || !sample_failure(
                                  topo.link(holder(0), holder(1)), fail_rng);
          // forward along the chain
          std::vector<ForwardPass> passes(k);
          Matrix x = b.inputs;
          for (size_t p = 0; p < k; ++p) {
            uint64_t f = forward_flops(parts[p].spec, rows);
            prev = eb.compute(holder(p), f,
                              compute_time(f, topo.node(holder(p))), true,
                              dep_of(prev), "pipeline_forward");
            if (!ok && p == 0) {
              uint64_t bytes = rows * parts[0].spec.output_width() * dtype;
              if (setup_.accounting.count_label_bytes)
                bytes += rows * setup_.accounting.label_bytes_per_sample;
              prev = eb.transmit(holder(0), holder(1), bytes,
                                 transmission_time(
                                     bytes, topo.link(holder(0), holder(1))),
                                 LinkClass::d2d, {prev}, false,
                                 "pipeline_activation");
              break;  // batch dropped
            }
            passes[p] = forward(parts[p], x);
            x = passes[p].logits;
            if (p + 1 < k) {
              uint64_t bytes = rows * parts[p].spec.output_width() * dtype;
              if (setup_.accounting.count_label_bytes)
                bytes += rows * setup_.accounting.label_bytes_per_sample;
              prev = eb.transmit(holder(p), holder(p + 1), bytes,
                                 transmission_time(
                                     bytes, topo.link(holder(p), holder(p + 1))),
                                 LinkClass::d2d, {prev}, true,
                                 "pipeline_activation");
            }
          }
          if (!ok) continue;
          samples += rows;
          auto [loss, grad] = loss_and_grad(x, b.labels);
          (void)loss;
          Matrix g = std::move(grad);
          for (size_t p = k; p-- > 0;) {
            uint64_t f = forward_flops(parts[p].spec, rows);
            prev = eb.compute(holder(p), 2 * f,
                              compute_time(2 * f, topo.node(holder(p))), true,
                              {prev}, "pipeline_backward");
            Matrix in_grad;
            Gradients grads =
                backward(parts[p], passes[p], g, p > 0 ? &in_grad : nullptr);
            parts[p] = sgd_step(std::move(parts[p]), grads, knobs.lr);
            if (p > 0) {
              uint64_t bytes = rows * parts[p].spec.input_width() * dtype;
              prev = eb.transmit(holder(p), holder(p - 1), bytes,
                                 transmission_time(
                                     bytes, topo.link(holder(p), holder(p - 1))),
                                 LinkClass::d2d, {prev}, true,
                                 "pipeline_gradient");
              g = std::move(in_grad);
            }
          }
        }
      }

      // Relay the trained parts chainward so the terminus holds the whole
      // model, then upload it.
      uint64_t carry = 0;
      for (size_t q = 0; q + 1 < k; ++q) {
        size_t part_at_q = (q + k - start) % k;
        carry += part_specs[part_at_q].param_count() * dtype;
        prev = eb.transmit(cluster.chain[q], cluster.chain[q + 1], carry,
                           transmission_time(carry, topo.link(
                                                        cluster.chain[q],
                                                        cluster.chain[q + 1])),
                           LinkClass::d2d, dep_of(prev), true,
                           "part_relay");
      }
      upload_evs.push_back(eb.transmit(
          cluster.chain.back(), edge_id, model_bytes,
          transmission_time(model_bytes,
                            topo.link(cluster.chain.back(), edge_id)),
          LinkClass::uplink, dep_of(prev), true, "cluster_model_upload"));

      std::vector<const Model*> ordered;
      for (size_t p = 0; p < k; ++p) ordered.push_back(&parts[p]);
      Model cluster_model = internal::compose_models(ordered, dtype);
      cluster_model.spec.validate();
      entry_models.push_back(std::move(cluster_model));
      entry_weights.push_back(double(std::max<uint64_t>(samples, 1)));
    }

    // Edge-level federated averaging over the composite and cluster models.
    size_t agg_ev = eb.compute(edge_id, 0, Ratio(), false, upload_evs,
                               "edge_fedavg");
    std::vector<WeightedModel> entries;
    for (size_t i = 0; i < entry_models.size(); ++i)
      entries.push_back({&entry_models[i], entry_weights[i]});
    if (entries.empty())
      fail(ErrorKind::config, "hfsl: edge '" + edge_id + "' has no clients");
    edge_models_[e] = fedavg(entries);
    edge_last[e] = agg_ev;
    for (double w : entry_weights) edge_weight[e] += w;

    // Downlink: the client subnetwork returns to cellular clients; clusters
    // receive the full model relayed back along the chain.
    if (have_cellular) {
      if (setup_.accounting.downlink == DownlinkConvention::broadcast) {
        Ratio dur;
        for (const std::string& cid : topo.cellular_clients()) {
          if (edge_index.at(topo.edge_of(cid)) != e) continue;
          dur = max(dur,
                    transmission_time(part_up_bytes, topo.link(edge_id, cid)));
        }
        eb.transmit(edge_id, "*", part_up_bytes, dur, LinkClass::downlink,
                    {agg_ev}, true, "client_part_broadcast");
      } else {
        for (const std::string& cid : topo.cellular_clients()) {
          if (edge_index.at(topo.edge_of(cid)) != e) continue;
          eb.transmit(edge_id, cid, part_up_bytes,
                      transmission_time(part_up_bytes, topo.link(edge_id, cid)),
                      LinkClass::downlink, {agg_ev}, true,
                      "client_part_download");
        }
      }
    }
    for (const Cluster& cluster : topo.clusters()) {
      if (edge_index.at(cluster.edge_id) != e) continue;
      const std::string& terminus = cluster.chain.back();
      size_t ev = eb.transmit(edge_id, terminus, model_bytes,
                              transmission_time(model_bytes,
                                                topo.link(edge_id, terminus)),
                              LinkClass::downlink, {agg_ev}, true,
                              "cluster_model_download");
      for (size_t pos = cluster.chain.size() - 1; pos-- > 0;)
        ev = eb.transmit(cluster.chain[pos + 1], cluster.chain[pos],
                         model_bytes,
                         transmission_time(model_bytes,
                                           topo.link(cluster.chain[pos + 1],
                                                     cluster.chain[pos])),
                         LinkClass::d2d, {ev}, true, "cluster_download_hop");
    }
  }

  // Optional horizontal aggregation, then the periodic main-server sync.
  if (knobs.horizontal_aggregation && edges.size() > 1) {
    std::vector<Model> snapshot = edge_models_;
    for (size_t e = 0; e < edges.size(); ++e) {
      size_t right = (e + 1) % edges.size();
      const Link& l = topo.link(edges[right], edges[e]);
      size_t tx = eb.transmit(edges[right], edges[e], model_bytes,
                              transmission_time(model_bytes, l),
                              LinkClass::edge_edge, dep_of(edge_last[right]),
                              true, "horizontal_exchange");
      std::vector<size_t> deps{tx};
      if (edge_last[e] != SIZE_MAX) deps.push_back(edge_last[e]);
      size_t hg = eb.compute(edges[e], 0, Ratio(), false, deps,
                             "horizontal_aggregate");
      std::vector<WeightedModel> pair{
          {&snapshot[e], std::max(edge_weight[e], 1.0)},
          {&snapshot[right], std::max(edge_weight[right], 1.0)}};
      edge_models_[e] = fedavg(pair);
      edge_last[e] = hg;
    }
  }

  bool main_sync = knobs.main_sync_every > 0 &&
                   (round_ + 1) % knobs.main_sync_every == 0;
  if (main_sync) {
    std::vector<size_t> ups;
    for (size_t e = 0; e < edges.size(); ++e)
      ups.push_back(eb.transmit(
          edges[e], topo.main_server(), model_bytes,
          transmission_time(model_bytes,
                            topo.link(edges[e], topo.main_server())),
          LinkClass::edge_main, dep_of(edge_last[e]), true,
          "edge_model_upload"));
    size_t main_agg = eb.compute(topo.main_server(), 0, Ratio(), false, ups,
                                 "main_fedavg");
    std::vector<WeightedModel> entries;
    for (size_t e = 0; e < edges.size(); ++e)
      entries.push_back({&edge_models_[e], std::max(edge_weight[e], 1.0)});
    global_ = fedavg(entries);
    for (size_t e = 0; e < edges.size(); ++e) {
      eb.transmit(topo.main_server(), edges[e], model_bytes,
                  transmission_time(model_bytes,
                                    topo.link(topo.main_server(), edges[e])),
                  LinkClass::edge_main, {main_agg}, true,
                  "edge_model_download");
      edge_models_[e] = global_;
    }
  }

  RoundResult result;
  result.trace.timing = schedule_round(std::move(eb.events));
  return result;
}

}  // namespace dmlsim
