#include <algorithm>
#include <set>

#include "dmlsim/orchestration.hpp"
#include "internal.hpp"

namespace dmlsim {

using internal::EventBuilder;

ChainPassResult d2d_chain_pass(
    const std::vector<std::tuple<ParamVector, double, std::vector<uint32_t>>>&
        members,
    uint32_t segment_count, const std::function<bool(size_t, uint32_t)>& hop_failure) {
  if (members.empty())
    fail(ErrorKind::config, "d2d_chain_pass: empty chain");
  // id -> ordered contributions (payload, weight). A contribution enters at
  // its member's outgoing transmission; a failure there drops only that
  // member's contribution while inherited values continue down the chain.
  std::map<uint32_t, std::vector<std::pair<std::vector<double>, double>>> acc;
  ChainPassResult res;
  for (size_t pos = 0; pos < members.size(); ++pos) {
    const auto& [pv, weight, ids_in] = members[pos];
    auto segs = make_segments(pv, segment_count);
    std::vector<uint32_t> ids = ids_in;
    std::sort(ids.begin(), ids.end());
    for (uint32_t id : ids) {
      if (id >= segment_count)
        fail(ErrorKind::incompatible,
             "d2d_chain_pass: segment id out of range");
      if (!hop_failure(pos, id))
        acc[id].emplace_back(segs[id].payload, weight);
    }
    uint64_t carried = acc.size();
    if (pos + 1 < members.size())
      res.hop_segment_counts.push_back(carried);
    else
      res.upload_segment_count = carried;
  }
  for (auto& [id, list] : acc) {
    if (list.empty()) continue;
    ChainContribution c;
    if (list.size() == 1) {
      c.payload_mean = std::move(list[0].first);
      c.weight = list[0].second;
    } else {
      double wsum = 0.0;
      for (const auto& [p, w] : list) wsum += w;
      c.payload_mean.assign(list[0].first.size(), 0.0);
      for (size_t k = 0; k < c.payload_mean.size(); ++k) {
        double v = 0.0;
        for (const auto& [p, w] : list) v += p[k] * w;
        c.payload_mean[k] = v / wsum;
      }
      c.weight = wsum;
    }
    res.contributions.emplace(id, std::move(c));
  }
  return res;
}

namespace {

// Overwrite the chosen segment ranges of dst with src's values.
void patch_segments(Model& dst, const Model& src,
                    const std::vector<uint32_t>& ids, uint32_t segment_count) {
  ParamVector pv_dst = flatten(dst);
  ParamVector pv_src = flatten(src);
  uint64_t total = pv_dst.scalars.size();
  uint64_t padded = (total + segment_count - 1) / segment_count;
  for (uint32_t id : ids) {
    uint64_t begin = uint64_t(id) * padded;
    uint64_t end = std::min(begin + padded, total);
    for (uint64_t k = begin; k < end; ++k)
      pv_dst.scalars[k] = pv_src.scalars[k];
  }
  dst = unflatten(pv_dst, dst.spec);
}

}  // namespace

RoundResult Experiment::run_hsfl_round() {
  const Topology& topo = setup_.topology;
  const ProtocolKnobs& knobs = setup_.knobs;
  uint32_t seg_count = knobs.segment_count;
  uint64_t total_params = setup_.spec.param_count();
  uint64_t padded = (total_params + seg_count - 1) / seg_count;
  uint64_t seg_bytes = padded * setup_.spec.param_dtype_bytes;
  uint64_t model_bytes = setup_.spec.param_bytes();
  Rng fail_rng(mix64(setup_.seeds.failures, round_));

  const std::vector<std::string>& edges = topo.edges();
  std::map<std::string, size_t> edge_index;
  for (size_t e = 0; e < edges.size(); ++e) edge_index[edges[e]] = e;

  // Client index lookup and per-edge cellular membership.
  std::map<std::string, uint32_t> client_index;
  for (uint32_t ci = 0; ci < client_ids_.size(); ++ci)
    client_index[client_ids_[ci]] = ci;

  EventBuilder eb;
  std::vector<size_t> client_last(client_ids_.size(), SIZE_MAX);
  std::vector<size_t> edge_last(edges.size(), SIZE_MAX);
  std::vector<double> edge_weight(edges.size(), 0.0);

  auto dep_of = [](size_t ev) {
    return ev == SIZE_MAX ? std::vector<size_t>{} : std::vector<size_t>{ev};
  };

  for (uint32_t v = 0; v < knobs.vertical_rounds; ++v) {
    // Local training for every client.
    std::vector<size_t> train_ev(client_ids_.size());
    std::vector<uint64_t> samples(client_ids_.size());
    std::vector<std::vector<uint32_t>> chosen(client_ids_.size());
    for (uint32_t ci = 0; ci < client_ids_.size(); ++ci) {
      locals_[ci] = train_local(std::move(locals_[ci]), ci,
                                v * knobs.local_epochs, &samples[ci]);
      uint64_t flops = count_flops(setup_.spec, samples[ci]);
      train_ev[ci] = eb.compute(client_ids_[ci], flops,
                                compute_time(flops, topo.node(client_ids_[ci])),
                                /*client_side=*/true, dep_of(client_last[ci]),
                                "train");
      Rng seg_rng(mix64(setup_.seeds.segments, ci, round_, v));
      chosen[ci] = choose_segments(ci, v, seg_rng);
      std::sort(chosen[ci].begin(), chosen[ci].end());
    }

    std::vector<SegmentReceipts> receipts(edges.size());
    std::vector<std::vector<size_t>> upload_evs(edges.size());

    // Cellular clients upload their chosen segments in parallel.
    for (const std::string& cid : topo.cellular_clients()) {
      uint32_t ci = client_index.at(cid);
      size_t e = edge_index.at(topo.edge_of(cid));
      const Link& up = topo.link(cid, edges[e]);
      auto segs = make_segments(flatten(locals_[ci]), seg_count);
      for (uint32_t id : chosen[ci]) {
        bool ok = !sample_failure(up, fail_rng);
        upload_evs[e].push_back(eb.transmit(
            cid, edges[e], seg_bytes, transmission_time(seg_bytes, up),
            LinkClass::uplink, {train_ev[ci]}, ok, "segment_upload"));
        if (ok)
          receipts[e][id].emplace_back(segs[id],
                                       double(std::max<uint64_t>(samples[ci], 1)));
      }
    }

    // D2D chains: sequential pass, terminus uploads the running aggregate.
    for (const Cluster& cluster : topo.clusters()) {
      size_t e = edge_index.at(cluster.edge_id);
      std::vector<std::tuple<ParamVector, double, std::vector<uint32_t>>> members;
      for (const std::string& mid : cluster.chain) {
        uint32_t ci = client_index.at(mid);
        members.emplace_back(flatten(locals_[ci]),
                             double(std::max<uint64_t>(samples[ci], 1)),
                             chosen[ci]);
      }
      auto hop_failure = [&](size_t pos, uint32_t) {
        const std::string& src = cluster.chain[pos];
        const std::string& dst = pos + 1 < cluster.chain.size()
                                     ? cluster.chain[pos + 1]
                                     : cluster.edge_id;
        return sample_failure(topo.link(src, dst), fail_rng);
      };
      ChainPassResult pass = d2d_chain_pass(members, seg_count, hop_failure);

      size_t prev_hop = SIZE_MAX;
      for (size_t pos = 0; pos + 1 < cluster.chain.size(); ++pos) {
        uint32_t ci = client_index.at(cluster.chain[pos]);
        uint64_t bytes = pass.hop_segment_counts[pos] * seg_bytes;
        const Link& l = topo.link(cluster.chain[pos], cluster.chain[pos + 1]);
        std::vector<size_t> deps{train_ev[ci]};
        if (prev_hop != SIZE_MAX) deps.push_back(prev_hop);
        prev_hop = eb.transmit(cluster.chain[pos], cluster.chain[pos + 1],
                               bytes, transmission_time(bytes, l),
                               LinkClass::d2d, deps, true, "chain_hop");
      }
      uint32_t term_ci = client_index.at(cluster.chain.back());
      uint64_t up_bytes = pass.upload_segment_count * seg_bytes;
      const Link& up = topo.link(cluster.chain.back(), cluster.edge_id);
      std::vector<size_t> deps{train_ev[term_ci]};
      if (prev_hop != SIZE_MAX) deps.push_back(prev_hop);
      upload_evs[e].push_back(eb.transmit(
          cluster.chain.back(), cluster.edge_id, up_bytes,
          transmission_time(up_bytes, up), LinkClass::uplink, deps, true,
          "chain_upload"));
      for (auto& [id, contrib] : pass.contributions) {
        Segment s;
        s.segment_id = id;
        s.segment_count = seg_count;
        s.total_params = total_params;
        uint64_t begin = uint64_t(id) * padded;
        s.logical_len = std::min(begin + padded, total_params) - begin;
        s.payload = std::move(contrib.payload_mean);
        receipts[e][id].emplace_back(std::move(s), contrib.weight);
      }
    }

    // Segment-wise aggregation per edge; missing ids keep the edge's
    // previous values.
    std::vector<size_t> agg_ev(edges.size());
    for (size_t e = 0; e < edges.size(); ++e) {
      std::vector<size_t> deps = upload_evs[e];
      if (edge_last[e] != SIZE_MAX) deps.push_back(edge_last[e]);
      agg_ev[e] = eb.compute(edges[e], 0, Ratio(), /*client_side=*/false,
                             deps, "segment_aggregate");
      ParamVector fallback = flatten(edge_models_[e]);
      ParamVector merged = aggregate_segments(receipts[e], fallback, seg_count);
      edge_models_[e] = unflatten(merged, setup_.spec);
      edge_last[e] = agg_ev[e];
    }

    // Downlink mirrors each client's uploaded segment ids.
    if (setup_.accounting.downlink == DownlinkConvention::broadcast) {
      for (size_t e = 0; e < edges.size(); ++e) {
        Ratio dur;
        bool any = false;
        for (const std::string& cid : topo.cellular_clients()) {
          if (edge_index.at(topo.edge_of(cid)) != e) continue;
          dur = max(dur, transmission_time(model_bytes, topo.link(edges[e], cid)));
          any = true;
        }
        if (!any) continue;
        size_t ev = eb.transmit(edges[e], "*", model_bytes, dur,
                                LinkClass::downlink, {agg_ev[e]}, true,
                                "model_broadcast");
        for (const std::string& cid : topo.cellular_clients()) {
          if (edge_index.at(topo.edge_of(cid)) != e) continue;
          uint32_t ci = client_index.at(cid);
          patch_segments(locals_[ci], edge_models_[e], chosen[ci], seg_count);
          client_last[ci] = ev;
        }
      }
    } else {
      for (const std::string& cid : topo.cellular_clients()) {
        uint32_t ci = client_index.at(cid);
        size_t e = edge_index.at(topo.edge_of(cid));
        uint64_t bytes = uint64_t(chosen[ci].size()) * seg_bytes;
        const Link& down = topo.link(edges[e], cid);
        size_t ev = eb.transmit(edges[e], cid, bytes,
                                transmission_time(bytes, down),
                                LinkClass::downlink, {agg_ev[e]}, true,
                                "segment_download");
        patch_segments(locals_[ci], edge_models_[e], chosen[ci], seg_count);
        client_last[ci] = ev;
      }
    }

    // Chains receive the union of their chosen ids relayed in reverse.
    for (const Cluster& cluster : topo.clusters()) {
      size_t e = edge_index.at(cluster.edge_id);
      std::set<uint32_t> union_ids;
      for (const std::string& mid : cluster.chain) {
        uint32_t ci = client_index.at(mid);
        union_ids.insert(chosen[ci].begin(), chosen[ci].end());
      }
      uint64_t bytes = uint64_t(union_ids.size()) * seg_bytes;
      const std::string& terminus = cluster.chain.back();
      const Link& down = topo.link(cluster.edge_id, terminus);
      size_t ev = eb.transmit(cluster.edge_id, terminus, bytes,
                              transmission_time(bytes, down),
                              LinkClass::downlink, {agg_ev[e]}, true,
                              "chain_download");
      uint32_t term_ci = client_index.at(terminus);
      patch_segments(locals_[term_ci], edge_models_[e], chosen[term_ci],
                     seg_count);
      client_last[term_ci] = ev;
      for (size_t pos = cluster.chain.size() - 1; pos-- > 0;) {
        const Link& hop = topo.link(cluster.chain[pos + 1], cluster.chain[pos]);
        ev = eb.transmit(cluster.chain[pos + 1], cluster.chain[pos], bytes,
                         transmission_time(bytes, hop), LinkClass::d2d, {ev},
                         true, "chain_download_hop");
        uint32_t ci = client_index.at(cluster.chain[pos]);
        patch_segments(locals_[ci], edge_models_[e], chosen[ci], seg_count);
        client_last[ci] = ev;
      }
    }

    for (uint32_t ci = 0; ci < client_ids_.size(); ++ci)
      edge_weight[edge_index.at(topo.edge_of(client_ids_[ci]))] +=
          double(std::max<uint64_t>(samples[ci], 1));
  }

  // Optional horizontal aggregation between neighboring edge servers.
  if (knobs.horizontal_aggregation && edges.size() > 1) {
    std::vector<Model> snapshot = edge_models_;
    for (size_t e = 0; e < edges.size(); ++e) {
      size_t right = (e + 1) % edges.size();
      const Link& l = topo.link(edges[right], edges[e]);
      size_t tx = eb.transmit(edges[right], edges[e], model_bytes,
                              transmission_time(model_bytes, l),
                              LinkClass::edge_edge,
                              dep_of(edge_last[right]), true,
                              "horizontal_exchange");
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

  // One upload to the main server per round after the vertical rounds.
  std::vector<size_t> main_ups;
  for (size_t e = 0; e < edges.size(); ++e) {
    const Link& up = topo.link(edges[e], topo.main_server());
    main_ups.push_back(eb.transmit(edges[e], topo.main_server(), model_bytes,
                                   transmission_time(model_bytes, up),
                                   LinkClass::edge_main, dep_of(edge_last[e]),
                                   true, "edge_model_upload"));
  }
  size_t main_agg = eb.compute(topo.main_server(), 0, Ratio(), false, main_ups,
                               "main_fedavg");
  std::vector<WeightedModel> entries;
  for (size_t e = 0; e < edges.size(); ++e)
    entries.push_back({&edge_models_[e], std::max(edge_weight[e], 1.0)});
  global_ = fedavg(entries);
  for (size_t e = 0; e < edges.size(); ++e) {
    const Link& down = topo.link(topo.main_server(), edges[e]);
    eb.transmit(topo.main_server(), edges[e], model_bytes,
                transmission_time(model_bytes, down), LinkClass::edge_main,
                {main_agg}, true, "edge_model_download");
    edge_models_[e] = global_;
  }

  RoundResult result;
  result.trace.timing = schedule_round(std::move(eb.events));
  return result;
}

}  // namespace dmlsim
