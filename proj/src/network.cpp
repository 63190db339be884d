#include "dmlsim/network.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace dmlsim {

std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::d2d_client: return "d2d_client";
    case NodeKind::cellular_client: return "cellular_client";
    case NodeKind::edge_server: return "edge_server";
    case NodeKind::main_server: return "main_server";
  }
  return "?";
}

std::string to_string(LinkClass c) {
  switch (c) {
    case LinkClass::none: return "none";
    case LinkClass::uplink: return "uplink";
    case LinkClass::downlink: return "downlink";
    case LinkClass::d2d: return "d2d";
    case LinkClass::handoff: return "handoff";
    case LinkClass::edge_main: return "edge_main";
    case LinkClass::edge_edge: return "edge_edge";
  }
  return "?";
}

Topology Topology::build(const TopologySpec& spec) {
  Topology t;
  t.nodes_ = spec.nodes;
  t.clusters_ = spec.clusters;
  for (size_t i = 0; i < t.nodes_.size(); ++i) {
    const Node& n = t.nodes_[i];
    if (n.id.empty()) fail(ErrorKind::config, "topology: node with empty id");
    if (!t.node_index_.emplace(n.id, i).second)
      fail(ErrorKind::config, "topology: duplicate node id '" + n.id + "'");
    if (n.flops_per_sec <= 0)
      fail(ErrorKind::config,
           "topology: node '" + n.id + "' compute rate must be positive");
    switch (n.kind) {
      case NodeKind::cellular_client:
        t.clients_.push_back(n.id);
        t.cellular_clients_.push_back(n.id);
        break;
      case NodeKind::d2d_client:
        t.clients_.push_back(n.id);
        break;
      case NodeKind::edge_server:
        t.edges_.push_back(n.id);
        break;
      case NodeKind::main_server:
        if (!t.main_.empty())
          fail(ErrorKind::config, "topology: more than one main server");
        t.main_ = n.id;
        break;
    }
  }
  if (t.main_.empty())
    fail(ErrorKind::config, "topology: missing main server");
  if (t.edges_.empty())
    fail(ErrorKind::config, "topology: missing edge server");

  for (const Link& l : spec.links) {
    if (!t.node_index_.count(l.src))
      fail(ErrorKind::config, "topology: link references unknown node '" +
                                  l.src + "'");
    if (!t.node_index_.count(l.dst))
      fail(ErrorKind::config, "topology: link references unknown node '" +
                                  l.dst + "'");
    if (l.bytes_per_sec <= 0)
      fail(ErrorKind::config, "topology: link " + l.src + "->" + l.dst +
                                  " datarate must be positive");
    if (l.failure_prob < 0.0 || l.failure_prob >= 1.0)
      fail(ErrorKind::config, "topology: link " + l.src + "->" + l.dst +
                                  " failure_prob must be in [0,1)");
    if (!t.links_.emplace(std::make_pair(l.src, l.dst), l).second)
      fail(ErrorKind::config,
           "topology: duplicate link " + l.src + "->" + l.dst);
  }

  std::set<std::string> chained;
  for (const Cluster& c : spec.clusters) {
    if (c.chain.empty())
      fail(ErrorKind::config, "topology: cluster '" + c.id + "' has no chain");
    if (!t.node_index_.count(c.edge_id) ||
        t.node(c.edge_id).kind != NodeKind::edge_server)
      fail(ErrorKind::config, "topology: cluster '" + c.id +
                                  "' references unknown edge '" + c.edge_id +
                                  "'");
    for (size_t i = 0; i < c.chain.size(); ++i) {
      const std::string& id = c.chain[i];
      if (!t.node_index_.count(id) ||
          t.node(id).kind != NodeKind::d2d_client)
        fail(ErrorKind::config, "topology: cluster '" + c.id +
                                    "' member '" + id +
                                    "' is not a d2d client");
      if (!chained.insert(id).second)
        fail(ErrorKind::config,
             "topology: d2d client '" + id + "' appears in two chains");
      if (i + 1 < c.chain.size()) {
        if (!t.has_link(id, c.chain[i + 1]) ||
            !t.has_link(c.chain[i + 1], id))
          fail(ErrorKind::config, "topology: missing d2d link between '" + id +
                                      "' and '" + c.chain[i + 1] + "'");
      }
      t.client_edge_[id] = c.edge_id;
    }
    const std::string& terminus = c.chain.back();
    if (!t.has_link(terminus, c.edge_id) || !t.has_link(c.edge_id, terminus))
      fail(ErrorKind::config, "topology: chain terminus '" + terminus +
                                  "' has no link to edge '" + c.edge_id + "'");
  }

  for (const Node& n : t.nodes_) {
    if (n.kind == NodeKind::cellular_client) {
      if (n.edge_id.empty() || !t.node_index_.count(n.edge_id) ||
          t.node(n.edge_id).kind != NodeKind::edge_server)
        fail(ErrorKind::config, "topology: cellular client '" + n.id +
                                    "' has no valid edge server");
      if (!t.has_link(n.id, n.edge_id) || !t.has_link(n.edge_id, n.id))
        fail(ErrorKind::config, "topology: cellular client '" + n.id +
                                    "' has no uplink/downlink to '" +
                                    n.edge_id + "'");
      t.client_edge_[n.id] = n.edge_id;
    } else if (n.kind == NodeKind::d2d_client) {
      if (!chained.count(n.id))
        fail(ErrorKind::config, "topology: d2d client '" + n.id +
                                    "' is not part of any chain (no path to "
                                    "an edge server)");
    } else if (n.kind == NodeKind::edge_server) {
      if (!t.has_link(n.id, t.main_) || !t.has_link(t.main_, n.id))
        fail(ErrorKind::config, "topology: edge '" + n.id +
                                    "' has no link to the main server");
    }
  }
  return t;
}

const Node& Topology::node(const std::string& id) const {
  auto it = node_index_.find(id);
  if (it == node_index_.end())
    fail(ErrorKind::config, "topology: unknown node '" + id + "'");
  return nodes_[it->second];
}

bool Topology::has_link(const std::string& src, const std::string& dst) const {
  return links_.count({src, dst}) != 0;
}

const Link& Topology::link(const std::string& src,
                           const std::string& dst) const {
  auto it = links_.find({src, dst});
  if (it == links_.end())
    fail(ErrorKind::config, "topology: no link " + src + "->" + dst);
  return it->second;
}

const std::string& Topology::edge_of(const std::string& client_id) const {
  auto it = client_edge_.find(client_id);
  if (it == client_edge_.end())
    fail(ErrorKind::config,
         "topology: '" + client_id + "' is not an attached client");
  return it->second;
}

TopologySpec expand_shorthand(const TopologyShorthand& sh) {
  TopologySpec spec;
  if (sh.edge_servers == 0)
    fail(ErrorKind::config, "topology: need at least one edge server");
  std::vector<std::string> edges;
  for (uint32_t e = 0; e < sh.edge_servers; ++e) {
    std::string id = "edge-" + std::to_string(e + 1);
    edges.push_back(id);
    spec.nodes.push_back({id, NodeKind::edge_server, sh.edge_flops_per_sec, "", ""});
  }
  spec.nodes.push_back({"main", NodeKind::main_server, sh.main_flops_per_sec, "", ""});

  auto add_link = [&spec, &sh](const std::string& a, const std::string& b,
                               int64_t rate) {
    spec.links.push_back({a, b, rate, sh.failure_prob});
  };

  for (uint32_t c = 0; c < sh.cellular_clients; ++c) {
    std::string id = "client-" + std::to_string(c + 1);
    const std::string& edge = edges[c % edges.size()];
    spec.nodes.push_back(
        {id, NodeKind::cellular_client, sh.client_flops_per_sec, edge, ""});
    add_link(id, edge, sh.uplink_bytes_per_sec);
    add_link(edge, id, sh.downlink_bytes_per_sec);
  }

  for (size_t k = 0; k < sh.d2d_clusters.size(); ++k) {
    uint32_t len = sh.d2d_clusters[k];
    if (len == 0) fail(ErrorKind::config, "topology: empty d2d cluster");
    std::string cid = "cluster-" + std::to_string(k + 1);
    const std::string& edge = edges[k % edges.size()];
    Cluster cluster;
    cluster.id = cid;
    cluster.edge_id = edge;
    for (uint32_t i = 0; i < len; ++i) {
      std::string id = "d2d-" + std::to_string(k + 1) + "-" + std::to_string(i + 1);
      cluster.chain.push_back(id);
      spec.nodes.push_back(
          {id, NodeKind::d2d_client, sh.client_flops_per_sec, "", cid});
      if (i > 0) {
        add_link(cluster.chain[i - 1], id, sh.d2d_bytes_per_sec);
        add_link(id, cluster.chain[i - 1], sh.d2d_bytes_per_sec);
      }
    }
    if (len > 2) {  // close the ring so pipelines can rotate their start
      add_link(cluster.chain.back(), cluster.chain.front(), sh.d2d_bytes_per_sec);
      add_link(cluster.chain.front(), cluster.chain.back(), sh.d2d_bytes_per_sec);
    }
    add_link(cluster.chain.back(), edge, sh.uplink_bytes_per_sec);
    add_link(edge, cluster.chain.back(), sh.downlink_bytes_per_sec);
    spec.clusters.push_back(std::move(cluster));
  }

  for (const std::string& e : edges) {
    add_link(e, "main", sh.edge_main_bytes_per_sec);
    add_link("main", e, sh.edge_main_bytes_per_sec);
  }
  // Neighboring edge servers form a ring for horizontal aggregation.
  size_t ring_pairs = edges.size() == 2 ? 1 : edges.size();
  for (size_t i = 0; edges.size() > 1 && i < ring_pairs; ++i) {
    const std::string& a = edges[i];
    const std::string& b = edges[(i + 1) % edges.size()];
    add_link(a, b, sh.edge_main_bytes_per_sec);
    add_link(b, a, sh.edge_main_bytes_per_sec);
  }
  return spec;
}

Ratio transmission_time(uint64_t bytes, const Link& link) {
  if (bytes > uint64_t(INT64_MAX))
    fail(ErrorKind::numeric, "transmission_time: byte count overflow");
  return Ratio::of(int64_t(bytes), link.bytes_per_sec);
}

Ratio compute_time(uint64_t flops, const Node& node) {
  if (flops > uint64_t(INT64_MAX))
    fail(ErrorKind::numeric, "compute_time: flop count overflow");
  return Ratio::of(int64_t(flops), node.flops_per_sec);
}

bool sample_failure(const Link& link, Rng& rng) {
  return rng.bernoulli(link.failure_prob);
}

RoundTiming schedule_round(std::vector<Event> events) {
  size_t n = events.size();
  std::vector<size_t> indegree(n, 0);
  std::vector<std::vector<size_t>> dependents(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t d : events[i].deps) {
      if (d >= n)
        fail(ErrorKind::protocol, "schedule_round: dependency out of range");
      dependents[d].push_back(i);
      ++indegree[i];
    }
  }
  RoundTiming timing;
  timing.start.assign(n, Ratio());
  timing.end.assign(n, Ratio());
  std::vector<size_t> ready;
  for (size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push_back(i);
  size_t processed = 0;
  // Kahn's algorithm; `ready` is processed in index order for determinism.
  for (size_t head = 0; head < ready.size(); ++head) {
    size_t i = ready[head];
    ++processed;
    Ratio start;
    for (size_t d : events[i].deps) start = max(start, timing.end[d]);
    timing.start[i] = start;
    timing.end[i] = start + events[i].duration;
    timing.round_duration = max(timing.round_duration, timing.end[i]);
    for (size_t j : dependents[i])
      if (--indegree[j] == 0) ready.push_back(j);
  }
  if (processed != n)
    fail(ErrorKind::protocol, "schedule_round: cyclic event dependencies");
  timing.events = std::move(events);
  return timing;
}

}  // namespace dmlsim
