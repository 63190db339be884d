#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmlsim/ratio.hpp"
#include "dmlsim/rng.hpp"

namespace dmlsim {

enum class NodeKind { d2d_client, cellular_client, edge_server, main_server };

std::string to_string(NodeKind k);

struct Node {
  std::string id;
  NodeKind kind = NodeKind::cellular_client;
  int64_t flops_per_sec = 1;
  std::string edge_id;     // cellular clients: serving edge server
  std::string cluster_id;  // d2d clients: owning cluster
};

struct Link {
  std::string src, dst;
  int64_t bytes_per_sec = 1;
  double failure_prob = 0.0;  // per transmission unit
};

// Ordered device chain under one edge server. The terminus (last member)
// uploads to the edge; a closing link between terminus and head lets pipeline
// protocols rotate their starting member.
struct Cluster {
  std::string id;
  std::string edge_id;
  std::vector<std::string> chain;
};

struct TopologySpec {
  std::vector<Node> nodes;
  std::vector<Link> links;
  std::vector<Cluster> clusters;
};

class Topology {
 public:
  // Validates the graph: unique ids, positive rates, every client attached
  // (directly or through its chain) to an edge server, every edge linked to
  // the main server.
  static Topology build(const TopologySpec& spec);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(const std::string& id) const;
  bool has_link(const std::string& src, const std::string& dst) const;
  const Link& link(const std::string& src, const std::string& dst) const;

  // Clients in declaration order (cellular first is not forced; config order
  // is the canonical client order used everywhere).
  const std::vector<std::string>& clients() const { return clients_; }
  const std::vector<std::string>& cellular_clients() const {
    return cellular_clients_;
  }
  const std::vector<std::string>& edges() const { return edges_; }
  const std::string& main_server() const { return main_; }
  const std::vector<Cluster>& clusters() const { return clusters_; }

  // Serving edge for a client: direct for cellular, via chain terminus for
  // d2d members.
  const std::string& edge_of(const std::string& client_id) const;

 private:
  std::vector<Node> nodes_;
  std::map<std::string, size_t> node_index_;
  std::map<std::pair<std::string, std::string>, Link> links_;
  std::vector<Cluster> clusters_;
  std::vector<std::string> clients_, cellular_clients_, edges_;
  std::string main_;
  std::map<std::string, std::string> client_edge_;
};

// Convenience generator for the common star/chain layouts: cellular clients
// round-robin over edge servers, d2d clusters as chains with a closing link,
// edges linked to one main server.
struct TopologyShorthand {
  uint32_t cellular_clients = 0;
  std::vector<uint32_t> d2d_clusters;  // chain lengths
  uint32_t edge_servers = 1;
  int64_t uplink_bytes_per_sec = 10'000'000;
  int64_t downlink_bytes_per_sec = 50'000'000;
  int64_t d2d_bytes_per_sec = 5'000'000;
  int64_t edge_main_bytes_per_sec = 1'000'000'000;
  int64_t client_flops_per_sec = 1'000'000'000;
  int64_t edge_flops_per_sec = 10'000'000'000;
  int64_t main_flops_per_sec = 10'000'000'000;
  double failure_prob = 0.0;
};

TopologySpec expand_shorthand(const TopologyShorthand& sh);

Ratio transmission_time(uint64_t bytes, const Link& link);
Ratio compute_time(uint64_t flops, const Node& node);

// One draw per transmission unit (segment, model, or activation batch).
bool sample_failure(const Link& link, Rng& rng);

enum class EventKind { transmit, compute };

// uplink/downlink: client <-> edge. handoff: logical client-to-client model
// transfer relayed through the serving edge. edge_main / edge_edge: server
// tier traffic, reported separately from client-attributable cost.
enum class LinkClass { none, uplink, downlink, d2d, handoff, edge_main, edge_edge };

std::string to_string(LinkClass c);

struct Event {
  EventKind kind = EventKind::compute;
  std::string node;  // compute: executing node; transmit: source
  std::string dst;   // transmit only
  uint64_t bytes = 0;
  uint64_t flops = 0;
  Ratio duration;
  LinkClass link_class = LinkClass::none;
  bool client_side = false;  // compute events attributed to client cost
  bool ok = true;            // false when the failure draw dropped the payload
  std::string label;
  std::vector<size_t> deps;  // indices into the event list
};

struct RoundTiming {
  std::vector<Event> events;
  std::vector<Ratio> start, end;  // aligned with events
  Ratio round_duration;
};

// Longest-path schedule over the dependency DAG. Events with no ordering
// between them overlap freely; a cycle is a protocol bug.
RoundTiming schedule_round(std::vector<Event> events);

}  // namespace dmlsim
