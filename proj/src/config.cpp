#include "dmlsim/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dmlsim {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!obj.is_object())
    fail(ErrorKind::config, "config: '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key))
      fail(ErrorKind::config,
           "config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
  }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, "config: bad value for key '" + key + "'");
  }
}

int64_t get_rate(const json& obj, const std::string& key, int64_t fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (it->is_number_integer()) return it->get<int64_t>();
  if (it->is_number_float()) {
    double v = it->get<double>();
    int64_t r = int64_t(v);
    if (double(r) != v)
      fail(ErrorKind::config, "config: '" + key +
                                  "' must be an integer (whole bytes or "
                                  "FLOPs per second)");
    return r;
  }
  fail(ErrorKind::config, "config: bad value for key '" + key + "'");
}

// Descriptor string form: "synth:classes=4,per_class=250,dim=16,
// separation=4.0,seed=5,test_fraction=0.2" or "idx:train_images=...,
// train_labels=...[,test_images=...,test_labels=...]".
DatasetConfig parse_dataset_descriptor(const std::string& text) {
  DatasetConfig d;
  size_t colon = text.find(':');
  if (colon == std::string::npos)
    fail(ErrorKind::config, "config: dataset descriptor '" + text +
                                "' needs a 'synth:' or 'idx:' prefix");
  d.kind = text.substr(0, colon);
  if (d.kind != "synth" && d.kind != "idx")
    fail(ErrorKind::config,
         "config: dataset descriptor kind must be 'synth' or 'idx'");
  std::istringstream ss(text.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    size_t eq = item.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config,
           "config: bad dataset descriptor item '" + item + "'");
    std::string key = item.substr(0, eq);
    std::string value = item.substr(eq + 1);
    try {
      if (key == "classes") d.classes = uint32_t(std::stoul(value));
      else if (key == "per_class") d.per_class = uint32_t(std::stoul(value));
      else if (key == "dim") d.dim = uint32_t(std::stoul(value));
      else if (key == "separation") d.separation = std::stod(value);
      else if (key == "seed") d.seed = std::stoull(value);
      else if (key == "test_fraction") d.test_fraction = std::stod(value);
      else if (key == "train_images") d.train_images = value;
      else if (key == "train_labels") d.train_labels = value;
      else if (key == "test_images") d.test_images = value;
      else if (key == "test_labels") d.test_labels = value;
      else
        fail(ErrorKind::config,
             "config: unknown dataset descriptor key '" + key + "'");
    } catch (const std::invalid_argument&) {
      fail(ErrorKind::config, "config: bad value in dataset descriptor '" +
                                  item + "'");
    } catch (const std::out_of_range&) {
      fail(ErrorKind::config, "config: bad value in dataset descriptor '" +
                                  item + "'");
    }
  }
  if (d.kind == "idx" && (d.train_images.empty() || d.train_labels.empty()))
    fail(ErrorKind::config,
         "config: dataset descriptor 'idx' needs train_images and "
         "train_labels");
  return d;
}

DatasetConfig parse_dataset(const json& j) {
  if (j.is_string()) return parse_dataset_descriptor(j.get<std::string>());
  check_keys(j, "dataset",
             {"kind", "classes", "per_class", "dim", "separation", "seed",
              "test_fraction", "train_images", "train_labels", "test_images",
              "test_labels"});
  DatasetConfig d;
  d.kind = get_or<std::string>(j, "kind", "synth");
  if (d.kind != "synth" && d.kind != "idx")
    fail(ErrorKind::config, "config: dataset.kind must be 'synth' or 'idx'");
  d.classes = get_or<uint32_t>(j, "classes", d.classes);
  d.per_class = get_or<uint32_t>(j, "per_class", d.per_class);
  d.dim = get_or<uint32_t>(j, "dim", d.dim);
  d.separation = get_or<double>(j, "separation", d.separation);
  d.seed = get_or<uint64_t>(j, "seed", d.seed);
  d.test_fraction = get_or<double>(j, "test_fraction", d.test_fraction);
  d.train_images = get_or<std::string>(j, "train_images", "");
  d.train_labels = get_or<std::string>(j, "train_labels", "");
  d.test_images = get_or<std::string>(j, "test_images", "");
  d.test_labels = get_or<std::string>(j, "test_labels", "");
  if (d.kind == "idx" && (d.train_images.empty() || d.train_labels.empty()))
    fail(ErrorKind::config,
         "config: dataset.kind 'idx' needs train_images and train_labels");
  return d;
}

TopologyShorthand parse_topology_shorthand(const json& j) {
  TopologyShorthand sh;
  sh.cellular_clients = get_or<uint32_t>(j, "cellular_clients", 0);
  sh.d2d_clusters = get_or<std::vector<uint32_t>>(j, "d2d_clusters", {});
  sh.edge_servers = get_or<uint32_t>(j, "edge_servers", 1);
  sh.uplink_bytes_per_sec =
      get_rate(j, "uplink_bytes_per_sec", sh.uplink_bytes_per_sec);
  sh.downlink_bytes_per_sec =
      get_rate(j, "downlink_bytes_per_sec", sh.downlink_bytes_per_sec);
  sh.d2d_bytes_per_sec = get_rate(j, "d2d_bytes_per_sec", sh.d2d_bytes_per_sec);
  sh.edge_main_bytes_per_sec =
      get_rate(j, "edge_main_bytes_per_sec", sh.edge_main_bytes_per_sec);
  sh.client_flops_per_sec =
      get_rate(j, "client_flops_per_sec", sh.client_flops_per_sec);
  sh.edge_flops_per_sec =
      get_rate(j, "edge_flops_per_sec", sh.edge_flops_per_sec);
  sh.main_flops_per_sec =
      get_rate(j, "main_flops_per_sec", sh.main_flops_per_sec);
  sh.failure_prob = get_or<double>(j, "failure_prob", 0.0);
  return sh;
}

NodeKind parse_node_kind(const std::string& s) {
  if (s == "d2d_client") return NodeKind::d2d_client;
  if (s == "cellular_client") return NodeKind::cellular_client;
  if (s == "edge_server") return NodeKind::edge_server;
  if (s == "main_server") return NodeKind::main_server;
  fail(ErrorKind::config, "config: unknown node kind '" + s + "'");
}

TopologySpec parse_topology_explicit(const json& j) {
  TopologySpec spec;
  for (const json& n : j.at("nodes")) {
    check_keys(n, "topology.nodes[]",
               {"id", "kind", "flops_per_sec", "edge", "cluster"});
    Node node;
    node.id = n.at("id").get<std::string>();
    node.kind = parse_node_kind(n.at("kind").get<std::string>());
    node.flops_per_sec = get_rate(n, "flops_per_sec", 1'000'000'000);
    node.edge_id = get_or<std::string>(n, "edge", "");
    node.cluster_id = get_or<std::string>(n, "cluster", "");
    spec.nodes.push_back(std::move(node));
  }
  for (const json& l : j.value("links", json::array())) {
    check_keys(l, "topology.links[]",
               {"src", "dst", "bytes_per_sec", "failure_prob"});
    Link link;
    link.src = l.at("src").get<std::string>();
    link.dst = l.at("dst").get<std::string>();
    link.bytes_per_sec = get_rate(l, "bytes_per_sec", 1);
    link.failure_prob = get_or<double>(l, "failure_prob", 0.0);
    spec.links.push_back(std::move(link));
  }
  for (const json& c : j.value("clusters", json::array())) {
    check_keys(c, "topology.clusters[]", {"id", "edge", "chain"});
    Cluster cluster;
    cluster.id = c.at("id").get<std::string>();
    cluster.edge_id = c.at("edge").get<std::string>();
    cluster.chain = c.at("chain").get<std::vector<std::string>>();
    spec.clusters.push_back(std::move(cluster));
  }
  return spec;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& json_text,
                                         const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, origin + ": " + e.what());
  }
  check_keys(j, "",
             {"architecture", "rounds", "dataset", "partition", "model",
              "protocol", "topology", "seeds", "accounting", "output"});
  ExperimentConfig cfg;
  cfg.architecture =
      parse_architecture(get_or<std::string>(j, "architecture", "fl"));
  cfg.rounds = get_or<uint32_t>(j, "rounds", cfg.rounds);
  if (cfg.rounds < 1) fail(ErrorKind::config, "config: rounds must be >= 1");

  if (j.contains("dataset")) cfg.dataset = parse_dataset(j["dataset"]);

  if (j.contains("partition")) {
    check_keys(j["partition"], "partition", {"groups"});
    cfg.partition_groups =
        j["partition"].at("groups").get<std::vector<std::vector<uint32_t>>>();
  }

  if (j.contains("model")) {
    check_keys(j["model"], "model", {"hidden", "param_dtype_bytes"});
    cfg.hidden_layers =
        get_or<std::vector<uint32_t>>(j["model"], "hidden", cfg.hidden_layers);
    cfg.param_dtype_bytes =
        get_or<uint32_t>(j["model"], "param_dtype_bytes", 4);
    if (cfg.param_dtype_bytes == 0)
      fail(ErrorKind::config, "config: model.param_dtype_bytes must be >= 1");
  }

  if (j.contains("protocol")) {
    const json& p = j["protocol"];
    check_keys(p, "protocol",
               {"segment_count", "segments_sent", "cut_layer", "label_sharing",
                "vertical_rounds", "horizontal_aggregation", "local_epochs",
                "lr", "batch_size", "main_sync_every"});
    cfg.knobs.segment_count = get_or<uint32_t>(p, "segment_count", 1);
    cfg.knobs.segments_sent = get_or<uint32_t>(p, "segments_sent", 1);
    cfg.knobs.cut_layer = get_or<size_t>(p, "cut_layer", 1);
    cfg.knobs.label_sharing = get_or<bool>(p, "label_sharing", true);
    cfg.knobs.vertical_rounds = get_or<uint32_t>(p, "vertical_rounds", 1);
    cfg.knobs.horizontal_aggregation =
        get_or<bool>(p, "horizontal_aggregation", false);
    cfg.knobs.local_epochs = get_or<uint32_t>(p, "local_epochs", 1);
    cfg.knobs.lr = get_or<double>(p, "lr", 0.05);
    cfg.knobs.batch_size = get_or<size_t>(p, "batch_size", 32);
    cfg.knobs.main_sync_every = get_or<uint32_t>(p, "main_sync_every", 1);
    cfg.knobs.validate();
  }

  if (j.contains("topology")) {
    const json& t = j["topology"];
    if (t.contains("nodes")) {
      check_keys(t, "topology", {"nodes", "links", "clusters"});
      cfg.topology_explicit = parse_topology_explicit(t);
    } else {
      check_keys(t, "topology",
                 {"cellular_clients", "d2d_clusters", "edge_servers",
                  "uplink_bytes_per_sec", "downlink_bytes_per_sec",
                  "d2d_bytes_per_sec", "edge_main_bytes_per_sec",
                  "client_flops_per_sec", "edge_flops_per_sec",
                  "main_flops_per_sec", "failure_prob"});
      cfg.topology_shorthand = parse_topology_shorthand(t);
    }
  }

  if (j.contains("seeds")) {
    const json& s = j["seeds"];
    check_keys(s, "seeds", {"init", "data", "segments", "failures"});
    cfg.seeds.init = get_or<uint64_t>(s, "init", cfg.seeds.init);
    cfg.seeds.data = get_or<uint64_t>(s, "data", cfg.seeds.data);
    cfg.seeds.segments = get_or<uint64_t>(s, "segments", cfg.seeds.segments);
    cfg.seeds.failures = get_or<uint64_t>(s, "failures", cfg.seeds.failures);
  }

  if (j.contains("accounting")) {
    const json& a = j["accounting"];
    check_keys(a, "accounting",
               {"downlink_convention", "count_label_bytes",
                "label_bytes_per_sample", "count_handoff_bytes"});
    std::string conv =
        get_or<std::string>(a, "downlink_convention", "per_client");
    if (conv == "per_client")
      cfg.accounting.downlink = DownlinkConvention::per_client;
    else if (conv == "broadcast")
      cfg.accounting.downlink = DownlinkConvention::broadcast;
    else
      fail(ErrorKind::config,
           "config: accounting.downlink_convention must be 'per_client' or "
           "'broadcast'");
    cfg.accounting.count_label_bytes =
        get_or<bool>(a, "count_label_bytes", false);
    cfg.accounting.label_bytes_per_sample =
        get_or<uint32_t>(a, "label_bytes_per_sample", 1);
    cfg.accounting.count_handoff_bytes =
        get_or<bool>(a, "count_handoff_bytes", true);
  }

  if (j.contains("output")) {
    const json& o = j["output"];
    check_keys(o, "output", {"dir", "formats", "prefix"});
    cfg.output.dir = get_or<std::string>(o, "dir", cfg.output.dir);
    cfg.output.formats =
        get_or<std::vector<std::string>>(o, "formats", cfg.output.formats);
    cfg.output.prefix = get_or<std::string>(o, "prefix", cfg.output.prefix);
    for (const std::string& f : cfg.output.formats)
      if (f != "csv" && f != "json")
        fail(ErrorKind::config, "config: unknown output format '" + f + "'");
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::config, "cannot open config file " + path);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return parse(buffer.str(), path);
}

ExperimentSetup ExperimentConfig::build(
    std::optional<Architecture> arch_override) const {
  ExperimentSetup setup;
  setup.arch = arch_override.value_or(architecture);

  Dataset full;
  if (dataset.kind == "synth") {
    full = synth_blobs(dataset.classes, dataset.per_class, dataset.dim,
                       dataset.separation, dataset.seed);
    auto [train, test] = split_train_test(full, dataset.test_fraction);
    setup.train = std::move(train);
    setup.test = std::move(test);
  } else {
    setup.train = load_idx(dataset.train_images, dataset.train_labels);
    if (!dataset.test_images.empty())
      setup.test = load_idx(dataset.test_images, dataset.test_labels);
    else
      setup.test = setup.train;
  }

  std::vector<std::vector<uint32_t>> groups = partition_groups;
  if (groups.empty()) {
    // Default: one group of all classes per client, split round-robin is not
    // meaningful for label partitioning, so a single-client group set.
    groups.push_back({});
    for (uint32_t c = 0; c < setup.train.class_count; ++c)
      groups[0].push_back(c);
  }
  setup.shards = partition_by_labels(setup.train, groups);

  TopologySpec tspec;
  if (topology_explicit) {
    tspec = *topology_explicit;
  } else {
    TopologyShorthand sh;
    if (topology_shorthand) sh = *topology_shorthand;
    if (sh.cellular_clients == 0 && sh.d2d_clusters.empty())
      sh.cellular_clients = uint32_t(groups.size());
    tspec = expand_shorthand(sh);
  }
  setup.topology = Topology::build(tspec);
  if (setup.topology.clients().size() != setup.shards.size())
    fail(ErrorKind::config,
         "config: partition has " + std::to_string(setup.shards.size()) +
             " groups but the topology has " +
             std::to_string(setup.topology.clients().size()) + " clients");

  std::vector<uint32_t> widths;
  widths.push_back(uint32_t(setup.train.dim()));
  widths.insert(widths.end(), hidden_layers.begin(), hidden_layers.end());
  widths.push_back(setup.train.class_count);
  setup.spec = ModelSpec::mlp(widths, param_dtype_bytes);

  setup.knobs = knobs;
  setup.seeds = seeds;
  setup.accounting = accounting;
  return setup;
}

ModelSpec parse_spec_descriptor(const std::string& descriptor,
                                uint32_t param_dtype_bytes) {
  const std::string prefix = "mlp:";
  if (descriptor.rfind(prefix, 0) != 0)
    fail(ErrorKind::config, "unknown spec descriptor '" + descriptor +
                                "' (expected e.g. mlp:16-32-4)");
  std::vector<uint32_t> widths;
  std::string rest = descriptor.substr(prefix.size());
  std::istringstream ss(rest);
  std::string token;
  while (std::getline(ss, token, '-')) {
    try {
      size_t pos = 0;
      unsigned long v = std::stoul(token, &pos);
      if (pos != token.size() || v == 0) throw std::invalid_argument(token);
      widths.push_back(uint32_t(v));
    } catch (const std::exception&) {
      fail(ErrorKind::config,
           "bad width '" + token + "' in spec descriptor '" + descriptor + "'");
    }
  }
  if (widths.size() < 2)
    fail(ErrorKind::config,
         "spec descriptor needs at least two widths: '" + descriptor + "'");
  return ModelSpec::mlp(widths, param_dtype_bytes);
}

}  // namespace dmlsim
