#include <cmath>

#include "dmlsim/partition.hpp"
#include "dmlsim/rng.hpp"
#include "doctest.h"

using namespace dmlsim;

namespace {

ParamVector pv_of(std::vector<double> scalars, uint64_t fp = 1) {
  ParamVector pv;
  pv.scalars = std::move(scalars);
  pv.spec_fingerprint = fp;
  return pv;
}

Segment seg_of(const std::vector<double>& pv, uint32_t id, uint32_t m_count) {
  return make_segments(pv_of(pv), m_count)[id];
}

}  // namespace

TEST_CASE("flatten then unflatten is the identity") {
  Model m = init_model(ModelSpec::mlp({4, 6, 3}), 11);
  ParamVector pv = flatten(m);
  CHECK(pv.scalars.size() == m.spec.param_count());
  CHECK(pv.scalars.size() == 4 * 6 + 6 + 6 * 3 + 3);
  Model back = unflatten(pv, m.spec);
  CHECK(back == m);
}

TEST_CASE("unflatten rejects a mismatched spec") {
  Model m = init_model(ModelSpec::mlp({4, 6, 3}), 11);
  ParamVector pv = flatten(m);
  CHECK_THROWS_AS(unflatten(pv, ModelSpec::mlp({4, 5, 3})), SimError);
}

TEST_CASE("make_segments pads only the final segment") {
  auto segs = make_segments(pv_of({1, 2, 3, 4, 5}), 2);
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].payload == std::vector<double>{1, 2, 3});
  CHECK(segs[0].logical_len == 3);
  CHECK(segs[1].payload == std::vector<double>{4, 5, 0});
  CHECK(segs[1].logical_len == 2);
  CHECK(segs[0].padded_len() == segs[1].padded_len());
}

TEST_CASE("make_segments degenerate single segment") {
  auto segs = make_segments(pv_of({1, 2, 3}), 1);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].payload == std::vector<double>{1, 2, 3});
  CHECK(segs[0].logical_len == 3);
}

TEST_CASE("make_segments rejects oversized segment counts") {
  CHECK_THROWS_AS(make_segments(pv_of({1, 2, 3}), 4), SimError);
  CHECK_THROWS_AS(make_segments(pv_of({1, 2, 3}), 0), SimError);
  // ceil(5/4)=2 would leave segment 3 all padding spilling past the end
  CHECK_THROWS_AS(make_segments(pv_of({1, 2, 3, 4, 5}), 4), SimError);
}

TEST_CASE("segment round trip over random vectors") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    size_t n = 1 + rng.below(97);
    std::vector<double> scalars(n);
    for (double& v : scalars) v = rng.uniform(-5.0, 5.0);
    ParamVector pv = pv_of(scalars, 123);
    // keep the padding-in-final-segment rule satisfiable
    uint32_t m_count = 1 + uint32_t(rng.below(n));
    uint64_t padded = (n + m_count - 1) / m_count;
    if (uint64_t(m_count - 1) * padded > n) continue;
    auto segs = make_segments(pv, m_count);
    ParamVector back = assemble_segments(segs, 123);
    CHECK(back == pv);
  }
}

TEST_CASE("aggregate_segments averages per segment") {
  ParamVector fallback = pv_of({0, 0, 0, 0});
  SegmentReceipts received;
  received[0] = {{seg_of({1, 2, 3, 4}, 0, 2), 1.0},
                 {seg_of({3, 4, 5, 6}, 0, 2), 1.0}};
  received[1] = {{seg_of({1, 2, 3, 4}, 1, 2), 1.0},
                 {seg_of({3, 4, 5, 6}, 1, 2), 1.0}};
  ParamVector out = aggregate_segments(received, fallback, 2);
  CHECK(out.scalars == std::vector<double>{2, 3, 4, 5});
}

TEST_CASE("aggregate_segments per-segment mean with partial sends") {
  // A sends only segment 0; B sends both.
  ParamVector fallback = pv_of({0, 0, 0, 0});
  SegmentReceipts received;
  received[0] = {{seg_of({1, 2, 3, 4}, 0, 2), 1.0},
                 {seg_of({3, 4, 5, 6}, 0, 2), 1.0}};
  received[1] = {{seg_of({3, 4, 5, 6}, 1, 2), 1.0}};
  ParamVector out = aggregate_segments(received, fallback, 2);
  CHECK(out.scalars == std::vector<double>{2, 3, 5, 6});
}

TEST_CASE("aggregate_segments falls back for unsent segments") {
  ParamVector fallback = pv_of({9, 9, 9, 9});
  SegmentReceipts received;
  received[0] = {{seg_of({1, 2, 3, 4}, 0, 2), 1.0}};
  ParamVector out = aggregate_segments(received, fallback, 2);
  CHECK(out.scalars == std::vector<double>{1, 2, 9, 9});
}

TEST_CASE("aggregate_segments rejects inconsistent geometry") {
  ParamVector fallback = pv_of({0, 0, 0, 0});
  SegmentReceipts received;
  received[0] = {{seg_of({1, 2, 3}, 0, 3), 1.0}};  // padded_len 1, M=3
  CHECK_THROWS_AS(aggregate_segments(received, fallback, 2), SimError);
  SegmentReceipts bad_weight;
  bad_weight[0] = {{seg_of({1, 2, 3, 4}, 0, 2), 0.0}};
  CHECK_THROWS_AS(aggregate_segments(bad_weight, fallback, 2), SimError);
}

TEST_CASE("fedavg idempotence and weighted mean") {
  Model a = init_model(ModelSpec::mlp({3, 4, 2}), 5);
  Model same = fedavg({{&a, 1.0}, {&a, 1.0}});
  CHECK(same == a);

  Model x = a, y = a;
  x.weights[0].data.assign(x.weights[0].data.size(), 0.0);
  x.weights[0].data[0] = 0.0;
  x.weights[0].data[1] = 2.0;
  y.weights[0].data.assign(y.weights[0].data.size(), 0.0);
  y.weights[0].data[0] = 4.0;
  y.weights[0].data[1] = 0.0;
  Model mean = fedavg({{&x, 1.0}, {&y, 1.0}});
  CHECK(mean.weights[0].data[0] == 2.0);
  CHECK(mean.weights[0].data[1] == 1.0);

  CHECK_THROWS_AS(fedavg({}), SimError);
  Model other = init_model(ModelSpec::mlp({3, 5, 2}), 5);
  CHECK_THROWS_AS(fedavg({{&a, 1.0}, {&other, 1.0}}), SimError);
}

TEST_CASE("full segment sets aggregate exactly like fedavg") {
  // The segment route must be bit-identical to the model route when every
  // client transmits every segment with the same weights.
  ModelSpec spec = ModelSpec::mlp({5, 6, 4});  // 5*6+6 + 6*4+4 = 64 params
  std::vector<Model> models;
  for (uint64_t s = 0; s < 4; ++s) models.push_back(init_model(spec, 100 + s));
  std::vector<double> weights = {25.0, 25.0, 25.0, 25.0};
  for (uint32_t m_count : {1u, 2u, 3u, 7u, 16u}) {
    SegmentReceipts received;
    for (size_t c = 0; c < models.size(); ++c) {
      auto segs = make_segments(flatten(models[c]), m_count);
      for (auto& s : segs)
        received[s.segment_id].emplace_back(std::move(s), weights[c]);
    }
    ParamVector fallback = flatten(models[0]);
    ParamVector via_segments = aggregate_segments(received, fallback, m_count);
    std::vector<WeightedModel> wm;
    for (size_t c = 0; c < models.size(); ++c)
      wm.push_back({&models[c], weights[c]});
    ParamVector via_fedavg = flatten(fedavg(wm));
    CHECK(via_segments.scalars == via_fedavg.scalars);
  }
}

TEST_CASE("padding never leaks into aggregated values") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    size_t n = 5 + rng.below(50);
    uint32_t m_count = 2 + uint32_t(rng.below(4));
    uint64_t padded = (n + m_count - 1) / m_count;
    if (uint64_t(m_count - 1) * padded > n) continue;
    std::vector<double> a(n), b(n);
    for (double& v : a) v = rng.uniform(-1, 1);
    for (double& v : b) v = rng.uniform(-1, 1);
    SegmentReceipts received;
    for (const auto& vec : {a, b}) {
      auto segs = make_segments(pv_of(vec, 9), m_count);
      for (auto& s : segs) received[s.segment_id].emplace_back(s, 1.0);
    }
    ParamVector out =
        aggregate_segments(received, pv_of(std::vector<double>(n, 0.0), 9),
                           m_count);
    REQUIRE(out.scalars.size() == n);
    for (size_t k = 0; k < n; ++k)
      CHECK(out.scalars[k] == doctest::Approx((a[k] + b[k]) / 2).epsilon(1e-15));
  }
}

TEST_CASE("cut_at_layer computes widths and fractions") {
  ModelSpec spec = ModelSpec::mlp({4, 8, 3});
  CutPlan plan = cut_at_layer(spec, 1, true);
  CHECK(plan.cut_width == 8);
  CHECK(plan.client_params == 4 * 8 + 8);
  CHECK(plan.client_fraction == doctest::Approx(40.0 / 67.0).epsilon(1e-15));
  CHECK(plan.client_spec.layers.size() == 1);
  CHECK(plan.server_spec.layers.size() == 1);
  CHECK_FALSE(plan.client_tail_spec.has_value());

  // sub-specs compose back to the original
  ModelSpec joined;
  joined.param_dtype_bytes = spec.param_dtype_bytes;
  joined.layers = plan.client_spec.layers;
  joined.layers.insert(joined.layers.end(), plan.server_spec.layers.begin(),
                       plan.server_spec.layers.end());
  CHECK(joined == spec);
}

TEST_CASE("cut_at_layer keeps the output layer on the client without label sharing") {
  ModelSpec spec = ModelSpec::mlp({4, 8, 6, 3});
  CutPlan plan = cut_at_layer(spec, 1, false);
  REQUIRE(plan.client_tail_spec.has_value());
  CHECK(plan.client_tail_spec->layers.size() == 1);
  CHECK(plan.client_tail_spec->layers[0].out == 3);
  CHECK(plan.server_spec.layers.size() == 1);
  CHECK(plan.tail_cut_width == 6);
  CHECK(plan.client_params ==
        (4 * 8 + 8) + (6 * 3 + 3));  // head plus output layer

  // U-shape needs at least one server layer
  CHECK_THROWS_AS(cut_at_layer(ModelSpec::mlp({4, 8, 3}), 2, false), SimError);
}

TEST_CASE("cut_at_layer rejects out-of-range cuts") {
  ModelSpec spec = ModelSpec::mlp({4, 8, 3});
  CHECK_THROWS_AS(cut_at_layer(spec, 0, true), SimError);
  CHECK_THROWS_AS(cut_at_layer(spec, 2, true), SimError);  // == layer count
}

TEST_CASE("client fraction grows with the cut layer") {
  ModelSpec spec = ModelSpec::mlp({8, 16, 12, 6, 4});
  double prev = 0.0;
  for (size_t cut = 1; cut < spec.layers.size(); ++cut) {
    CutPlan plan = cut_at_layer(spec, cut, true);
    CHECK(plan.client_fraction >= prev);
    CHECK(plan.client_fraction > 0.0);
    CHECK(plan.client_fraction < 1.0);
    prev = plan.client_fraction;
  }
}

TEST_CASE("split_even_by_params balances contiguous groups") {
  ModelSpec spec = ModelSpec::mlp({10, 10, 10, 10, 4});
  for (size_t parts : {1, 2, 3, 4}) {
    auto groups = split_even_by_params(spec, parts);
    REQUIRE(groups.size() == parts);
    size_t layers = 0;
    uint64_t params = 0;
    for (const auto& g : groups) {
      layers += g.layers.size();
      params += g.param_count();
    }
    CHECK(layers == spec.layers.size());
    CHECK(params == spec.param_count());
  }
  CHECK_THROWS_AS(split_even_by_params(spec, 5), SimError);
}

TEST_CASE("param vector serialization round trips through disk") {
  Rng rng(12);
  std::vector<double> scalars(33);
  for (double& v : scalars) v = rng.gaussian();
  ParamVector pv = pv_of(scalars, 0xdeadbeef12345678ULL);
  std::string path = "pv_roundtrip.bin";
  write_param_vector(path, pv);
  ParamVector back = read_param_vector(path);
  CHECK(back == pv);
  std::remove(path.c_str());
}
