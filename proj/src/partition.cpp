#include "dmlsim/partition.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dmlsim {

ParamVector flatten(const Model& model) {
  ParamVector pv;
  pv.spec_fingerprint = model.spec.fingerprint();
  pv.scalars.reserve(model.spec.param_count());
  for (size_t li = 0; li < model.weights.size(); ++li) {
    const Matrix& w = model.weights[li];
    pv.scalars.insert(pv.scalars.end(), w.data.begin(), w.data.end());
    const std::vector<double>& b = model.biases[li];
    pv.scalars.insert(pv.scalars.end(), b.begin(), b.end());
  }
  return pv;
}

Model unflatten(const ParamVector& pv, const ModelSpec& spec) {
  if (pv.spec_fingerprint != spec.fingerprint())
    fail(ErrorKind::incompatible,
         "unflatten: ParamVector fingerprint does not match spec");
  if (pv.scalars.size() != spec.param_count())
    fail(ErrorKind::incompatible, "unflatten: scalar count mismatch");
  Model m;
  m.spec = spec;
  size_t pos = 0;
  for (const auto& l : spec.layers) {
    Matrix w(l.out, l.in);
    std::copy_n(pv.scalars.begin() + pos, w.data.size(), w.data.begin());
    pos += w.data.size();
    std::vector<double> b(pv.scalars.begin() + pos,
                          pv.scalars.begin() + pos + l.out);
    pos += l.out;
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  return m;
}

std::vector<Segment> make_segments(const ParamVector& pv,
                                   uint32_t segment_count) {
  uint64_t total = pv.scalars.size();
  if (segment_count == 0)
    fail(ErrorKind::config, "make_segments: segment count must be >= 1");
  if (segment_count > total)
    fail(ErrorKind::config,
         "make_segments: segment count " + std::to_string(segment_count) +
             " exceeds parameter count " + std::to_string(total));
  uint64_t padded = (total + segment_count - 1) / segment_count;
  // Padding must stay inside the final segment: every earlier segment has to
  // be completely filled.
  if (uint64_t(segment_count - 1) * padded > total)
    fail(ErrorKind::config,
         "make_segments: segment count " + std::to_string(segment_count) +
             " would pad more than the final segment for " +
             std::to_string(total) + " parameters");
  std::vector<Segment> out;
  out.reserve(segment_count);
  for (uint32_t id = 0; id < segment_count; ++id) {
    Segment s;
    s.segment_id = id;
    s.segment_count = segment_count;
    s.total_params = total;
    uint64_t begin = uint64_t(id) * padded;
    uint64_t end = std::min(begin + padded, total);
    s.logical_len = end > begin ? end - begin : 0;
    s.payload.assign(padded, 0.0);
    std::copy_n(pv.scalars.begin() + begin, s.logical_len, s.payload.begin());
    out.push_back(std::move(s));
  }
  return out;
}

ParamVector assemble_segments(const std::vector<Segment>& segments,
                              uint64_t spec_fingerprint) {
  if (segments.empty())
    fail(ErrorKind::config, "assemble_segments: empty segment list");
  uint32_t m_count = segments.front().segment_count;
  uint64_t total = segments.front().total_params;
  if (segments.size() != m_count)
    fail(ErrorKind::incompatible, "assemble_segments: incomplete segment set");
  ParamVector pv;
  pv.spec_fingerprint = spec_fingerprint;
  pv.scalars.reserve(total);
  for (uint32_t id = 0; id < m_count; ++id) {
    const Segment& s = segments[id];
    if (s.segment_id != id || s.segment_count != m_count ||
        s.total_params != total)
      fail(ErrorKind::incompatible, "assemble_segments: inconsistent segment");
    pv.scalars.insert(pv.scalars.end(), s.payload.begin(),
                      s.payload.begin() + s.logical_len);
  }
  if (pv.scalars.size() != total)
    fail(ErrorKind::incompatible, "assemble_segments: length mismatch");
  return pv;
}

ParamVector aggregate_segments(const SegmentReceipts& received,
                               const ParamVector& fallback,
                               uint32_t segment_count) {
  uint64_t total = fallback.scalars.size();
  uint64_t padded = (total + segment_count - 1) / segment_count;
  ParamVector out = fallback;
  for (const auto& [id, copies] : received) {
    if (id >= segment_count)
      fail(ErrorKind::incompatible,
           "aggregate_segments: segment id " + std::to_string(id) +
               " out of range for count " + std::to_string(segment_count));
    if (copies.empty()) continue;
    uint64_t begin = uint64_t(id) * padded;
    uint64_t logical = std::min(begin + padded, total) - begin;
    double weight_sum = 0.0;
    for (const auto& [seg, w] : copies) {
      if (seg.segment_count != segment_count || seg.padded_len() != padded ||
          seg.segment_id != id)
        fail(ErrorKind::incompatible,
             "aggregate_segments: segment geometry mismatch for id " +
                 std::to_string(id));
      if (!(w > 0.0))
        fail(ErrorKind::config, "aggregate_segments: weights must be positive");
      weight_sum += w;
    }
    if (copies.size() == 1) {  // keep single receipts bitwise
      const Segment& only = copies.front().first;
      std::copy_n(only.payload.begin(), logical, out.scalars.begin() + begin);
      continue;
    }
    for (uint64_t k = 0; k < logical; ++k) {
      double acc = 0.0;
      for (const auto& [seg, w] : copies) acc += seg.payload[k] * w;
      out.scalars[begin + k] = acc / weight_sum;
    }
  }
  return out;
}

Model fedavg(const std::vector<WeightedModel>& models) {
  if (models.empty()) fail(ErrorKind::config, "fedavg: empty model list");
  const Model& first = *models.front().model;
  uint64_t fp = first.spec.fingerprint();
  double weight_sum = 0.0;
  for (const auto& [m, w] : models) {
    if (m->spec.fingerprint() != fp)
      fail(ErrorKind::incompatible, "fedavg: mismatched model specs");
    if (!(w > 0.0)) fail(ErrorKind::config, "fedavg: weights must be positive");
    weight_sum += w;
  }
  if (models.size() == 1) return first;  // x*w/w is not bitwise x
  Model out = first;
  for (size_t li = 0; li < out.weights.size(); ++li) {
    for (size_t k = 0; k < out.weights[li].data.size(); ++k) {
      double acc = 0.0;
      for (const auto& [m, w] : models) acc += m->weights[li].data[k] * w;
      out.weights[li].data[k] = acc / weight_sum;
    }
    for (size_t k = 0; k < out.biases[li].size(); ++k) {
      double acc = 0.0;
      for (const auto& [m, w] : models) acc += m->biases[li][k] * w;
      out.biases[li][k] = acc / weight_sum;
    }
  }
  return out;
}

namespace {

ModelSpec sub_spec(const ModelSpec& spec, size_t begin, size_t end) {
  ModelSpec out;
  out.param_dtype_bytes = spec.param_dtype_bytes;
  out.layers.assign(spec.layers.begin() + begin, spec.layers.begin() + end);
  out.validate(/*require_logit_output=*/false);
  return out;
}

}  // namespace

CutPlan cut_at_layer(const ModelSpec& spec, size_t cut_layer,
                     bool label_sharing) {
  spec.validate();
  size_t nl = spec.layers.size();
  if (cut_layer < 1 || cut_layer >= nl)
    fail(ErrorKind::config,
         "cut_at_layer: cut_layer " + std::to_string(cut_layer) +
             " out of range [1, " + std::to_string(nl) + ")");
  CutPlan plan;
  plan.cut_layer = cut_layer;
  plan.label_sharing = label_sharing;
  plan.client_spec = sub_spec(spec, 0, cut_layer);
  if (label_sharing) {
    plan.server_spec = sub_spec(spec, cut_layer, nl);
  } else {
    // Output layer returns to the client so labels never leave it.
    if (cut_layer >= nl - 1)
      fail(ErrorKind::config,
           "cut_at_layer: U-shaped split needs at least one server layer "
           "before the output layer");
    plan.server_spec = sub_spec(spec, cut_layer, nl - 1);
    plan.client_tail_spec = sub_spec(spec, nl - 1, nl);
    plan.tail_cut_width = spec.layers[nl - 1].in;
  }
  plan.cut_width = spec.layers[cut_layer - 1].out;
  plan.client_params = plan.client_spec.param_count() +
                       (plan.client_tail_spec ? plan.client_tail_spec->param_count() : 0);
  plan.client_fraction = double(plan.client_params) / double(spec.param_count());
  uint64_t flops_client =
      forward_flops(plan.client_spec, 1) +
      (plan.client_tail_spec ? forward_flops(*plan.client_tail_spec, 1) : 0);
  plan.client_flop_fraction = double(flops_client) / double(forward_flops(spec, 1));
  return plan;
}

std::vector<ModelSpec> split_even_by_params(const ModelSpec& spec,
                                            size_t parts) {
  size_t nl = spec.layers.size();
  if (parts < 1 || parts > nl)
    fail(ErrorKind::config,
         "split_even_by_params: cannot split " + std::to_string(nl) +
             " layers into " + std::to_string(parts) + " parts");
  std::vector<uint64_t> prefix(nl + 1, 0);
  for (size_t i = 0; i < nl; ++i)
    prefix[i + 1] = prefix[i] + uint64_t(spec.layers[i].in) * spec.layers[i].out +
                    spec.layers[i].out;

  // DP minimizing the largest group; earliest boundaries on ties.
  constexpr uint64_t kInf = UINT64_MAX;
  std::vector<std::vector<uint64_t>> best(parts + 1,
                                          std::vector<uint64_t>(nl + 1, kInf));
  std::vector<std::vector<size_t>> from(parts + 1,
                                        std::vector<size_t>(nl + 1, 0));
  best[0][0] = 0;
  for (size_t p = 1; p <= parts; ++p) {
    for (size_t end = p; end <= nl; ++end) {
      for (size_t mid = p - 1; mid < end; ++mid) {
        if (best[p - 1][mid] == kInf) continue;
        uint64_t group = prefix[end] - prefix[mid];
        uint64_t cand = std::max(best[p - 1][mid], group);
        if (cand < best[p][end]) {
          best[p][end] = cand;
          from[p][end] = mid;
        }
      }
    }
  }
  std::vector<size_t> bounds(parts + 1);
  bounds[parts] = nl;
  for (size_t p = parts; p > 0; --p) bounds[p - 1] = from[p][bounds[p]];
  std::vector<ModelSpec> out;
  for (size_t p = 0; p < parts; ++p)
    out.push_back(sub_spec(spec, bounds[p], bounds[p + 1]));
  return out;
}

namespace {

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) fail(ErrorKind::format, "param vector: truncated header");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_param_vector(const std::string& path, const ParamVector& pv) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path);
  put_u64(os, pv.spec_fingerprint);
  put_u64(os, pv.scalars.size());
  for (double d : pv.scalars) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
  }
  if (!os) fail(ErrorKind::io, "write failed: " + path);
}

ParamVector read_param_vector(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot read " + path);
  ParamVector pv;
  pv.spec_fingerprint = get_u64(is);
  uint64_t n = get_u64(is);
  pv.scalars.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    uint64_t bits = get_u64(is);
    std::memcpy(&pv.scalars[i], &bits, 8);
  }
  return pv;
}

}  // namespace dmlsim
