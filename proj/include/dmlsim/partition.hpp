#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmlsim/nn.hpp"

namespace dmlsim {

// Flattened model parameters: each layer's weights (row-major) followed by
// its biases, in layer order. Tagged with the spec fingerprint so that
// unflattening into the wrong spec is caught.
struct ParamVector {
  std::vector<double> scalars;
  uint64_t spec_fingerprint = 0;

  bool operator==(const ParamVector&) const = default;
};

// One of M equal-size contiguous slices of a ParamVector. Zero padding is
// confined to the final segment.
struct Segment {
  uint32_t segment_id = 0;
  uint32_t segment_count = 1;  // M
  uint64_t logical_len = 0;    // unpadded scalar count in this segment
  uint64_t total_params = 0;
  std::vector<double> payload;  // padded_len scalars

  uint64_t padded_len() const { return payload.size(); }
};

// How a spec divides between client and server for split training. With
// label_sharing=false the output layer stays on the client (U-shaped split)
// and there is a second cut in front of it.
struct CutPlan {
  size_t cut_layer = 1;
  bool label_sharing = true;
  ModelSpec client_spec;                       // layers [0, cut_layer)
  ModelSpec server_spec;                       // middle (or remaining) layers
  std::optional<ModelSpec> client_tail_spec;   // output layer when U-shaped
  uint64_t cut_width = 0;       // activation scalars per sample at the cut
  uint64_t tail_cut_width = 0;  // width at the second cut (U-shape only)
  uint64_t client_params = 0;   // head (+ tail) parameter count
  double client_fraction = 0.0;       // client_params / total params
  double client_flop_fraction = 0.0;  // client share of training FLOPs
};

ParamVector flatten(const Model& model);
Model unflatten(const ParamVector& pv, const ModelSpec& spec);

// Split pv into segment_count equal padded slices. Fails when the count is so
// large that padding would spill out of the final segment.
std::vector<Segment> make_segments(const ParamVector& pv,
                                   uint32_t segment_count);

// Concatenate a full id-ordered segment set back into a ParamVector.
ParamVector assemble_segments(const std::vector<Segment>& segments,
                              uint64_t spec_fingerprint);

// segment_id -> received copies with aggregation weights, in arrival order.
using SegmentReceipts =
    std::map<uint32_t, std::vector<std::pair<Segment, double>>>;

// Per-segment weighted mean over whoever sent that segment; ids nobody sent
// keep the fallback's values. Summation is left-to-right in receipt order so
// that a full receipt set reproduces fedavg bitwise.
ParamVector aggregate_segments(const SegmentReceipts& received,
                               const ParamVector& fallback,
                               uint32_t segment_count);

struct WeightedModel {
  const Model* model;
  double weight;
};

// Parameter-wise weighted mean. Summation is left-to-right in list order.
Model fedavg(const std::vector<WeightedModel>& models);

CutPlan cut_at_layer(const ModelSpec& spec, size_t cut_layer,
                     bool label_sharing);

// Contiguous layer groups with parameter counts as balanced as possible
// (minimal largest group). Used by pipeline splitting over device chains.
std::vector<ModelSpec> split_even_by_params(const ModelSpec& spec,
                                            size_t parts);

// Little-endian binary serialization: fingerprint, length, scalars.
void write_param_vector(const std::string& path, const ParamVector& pv);
ParamVector read_param_vector(const std::string& path);

}  // namespace dmlsim
