#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmlsim/nn.hpp"

namespace dmlsim {

struct Dataset {
  Matrix inputs;  // n x dim; IDX pixel bytes are scaled to [0,1]
  std::vector<uint32_t> labels;
  uint32_t class_count = 0;
  std::string name;

  size_t size() const { return inputs.rows; }
  size_t dim() const { return inputs.cols; }
};

// One client's view of a dataset: index subset plus the label set it covers.
struct Shard {
  uint32_t client_id = 0;
  std::vector<size_t> indices;
  std::vector<uint32_t> label_set;  // sorted
};

// IDX binary container (big-endian headers, unsigned byte pixels).
// Magic numbers: 0x00000803 for images, 0x00000801 for labels.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

// Inverse of load_idx for [0,1]-scaled data; pixel bytes round-trip exactly.
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

// Gaussian clusters (unit variance) around seeded random centers at pairwise
// distance >= separation. Per-class sample streams are independent, so
// growing per_class extends a dataset without changing earlier samples.
Dataset synth_blobs(uint32_t class_count, uint32_t per_class, uint32_t dim,
                    double separation, uint64_t seed);

// Label-group partition: shard i holds exactly the items whose label is in
// groups[i]. Groups must be disjoint and non-empty.
std::vector<Shard> partition_by_labels(
    const Dataset& ds, const std::vector<std::vector<uint32_t>>& groups);

// Deterministic stratified split: the last round(n_c * test_fraction) items
// of each class become the test set.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds,
                                             double test_fraction);

Batch make_batch(const Dataset& ds, const std::vector<size_t>& indices);

}  // namespace dmlsim
