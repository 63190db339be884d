#include "dmlsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dmlsim/rng.hpp"

namespace dmlsim {

namespace {

uint32_t read_be_u32(std::istream& is, const std::string& path,
                     uint64_t* offset) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is)
    fail(ErrorKind::format,
         path + ": truncated at byte " + std::to_string(*offset));
  *offset += 4;
  return (uint32_t(buf[0]) << 24) | (uint32_t(buf[1]) << 16) |
         (uint32_t(buf[2]) << 8) | uint32_t(buf[3]);
}

void write_be_u32(std::ostream& os, uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) fail(ErrorKind::io, "cannot open " + images_path);
  uint64_t off = 0;
  uint32_t magic = read_be_u32(imgs, images_path, &off);
  if (magic != 0x00000803)
    fail(ErrorKind::format, images_path + ": bad magic 0x" +
                                [&] {
                                  std::ostringstream os;
                                  os << std::hex << magic;
                                  return os.str();
                                }() +
                                " at byte 0 (want 0x803)");
  uint32_t n = read_be_u32(imgs, images_path, &off);
  uint32_t rows = read_be_u32(imgs, images_path, &off);
  uint32_t cols = read_be_u32(imgs, images_path, &off);
  uint64_t dim = uint64_t(rows) * cols;
  std::vector<unsigned char> pixels(uint64_t(n) * dim);
  imgs.read(reinterpret_cast<char*>(pixels.data()), std::streamsize(pixels.size()));
  if (size_t(imgs.gcount()) != pixels.size())
    fail(ErrorKind::format,
         images_path + ": truncated at byte " +
             std::to_string(off + uint64_t(imgs.gcount())));

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) fail(ErrorKind::io, "cannot open " + labels_path);
  uint64_t loff = 0;
  uint32_t lmagic = read_be_u32(labs, labels_path, &loff);
  if (lmagic != 0x00000801)
    fail(ErrorKind::format, labels_path + ": bad magic at byte 0 (want 0x801)");
  uint32_t ln = read_be_u32(labs, labels_path, &loff);
  if (ln != n)
    fail(ErrorKind::format, labels_path + ": label count " +
                                std::to_string(ln) + " != image count " +
                                std::to_string(n) + " (byte 4)");
  std::vector<unsigned char> raw_labels(ln);
  labs.read(reinterpret_cast<char*>(raw_labels.data()), ln);
  if (size_t(labs.gcount()) != raw_labels.size())
    fail(ErrorKind::format,
         labels_path + ": truncated at byte " +
             std::to_string(loff + uint64_t(labs.gcount())));

  Dataset ds;
  ds.name = images_path;
  ds.inputs = Matrix(n, dim);
  for (size_t i = 0; i < pixels.size(); ++i)
    ds.inputs.data[i] = double(pixels[i]) / 255.0;
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  uint32_t max_label = 0;
  for (uint32_t l : ds.labels) max_label = std::max(max_label, l);
  ds.class_count = max_label + 1;
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) fail(ErrorKind::io, "cannot write " + images_path);
  write_be_u32(imgs, 0x00000803);
  write_be_u32(imgs, uint32_t(ds.size()));
  write_be_u32(imgs, uint32_t(ds.dim()));
  write_be_u32(imgs, 1);
  for (double v : ds.inputs.data) {
    double scaled = std::lround(v * 255.0);
    scaled = std::min(255.0, std::max(0.0, scaled));
    unsigned char b = static_cast<unsigned char>(scaled);
    imgs.write(reinterpret_cast<const char*>(&b), 1);
  }
  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) fail(ErrorKind::io, "cannot write " + labels_path);
  write_be_u32(labs, 0x00000801);
  write_be_u32(labs, uint32_t(ds.size()));
  for (uint32_t l : ds.labels) {
    unsigned char b = static_cast<unsigned char>(l);
    labs.write(reinterpret_cast<const char*>(&b), 1);
  }
}

Dataset synth_blobs(uint32_t class_count, uint32_t per_class, uint32_t dim,
                    double separation, uint64_t seed) {
  if (class_count == 0 || per_class == 0 || dim == 0)
    fail(ErrorKind::config, "synth_blobs: counts must be >= 1");
  // Centers sit on a sphere whose radius starts at `separation`, so pairwise
  // distances stay a small multiple of the noise scale and the separation
  // parameter genuinely controls difficulty. When the packing does not fit
  // (many classes in few dimensions) the radius grows until it does.
  Rng center_rng(mix64(seed, 0x63656e74ULL));
  std::vector<std::vector<double>> centers;
  constexpr int kPlacementRetries = 200;
  constexpr int kRadiusEscalations = 12;
  bool done = false;
  for (int escalation = 0; escalation < kRadiusEscalations && !done;
       ++escalation) {
    double radius = separation * std::pow(1.3, escalation);
    centers.clear();
    done = true;
    for (uint32_t c = 0; c < class_count && done; ++c) {
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementRetries && !placed;
           ++attempt) {
        std::vector<double> cand(dim);
        double norm2 = 0.0;
        for (double& v : cand) {
          v = center_rng.gaussian();
          norm2 += v * v;
        }
        double norm = std::sqrt(norm2);
        if (norm == 0.0) continue;
        for (double& v : cand) v *= radius / norm;
        placed = true;
        for (const auto& other : centers) {
          double d2 = 0.0;
          for (uint32_t k = 0; k < dim; ++k) {
            double diff = cand[k] - other[k];
            d2 += diff * diff;
          }
          if (d2 < separation * separation) {
            placed = false;
            break;
          }
        }
        if (placed) centers.push_back(std::move(cand));
      }
      if (!placed) done = false;
    }
  }
  if (!done)
    fail(ErrorKind::generation,
         "synth_blobs: could not place " + std::to_string(class_count) +
             " centers at separation " + std::to_string(separation) +
             " in dim " + std::to_string(dim));

  Dataset ds;
  ds.name = "synth_blobs";
  ds.class_count = class_count;
  ds.inputs = Matrix(uint64_t(class_count) * per_class, dim);
  ds.labels.resize(ds.inputs.rows);
  size_t row = 0;
  for (uint32_t c = 0; c < class_count; ++c) {
    Rng sample_rng(mix64(seed, 0x73616d70ULL, c));
    for (uint32_t s = 0; s < per_class; ++s, ++row) {
      for (uint32_t k = 0; k < dim; ++k)
        ds.inputs.at(row, k) = centers[c][k] + sample_rng.gaussian();
      ds.labels[row] = c;
    }
  }
  return ds;
}

std::vector<Shard> partition_by_labels(
    const Dataset& ds, const std::vector<std::vector<uint32_t>>& groups) {
  std::set<uint32_t> seen;
  for (size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty())
      fail(ErrorKind::config,
           "partition_by_labels: group " + std::to_string(g) + " is empty");
    for (uint32_t l : groups[g]) {
      if (l >= ds.class_count)
        fail(ErrorKind::config, "partition_by_labels: label " +
                                    std::to_string(l) + " >= class count " +
                                    std::to_string(ds.class_count));
      if (!seen.insert(l).second)
        fail(ErrorKind::config, "partition_by_labels: label " +
                                    std::to_string(l) +
                                    " appears in two groups");
    }
  }
  std::vector<Shard> shards(groups.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    shards[g].client_id = uint32_t(g);
    shards[g].label_set = groups[g];
    std::sort(shards[g].label_set.begin(), shards[g].label_set.end());
  }
  for (size_t i = 0; i < ds.size(); ++i) {
    for (size_t g = 0; g < groups.size(); ++g) {
      if (std::binary_search(shards[g].label_set.begin(),
                             shards[g].label_set.end(), ds.labels[i])) {
        shards[g].indices.push_back(i);
        break;
      }
    }
  }
  return shards;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds,
                                             double test_fraction) {
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    fail(ErrorKind::config, "split_train_test: fraction must be in [0,1)");
  std::vector<std::vector<size_t>> by_class(ds.class_count);
  for (size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::vector<char> is_test(ds.size(), 0);
  for (const auto& idxs : by_class) {
    size_t k = size_t(std::llround(double(idxs.size()) * test_fraction));
    for (size_t j = idxs.size() - k; j < idxs.size(); ++j) is_test[idxs[j]] = 1;
  }
  auto collect = [&](bool test) {
    Dataset out;
    out.class_count = ds.class_count;
    out.name = ds.name + (test ? ":test" : ":train");
    std::vector<size_t> rows;
    for (size_t i = 0; i < ds.size(); ++i)
      if (bool(is_test[i]) == test) rows.push_back(i);
    out.inputs = Matrix(rows.size(), ds.dim());
    out.labels.resize(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(&ds.inputs.data[rows[r] * ds.dim()], ds.dim(),
                  &out.inputs.data[r * ds.dim()]);
      out.labels[r] = ds.labels[rows[r]];
    }
    return out;
  };
  return {collect(false), collect(true)};
}

Batch make_batch(const Dataset& ds, const std::vector<size_t>& indices) {
  Batch b;
  b.inputs = Matrix(indices.size(), ds.dim());
  b.labels.resize(indices.size());
  for (size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(&ds.inputs.data[indices[r] * ds.dim()], ds.dim(),
                &b.inputs.data[r * ds.dim()]);
    b.labels[r] = ds.labels[indices[r]];
  }
  return b;
}

}  // namespace dmlsim
