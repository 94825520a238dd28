#pragma once

#include "knas/netbuild.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace knas {

// Labelled examples stored as one [n, C, H, W] tensor.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  int classes = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
  Batch batch(const std::vector<Index>& rows) const;
  Batch all() const;
  Dataset head(Index count) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DataSplit {
  Dataset train;
  Dataset val;
};

struct SyntheticSpec {
  int classes = 4;
  int train_examples = 256;
  int val_examples = 256;
  Shape input_shape{3, 8, 8};
  double noise = 1.0;
  std::uint64_t seed = 0;
};

// Class prototypes drawn from N(0, 1) per element; each example is its
// class prototype plus noise * N(0, 1). Labels cycle through the classes.
DataSplit make_synthetic(const SyntheticSpec& spec);
std::vector<Tensor> synthetic_prototypes(const SyntheticSpec& spec);

// train.bin, val.bin and dataset.json under dir. Returns true when the files
// already existed with identical bytes.
bool write_dataset(const DataSplit& data, const std::filesystem::path& dir);
DataSplit read_dataset(const std::filesystem::path& dir);

void write_dataset_file(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_file(const std::filesystem::path& path);

// One CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes
// (1024 red, 1024 green, 1024 blue, row-major 32x32). Pixels scaled to [0, 1].
Dataset read_cifar10_batch(const std::filesystem::path& path, Index max_records = -1);

struct CifarOptions {
  Index train_count = 1000;
  Index val_count = 500;
  int downsample = 1;  // average-pool factor applied to both spatial axes
};

// Reads data_batch_{1..5}.bin (train) and test_batch.bin (val) from dir,
// keeps the first train_count / val_count records, and subtracts the
// per-channel mean of the kept training images from both splits.
DataSplit ingest_cifar10(const std::filesystem::path& dir, const CifarOptions& options = {});

}  // namespace knas
