#include "knas/dataset.hpp"

#include "knas/errors.hpp"
#include "knas/random.hpp"

#include "json.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

namespace knas {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic{'K', 'N', 'D', 'S'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr Index kCifarRecord = 3073;
constexpr int kCifarSide = 32;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& at, const fs::path& path) {
  if (at + sizeof(T) > in.size())
    throw FormatError(path.string() + ": truncated at byte offset " + std::to_string(at));
  T value;
  std::memcpy(&value, in.data() + at, sizeof(T));
  at += sizeof(T);
  return value;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool write_if_changed(const fs::path& path, const std::string& bytes) {
  std::error_code ec;
  if (fs::exists(path, ec)) {
    try {
      if (slurp(path) == bytes) return true;
    } catch (const IoError&) {
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
  return false;
}

std::string encode(const Dataset& data) {
  std::string out(kMagic.begin(), kMagic.end());
  put(out, kFormatVersion);
  put(out, static_cast<std::uint32_t>(data.size()));
  put(out, static_cast<std::uint32_t>(data.classes));
  const Shape& s = data.inputs.shape();
  put(out, static_cast<std::uint32_t>(s.size() - 1));
  for (std::size_t i = 1; i < s.size(); ++i) put(out, static_cast<std::uint32_t>(s[i]));
  for (int label : data.labels) put(out, static_cast<std::uint32_t>(label));
  for (Index i = 0; i < data.inputs.size(); ++i) put(out, data.inputs[i]);
  return out;
}

Tensor downsample(const Tensor& x, int factor) {
  if (factor == 1) return x;
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (factor < 1 || h % factor || w % factor) throw ContractError("downsample factor must divide the image size");
  const int oh = h / factor, ow = w / factor;
  Tensor out({n, c, oh, ow});
  const double inv = 1.0 / (factor * factor);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double s = 0.0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) s += x.at({i, ch, y * factor + dy, xx * factor + dx});
          out.at({i, ch, y, xx}) = s * inv;
        }
  return out;
}

Dataset concat(const std::vector<Dataset>& parts) {
  Dataset out;
  Index total = 0;
  for (const auto& p : parts) total += p.size();
  if (parts.empty() || total == 0) return out;
  Shape s = parts.front().inputs.shape();
  s[0] = static_cast<int>(total);
  Eigen::VectorXd data(shape_size(s));
  Index at = 0;
  for (const auto& p : parts) {
    data.segment(at, p.inputs.size()) = p.inputs.data();
    at += p.inputs.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.inputs = Tensor(s, std::move(data));
  out.classes = parts.front().classes;
  return out;
}

}  // namespace

Batch Dataset::batch(const std::vector<Index>& rows) const {
  Batch b;
  b.inputs = inputs.gather(rows);
  b.targets = Tensor({static_cast<int>(rows.size())});
  for (std::size_t k = 0; k < rows.size(); ++k) b.targets[static_cast<Index>(k)] = labels.at(static_cast<std::size_t>(rows[k]));
  b.kind = TargetKind::class_index;
  return b;
}

Batch Dataset::all() const {
  std::vector<Index> rows(static_cast<std::size_t>(size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  return batch(rows);
}

Dataset Dataset::head(Index count) const {
  if (count > size()) count = size();
  if (count <= 0) throw ContractError("dataset subset must keep at least one example");
  Dataset d;
  d.inputs = inputs.slice(0, count);
  d.labels.assign(labels.begin(), labels.begin() + count);
  d.classes = classes;
  return d;
}

std::vector<Tensor> synthetic_prototypes(const SyntheticSpec& spec) {
  std::vector<Tensor> protos;
  for (int c = 0; c < spec.classes; ++c) {
    auto rng = make_rng(spec.seed, Stream::data_gen, {0, static_cast<std::uint64_t>(c)});
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor p(spec.input_shape);
    for (Index i = 0; i < p.size(); ++i) p[i] = normal(rng);
    protos.push_back(std::move(p));
  }
  return protos;
}

DataSplit make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ContractError("synthetic data needs at least 2 classes");
  if (spec.train_examples < 1 || spec.val_examples < 1) throw ContractError("synthetic splits must be non-empty");
  if (spec.noise < 0) throw ContractError("noise must be >= 0");
  const std::vector<Tensor> protos = synthetic_prototypes(spec);
  auto make = [&](int count, std::uint64_t split) {
    Dataset d;
    d.classes = spec.classes;
    Shape s{count};
    s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
    d.inputs = Tensor(s);
    const Index per = shape_size(spec.input_shape);
    auto rng = make_rng(spec.seed, Stream::data_gen, {split});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < count; ++i) {
      const int label = i % spec.classes;
      d.labels.push_back(label);
      for (Index k = 0; k < per; ++k) d.inputs[i * per + k] = protos[static_cast<std::size_t>(label)][k] + spec.noise * normal(rng);
    }
    return d;
  };
  return {make(spec.train_examples, 1), make(spec.val_examples, 2)};
}

void write_dataset_file(const Dataset& data, const fs::path& path) { write_if_changed(path, encode(data)); }

Dataset read_dataset_file(const fs::path& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw FormatError(path.string() + ": not a dataset file (bad magic at byte offset 0)");
  std::size_t at = 4;
  const auto version = take<std::uint32_t>(bytes, at, path);
  if (version != kFormatVersion)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version) + " at byte offset 4");
  const auto n = take<std::uint32_t>(bytes, at, path);
  const auto classes = take<std::uint32_t>(bytes, at, path);
  const auto rank = take<std::uint32_t>(bytes, at, path);
  if (rank > 8) throw FormatError(path.string() + ": implausible rank at byte offset 16");
  Shape s{static_cast<int>(n)};
  for (std::uint32_t r = 0; r < rank; ++r) s.push_back(static_cast<int>(take<std::uint32_t>(bytes, at, path)));
  Dataset d;
  d.classes = static_cast<int>(classes);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t offset = at;
    const auto label = take<std::uint32_t>(bytes, at, path);
    if (label >= classes)
      throw FormatError(path.string() + ": label " + std::to_string(label) + " out of range at byte offset " +
                        std::to_string(offset));
    d.labels.push_back(static_cast<int>(label));
  }
  const Index count = shape_size(s);
  if (bytes.size() - at != static_cast<std::size_t>(count) * sizeof(double))
    throw FormatError(path.string() + ": expected " + std::to_string(count * 8) + " payload bytes at byte offset " +
                      std::to_string(at) + ", found " + std::to_string(bytes.size() - at));
  Eigen::VectorXd values(count);
  std::memcpy(values.data(), bytes.data() + at, static_cast<std::size_t>(count) * sizeof(double));
  d.inputs = Tensor(s, std::move(values));
  return d;
}

bool write_dataset(const DataSplit& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json meta;
  meta["format"] = "knas-dataset";
  meta["version"] = kFormatVersion;
  meta["classes"] = data.train.classes;
  meta["input_shape"] = std::vector<int>(data.train.inputs.shape().begin() + 1, data.train.inputs.shape().end());
  meta["train_examples"] = data.train.size();
  meta["val_examples"] = data.val.size();
  bool same = write_if_changed(dir / "train.bin", encode(data.train));
  same = write_if_changed(dir / "val.bin", encode(data.val)) && same;
  same = write_if_changed(dir / "dataset.json", meta.dump(2) + "\n") && same;
  return same;
}

DataSplit read_dataset(const fs::path& dir) {
  DataSplit d{read_dataset_file(dir / "train.bin"), read_dataset_file(dir / "val.bin")};
  if (d.train.classes != d.val.classes || d.train.inputs.shape().size() != d.val.inputs.shape().size() ||
      !std::equal(d.train.inputs.shape().begin() + 1, d.train.inputs.shape().end(), d.val.inputs.shape().begin() + 1))
    throw FormatError(dir.string() + ": train and val splits disagree on classes or input shape");
  return d;
}

Dataset read_cifar10_batch(const fs::path& path, Index max_records) {
  const std::string bytes = slurp(path);
  const Index size = static_cast<Index>(bytes.size());
  if (size % kCifarRecord != 0) {
    const Index offset = (size / kCifarRecord) * kCifarRecord;
    throw FormatError(path.string() + ": size " + std::to_string(size) + " is not a multiple of the 3073-byte record; " +
                      "truncated record at byte offset " + std::to_string(offset));
  }
  Index records = size / kCifarRecord;
  if (max_records >= 0) records = std::min(records, max_records);
  Dataset d;
  d.classes = 10;
  if (records == 0) return d;
  constexpr Index pixels = 3 * kCifarSide * kCifarSide;
  d.inputs = Tensor({static_cast<int>(records), 3, kCifarSide, kCifarSide});
  d.labels.reserve(static_cast<std::size_t>(records));
  for (Index r = 0; r < records; ++r) {
    const Index base = r * kCifarRecord;
    const auto label = static_cast<unsigned char>(bytes[static_cast<std::size_t>(base)]);
    if (label > 9)
      throw FormatError(path.string() + ": label " + std::to_string(label) + " out of range at byte offset " +
                        std::to_string(base));
    d.labels.push_back(label);
    for (Index p = 0; p < pixels; ++p)
      d.inputs[r * pixels + p] = static_cast<unsigned char>(bytes[static_cast<std::size_t>(base + 1 + p)]) / 255.0;
  }
  return d;
}

DataSplit ingest_cifar10(const fs::path& dir, const CifarOptions& options) {
  if (options.train_count < 1 || options.val_count < 1) throw ContractError("CIFAR subset counts must be positive");
  std::vector<Dataset> train_parts;
  Index have = 0;
  for (int i = 1; i <= 5 && have < options.train_count + (fs::exists(dir / "test_batch.bin") ? 0 : options.val_count);
       ++i) {
    const fs::path file = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (!fs::exists(file)) {
      if (i == 1) throw IoError("missing " + file.string());
      break;
    }
    train_parts.push_back(read_cifar10_batch(file));
    have += train_parts.back().size();
  }
  Dataset pool = concat(train_parts);
  DataSplit split;
  if (fs::exists(dir / "test_batch.bin")) {
    split.train = pool.head(options.train_count);
    split.val = read_cifar10_batch(dir / "test_batch.bin", options.val_count);
  } else {
    if (pool.size() < 2) throw FormatError(dir.string() + ": not enough records for a train/val split");
    const Index train = std::min(options.train_count, pool.size() - 1);
    const Index val = std::min(options.val_count, pool.size() - train);
    split.train = pool.head(train);
    std::vector<Index> rows(static_cast<std::size_t>(val));
    std::iota(rows.begin(), rows.end(), train);
    split.val.inputs = pool.inputs.gather(rows);
    split.val.labels.assign(pool.labels.begin() + train, pool.labels.begin() + train + val);
    split.val.classes = 10;
  }
  split.train.inputs = downsample(split.train.inputs, options.downsample);
  split.val.inputs = downsample(split.val.inputs, options.downsample);

  // per-channel mean of the kept training images
  const Tensor& x = split.train.inputs;
  const int c = x.dim(1);
  const Index hw = static_cast<Index>(x.dim(2)) * x.dim(3);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (Index i = 0; i < split.train.size(); ++i) sum += x.data().segment((i * c + ch) * hw, hw).sum();
    const double mean = sum / static_cast<double>(split.train.size() * hw);
    for (Dataset* d : {&split.train, &split.val})
      for (Index i = 0; i < d->size(); ++i) d->inputs.data().segment((i * c + ch) * hw, hw).array() -= mean;
  }
  return split;
}

}  // namespace knas
