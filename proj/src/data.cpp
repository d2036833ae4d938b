#include "fngd/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

namespace fngd {

namespace {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic = 0x00000803;
// Largest element count accepted from a header.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw IdxError(IdxError::Kind::compression, "gzip: inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IdxError(IdxError::Kind::compression, "gzip: corrupt stream");
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw IdxError(IdxError::Kind::truncated, "gzip: truncated stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

IdxContents parse_idx(std::span<const std::uint8_t> raw) {
  std::vector<std::uint8_t> inflated;
  if (raw.size() >= 2 && raw[0] == 0x1F && raw[1] == 0x8B) {
    inflated = gunzip(raw);
    raw = inflated;
  }
  if (raw.size() < 4) throw IdxError(IdxError::Kind::truncated, "IDX: header shorter than magic");
  const std::uint32_t magic = read_be32(raw.data());
  if (magic != kLabelMagic && magic != kImageMagic) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08X", magic);
    throw IdxError(IdxError::Kind::bad_magic, std::string("unsupported IDX magic ") + buf);
  }
  const std::size_t ndims = raw[3];
  const std::size_t header = 4 + 4 * ndims;
  if (raw.size() < header) throw IdxError(IdxError::Kind::truncated, "IDX: truncated dimensions");

  std::vector<std::uint32_t> dims(ndims);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    dims[i] = read_be32(raw.data() + 4 + 4 * i);
    if (dims[i] != 0 && count > kMaxElements / dims[i])
      throw IdxError(IdxError::Kind::dimension_overflow, "IDX: element count overflows");
    count *= dims[i];
  }
  if (raw.size() - header < count)
    throw IdxError(IdxError::Kind::truncated, "IDX: payload has " +
                                                  std::to_string(raw.size() - header) +
                                                  " bytes, header promises " +
                                                  std::to_string(count));
  const std::uint8_t* payload = raw.data() + header;

  if (magic == kLabelMagic) {
    return Labels(payload, payload + count);
  }
  const std::size_t n = dims[0];
  const std::size_t pixels = static_cast<std::size_t>(dims[1]) * dims[2];
  Matrix m(pixels, n);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t p = 0; p < pixels; ++p) m(p, s) = payload[s * pixels + p] / 255.0;
  return m;
}

IdxContents load_idx(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_idx(bytes);
}

Matrix load_idx_images(const std::filesystem::path& path) {
  auto contents = load_idx(path);
  if (auto* m = std::get_if<Matrix>(&contents)) return std::move(*m);
  throw IdxError(IdxError::Kind::bad_magic, path.string() + ": expected an image file");
}

Labels load_idx_labels(const std::filesystem::path& path) {
  auto contents = load_idx(path);
  if (auto* l = std::get_if<Labels>(&contents)) return std::move(*l);
  throw IdxError(IdxError::Kind::bad_magic, path.string() + ": expected a label file");
}

void write_idx(const std::filesystem::path& path, std::span<const std::uint32_t> dims,
               std::span<const std::uint8_t> payload) {
  if (dims.size() != 1 && dims.size() != 3)
    throw std::invalid_argument("write_idx: need 1 or 3 dimensions");
  std::uint64_t count = 1;
  for (auto d : dims) count *= d;
  if (count != payload.size()) throw std::invalid_argument("write_idx: payload size mismatch");

  std::vector<std::uint8_t> bytes = {0, 0, 0x08, static_cast<std::uint8_t>(dims.size())};
  for (auto d : dims) {
    bytes.push_back(static_cast<std::uint8_t>(d >> 24));
    bytes.push_back(static_cast<std::uint8_t>(d >> 16));
    bytes.push_back(static_cast<std::uint8_t>(d >> 8));
    bytes.push_back(static_cast<std::uint8_t>(d));
  }
  bytes.insert(bytes.end(), payload.begin(), payload.end());

  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (f == nullptr) throw IdxError(IdxError::Kind::io, "cannot write " + path.string());
    const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (written != static_cast<int>(bytes.size()))
      throw IdxError(IdxError::Kind::io, "short gzip write to " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxError(IdxError::Kind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void Dataset::validate() const {
  const std::size_t n = inputs.cols();
  if (is_classification()) {
    if (labels.size() != n)
      throw std::invalid_argument("dataset: " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(n) + " samples");
    for (auto y : labels)
      if (y >= num_classes)
        throw std::invalid_argument("dataset: label " + std::to_string(y) + " >= " +
                                    std::to_string(num_classes) + " classes");
  } else if (values.cols() != n) {
    throw std::invalid_argument("dataset: " + std::to_string(values.cols()) +
                                " regression targets for " + std::to_string(n) + " samples");
  }
}

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch b;
  const std::size_t m = indices.size();
  b.inputs = Matrix(inputs.rows(), m);
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    const auto src = inputs.row(r);
    auto dst = b.inputs.row(r);
    for (std::size_t j = 0; j < m; ++j) dst[j] = src[indices[j]];
  }
  if (is_classification()) {
    b.labels.resize(m);
    for (std::size_t j = 0; j < m; ++j) b.labels[j] = labels[indices[j]];
  }
  if (!values.empty()) {
    b.values = Matrix(values.rows(), m);
    for (std::size_t r = 0; r < values.rows(); ++r)
      for (std::size_t j = 0; j < m; ++j) b.values(r, j) = values(r, indices[j]);
  }
  return b;
}

Dataset make_classification(Matrix inputs, Labels labels, std::size_t num_classes) {
  if (num_classes == 0) throw std::invalid_argument("dataset: need at least one class");
  Dataset d{std::move(inputs), std::move(labels), Matrix{}, num_classes};
  d.validate();
  return d;
}

Dataset make_regression(Matrix inputs, Matrix values) {
  Dataset d{std::move(inputs), Labels{}, std::move(values), 0};
  d.validate();
  return d;
}

Dataset synthetic_classification(std::size_t n, std::size_t d, std::size_t k,
                                 std::uint64_t seed) {
  if (k < 2 || n < k || d == 0)
    throw std::invalid_argument("synthetic_classification: need n >= k >= 2 and d >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix means(k, d);
  double min_dist = 0.0;
  for (int attempt = 0; attempt < 1000 && min_dist < 1e-3; ++attempt) {
    for (std::size_t c = 0; c < k; ++c) {
      double norm = 0.0;
      do {
        norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          means(c, j) = normal(rng);
          norm += means(c, j) * means(c, j);
        }
      } while (norm < 1e-12);
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < d; ++j) means(c, j) /= norm;
    }
    min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += std::pow(means(a, j) - means(b, j), 2);
        min_dist = std::min(min_dist, std::sqrt(s));
      }
  }
  if (min_dist < 1e-3)
    throw std::invalid_argument("synthetic_classification: cannot separate " +
                                std::to_string(k) + " unit means in " + std::to_string(d) +
                                " dimensions");
  const double sigma = min_dist / 4.0;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }

  Matrix x(d, n);
  Labels y(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto c = static_cast<std::uint32_t>(order[s] % k);
    y[s] = c;
    for (std::size_t j = 0; j < d; ++j) x(j, s) = means(c, j) + sigma * normal(rng);
  }
  return make_classification(std::move(x), std::move(y), k);
}

std::pair<Dataset, Dataset> split(const Dataset& data, std::size_t n_first) {
  if (n_first > data.size())
    throw std::invalid_argument("split: " + std::to_string(n_first) + " exceeds " +
                                std::to_string(data.size()) + " samples");
  std::vector<std::size_t> head(n_first), tail(data.size() - n_first);
  for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
  for (std::size_t i = 0; i < tail.size(); ++i) tail[i] = n_first + i;
  auto to_dataset = [&](const std::vector<std::size_t>& idx) {
    Batch b = data.gather(idx);
    return Dataset{std::move(b.inputs), std::move(b.labels), std::move(b.values),
                   data.num_classes};
  };
  return {to_dataset(head), to_dataset(tail)};
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t limit) {
  Matrix x = load_idx_images(images);
  Labels y = load_idx_labels(labels);
  if (y.size() != x.cols())
    throw std::invalid_argument("IDX dataset: " + std::to_string(x.cols()) + " images but " +
                                std::to_string(y.size()) + " labels");
  std::uint32_t max_label = 0;
  for (auto v : y) max_label = std::max(max_label, v);
  Dataset d = make_classification(std::move(x), std::move(y), std::size_t{max_label} + 1);
  if (limit != 0 && limit < d.size()) d = split(d, limit).first;
  return d;
}

BatchPlan plan_batches(std::size_t n, std::size_t batch_size, std::uint64_t epoch_seed) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch size must be positive");
  if (batch_size > n)
    throw std::invalid_argument("batches: batch size " + std::to_string(batch_size) +
                                " exceeds " + std::to_string(n) + " samples");
  BatchPlan plan{epoch_seed, batch_size, std::vector<std::size_t>(n), true};
  for (std::size_t i = 0; i < n; ++i) plan.order[i] = i;
  std::mt19937_64 rng(epoch_seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(plan.order[i], plan.order[pick(rng)]);
  }
  return plan;
}

std::vector<std::vector<std::size_t>> batches(const Dataset& data, std::size_t batch_size,
                                              std::uint64_t epoch_seed) {
  const BatchPlan plan = plan_batches(data.size(), batch_size, epoch_seed);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(plan.num_batches());
  for (std::size_t i = 0; i < plan.num_batches(); ++i) {
    auto b = plan.batch(i);
    out.emplace_back(b.begin(), b.end());
  }
  return out;
}

}  // namespace fngd
