#include "illid/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>

#include "illid/error.hpp"
#include "illid/random.hpp"

namespace illid {

ToyDataset generate_toy(double sigma, std::size_t n_per_class, std::uint64_t seed) {
  if (!(sigma > 0)) throw ContractError("toy data needs sigma > 0");
  if (n_per_class == 0) throw ContractError("toy data needs at least one sample per class");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  const std::size_t n = 2 * n_per_class;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  ToyDataset ds;
  ds.sigma = sigma;
  ds.seed = seed;
  ds.labels.resize(n);
  std::vector<double> x(2 * n);
  // Sample k of the unshuffled sequence lands at position order[k].
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t label = k < n_per_class ? 0 : 1;
    const double centre = label == 0 ? 0.0 : 10.0;
    const std::size_t at = order[k];
    x[2 * at] = centre + noise(rng);
    x[2 * at + 1] = centre + noise(rng);
    ds.labels[at] = label;
  }
  ds.x = Tensor::matrix(n, 2, std::move(x));

  const std::size_t n_test = n_per_class / 10;
  std::size_t seen[2] = {0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = ds.labels[i];
    (seen[c]++ < n_test ? ds.test : ds.train).push_back(i);
  }
  return ds;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  const std::size_t c = x.cols();
  std::vector<double> out(idx.size() * c);
  const auto d = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy(d.begin() + idx[i] * c, d.begin() + (idx[i] + 1) * c, out.begin() + i * c);
  }
  return Tensor::matrix(idx.size(), c, std::move(out));
}

std::vector<std::size_t> gather(const std::vector<std::size_t>& v, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v.at(i));
  return out;
}

void write_toy_csv(std::ostream& os, const ToyDataset& ds) {
  os << "x1,x2,label\n";
  const auto prec = os.precision(17);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) os << ds.x(i, 0) << ',' << ds.x(i, 1) << ',' << ds.labels[i] << '\n';
  os.precision(prec);
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at) {
  if (buf.size() < at + 4) throw FormatError("truncated IDX header", buf.size());
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) | (std::uint32_t{buf[at + 2]} << 8) |
         std::uint32_t{buf[at + 3]};
}

void check_magic(const std::vector<unsigned char>& buf, std::uint32_t expected) {
  const std::uint32_t magic = read_be32(buf, 0);
  if (magic != expected) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "IDX magic 0x%08x, expected 0x%08x", magic, expected);
    throw FormatError(msg, 0);
  }
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  os.write(b, 4);
}

}  // namespace

IdxImages load_idx_images(const std::filesystem::path& path) {
  const auto buf = read_all(path);
  check_magic(buf, kImagesMagic);
  IdxImages out;
  out.count = read_be32(buf, 4);
  out.rows = read_be32(buf, 8);
  out.cols = read_be32(buf, 12);
  const std::size_t n = out.count * out.rows * out.cols;
  if (buf.size() < 16 + n) throw FormatError("truncated IDX pixel data", buf.size());
  std::vector<double> px(n);
  for (std::size_t i = 0; i < n; ++i) px[i] = buf[16 + i] / 255.0;
  out.pixels = Tensor::matrix(out.count, out.rows * out.cols, std::move(px));
  return out;
}

std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
  const auto buf = read_all(path);
  check_magic(buf, kLabelsMagic);
  const std::size_t n = read_be32(buf, 4);
  if (buf.size() < 8 + n) throw FormatError("truncated IDX label data", buf.size());
  return {buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      const std::vector<std::uint8_t>& bytes) {
  if (rows * cols == 0 || bytes.size() % (rows * cols) != 0)
    throw DimensionError("IDX image bytes do not divide into " + std::to_string(rows) + "x" + std::to_string(cols));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  put_be32(os, kImagesMagic);
  put_be32(os, static_cast<std::uint32_t>(bytes.size() / (rows * cols)));
  put_be32(os, static_cast<std::uint32_t>(rows));
  put_be32(os, static_cast<std::uint32_t>(cols));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  put_be32(os, kLabelsMagic);
  put_be32(os, static_cast<std::uint32_t>(labels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

}  // namespace illid
