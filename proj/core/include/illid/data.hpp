#pragma once

// Two-Gaussian toy data and IDX image files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "illid/tensor.hpp"

namespace illid {

using ad::Tensor;

struct ToyDataset {
  Tensor x;                          ///< [n x 2]
  std::vector<std::size_t> labels;   ///< 0 or 1
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;    ///< 90% of each class
  std::vector<std::size_t> test;
};

/// Class 0 ~ N((0,0), sigma^2 I), class 1 ~ N((10,10), sigma^2 I), n_per_class each,
/// shuffled. The split is stratified 90/10 per class.
ToyDataset generate_toy(double sigma, std::size_t n_per_class, std::uint64_t seed);

/// Rows of x at the given indices.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
std::vector<std::size_t> gather(const std::vector<std::size_t>& v, const std::vector<std::size_t>& idx);

/// Header `x1,x2,label`, one row per sample.
void write_toy_csv(std::ostream& os, const ToyDataset& ds);

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  Tensor pixels;  ///< [count x rows*cols], bytes scaled by 1/255
};

/// Big-endian IDX: magic 0x00000803 then three u32 dims and raw bytes.
/// Throws FormatError with the byte offset on bad magic or truncation.
IdxImages load_idx_images(const std::filesystem::path& path);
/// Magic 0x00000801, one u32 dim.
std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path);

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      const std::vector<std::uint8_t>& bytes);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

}  // namespace illid
