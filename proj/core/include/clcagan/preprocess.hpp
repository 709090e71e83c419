#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "clcagan/hsi_data.hpp"

namespace clcagan {

/// Row-major dense matrix of doubles; one sample per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDefaultCbmBeta = 0.99;
inline constexpr std::size_t kDefaultWindow = 3;

/// Coarse background mask: 0 marks a background candidate, 1 an anomaly candidate.
struct CbmMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> flags;
  double beta = kDefaultCbmBeta;

  std::uint8_t at(std::size_t i, std::size_t j) const { return flags[i * width + j]; }
  std::size_t flagged_count() const;
};

/// Spectral-spatial features: per pixel, the spectrum followed by its
/// w x w local mean (dim = 2C). Rows are pixels in row-major order.
struct FeatureMatrix {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t window = 1;
  RowMatrix vectors;

  std::size_t dim() const { return static_cast<std::size_t>(vectors.cols()); }
  std::size_t pixel_count() const { return height * width; }
};

struct PixelCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const PixelCoord&) const = default;
};

struct SampleSplit {
  RowMatrix background;  // B, n_b rows
  RowMatrix anomaly;     // A, n_a rows
  std::vector<PixelCoord> background_coords;
  std::vector<PixelCoord> anomaly_coords;
};

/// Cosine of the spectral angle. Throws ZeroVector when either norm is zero,
/// ShapeMismatch on unequal lengths.
double sam_similarity(std::span<const double> u, std::span<const double> v);
double sam_similarity(std::span<const float> u, std::span<const float> v);

/// Compares each pixel with its right neighbour (left neighbour in the last
/// column); similarity >= beta marks background. Zero-norm pixels are flagged.
CbmMask build_cbm(const HsiCube& cube, double beta = kDefaultCbmBeta);

/// Every pixel marked as background; used to ablate the masking step.
CbmMask all_background_mask(std::size_t height, std::size_t width);

/// Mean spectrum over the w x w window around each pixel, replicate-padded.
/// Returns pixel_count x C. Throws EvenWindow / InvalidArgument.
RowMatrix local_mean(const HsiCube& cube, std::size_t window);

FeatureMatrix ss_features(const HsiCube& cube, std::size_t window = kDefaultWindow);

/// Throws EmptyBackground when every pixel is flagged, ShapeMismatch when
/// the grids differ.
SampleSplit split_samples(const FeatureMatrix& features, const CbmMask& mask);

void save_cbm(const CbmMask& mask, const std::filesystem::path& path);

}  // namespace clcagan
