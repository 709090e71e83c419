#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace clcagan {

struct BandRange {
  double low_nm = 0.0;
  double high_nm = 0.0;
  bool operator==(const BandRange&) const = default;
};

/// Radiance cube of height x width pixels with `channels` bands, stored
/// band-interleaved-by-pixel: the spectrum of pixel (i, j) is contiguous.
class HsiCube {
 public:
  /// Throws InvalidArgument on a size mismatch or dims below the minimum
  /// (height, width >= 2; channels >= 1), NonFiniteValue on NaN/Inf.
  HsiCube(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> values,
          std::optional<BandRange> band_range = std::nullopt);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t pixel_count() const { return height_ * width_; }
  const std::optional<BandRange>& band_range() const { return band_range_; }

  std::span<const float> values() const { return values_; }
  std::span<const float> pixel(std::size_t i, std::size_t j) const {
    return std::span<const float>(values_).subspan((i * width_ + j) * channels_, channels_);
  }
  float at(std::size_t i, std::size_t j, std::size_t c) const {
    return values_[(i * width_ + j) * channels_ + c];
  }

  bool operator==(const HsiCube&) const = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t channels_;
  std::vector<float> values_;
  std::optional<BandRange> band_range_;
};

/// Compares dimensions, metadata and the raw bit patterns of every value.
bool bitwise_equal(const HsiCube& a, const HsiCube& b);

/// Per-pixel labels, 0 = background, 1 = anomaly, row-major.
class GroundTruthMask {
 public:
  /// Throws InvalidArgument when labels are not in {0,1}, no background
  /// pixel exists, or the anomaly fraction is >= 0.5.
  GroundTruthMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> labels);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::span<const std::uint8_t> labels() const { return labels_; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return labels_[i * width_ + j]; }
  std::size_t anomaly_count() const;

  bool matches(const HsiCube& cube) const {
    return cube.height() == height_ && cube.width() == width_;
  }

  bool operator==(const GroundTruthMask&) const = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<std::uint8_t> labels_;
};

// HSIB container: "HSIB", u8 version (1), 3 zero bytes, u32 M, N, C, then
// M*N*C f32, all little-endian. A cube carrying band metadata appends an
// optional "BNDR" trailer with two f64 (low, high) in nanometres.
HsiCube load_hsi(const std::filesystem::path& path);
void save_hsi(const HsiCube& cube, const std::filesystem::path& path);
inline constexpr std::size_t kHsiHeaderBytes = 4 + 4 + 12;

// MSK1 container: "MSK1", u32 M, N, then M*N bytes in {0,1}.
void save_mask_bytes(std::size_t height, std::size_t width, std::span<const std::uint8_t> labels,
                     const std::filesystem::path& path);
GroundTruthMask load_mask(const std::filesystem::path& path);
void save_mask(const GroundTruthMask& mask, const std::filesystem::path& path);

struct SceneOptions {
  std::size_t background_signatures = 4;
  int max_blob_radius = 3;            // blobs get radius 1..max_blob_radius
  double background_noise = 0.005;    // relative to the mean radiance
  double anomaly_variability = 0.15;  // per-band relative jitter inside a blob
  // Anomaly signatures also keep `contrast` radians from each of these.
  std::vector<std::vector<double>> avoid_signatures;
};

struct SyntheticScene {
  HsiCube cube;
  GroundTruthMask truth;
  std::vector<std::vector<double>> background_signatures;
  std::vector<std::vector<double>> anomaly_signatures;
};

/// Pixel count of a blob of the given radius.
std::size_t blob_area(int radius);

/// Smoothly mixed background endmembers plus compact anomalous blobs, each
/// blob at least `contrast` radians from every background signature.
/// Throws InfeasibleLayout when the blobs cannot fit, InvalidArgument on
/// bad dimensions or a non-positive contrast.
SyntheticScene generate_synthetic_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                                        std::size_t channels, std::size_t n_anomalies, double contrast,
                                        const SceneOptions& options = {});

/// One scene per seed in `seeds`. Every scene's anomalies keep `contrast`
/// from the background signatures of all scenes in the stream, so no task's
/// background resembles another task's anomalies.
std::vector<SyntheticScene> generate_synthetic_stream(const std::vector<std::uint64_t>& seeds, std::size_t height,
                                                      std::size_t width, std::size_t channels,
                                                      std::size_t n_anomalies, double contrast,
                                                      const SceneOptions& options = {});

/// Global min-max rescale to [0, 1]. Constant cubes map to zeros.
HsiCube normalize_bands(const HsiCube& cube);

struct PcaModel {
  Eigen::VectorXd mean;         // length C
  Eigen::MatrixXd basis;        // C x d, orthonormal columns
  Eigen::VectorXd eigenvalues;  // length d, non-increasing
  std::size_t target_dim = 0;
  std::size_t effective_rank = 0;  // components with a nonzero eigenvalue
};

/// Fits on every pixel and projects to `target_dim` channels. Components
/// beyond the numerical rank are emitted as zeros with a warning.
std::pair<PcaModel, HsiCube> pca_fit_reduce(const HsiCube& cube, std::size_t target_dim);

HsiCube pca_project(const PcaModel& model, const HsiCube& cube);
HsiCube pca_reconstruct(const PcaModel& model, const HsiCube& projected);

}  // namespace clcagan
