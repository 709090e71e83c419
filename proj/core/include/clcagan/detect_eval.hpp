#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "clcagan/capsule.hpp"
#include "clcagan/preprocess.hpp"

namespace clcagan {

struct ScoreMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> scores;  // row-major
  bool normalized = false;

  double at(std::size_t i, std::size_t j) const { return scores[i * width + j]; }
  bool operator==(const ScoreMap&) const = default;
};

/// Min-max rescale to [0,1]; a constant map becomes all zeros.
ScoreMap normalize_scores(ScoreMap map);

using BatchFunction = std::function<Matrix(const Matrix&)>;

/// Squared reconstruction residual of every pixel. `reconstruct` maps a
/// batch of feature rows to reconstructions of the same shape.
ScoreMap score_map(const BatchFunction& reconstruct, const FeatureMatrix& features, bool normalize = false,
                   std::size_t chunk = 1024);
ScoreMap score_map(const GeneratorParams& generator, const FeatureMatrix& features, bool normalize = false);

inline constexpr std::size_t kDefaultRocThresholds = 512;

struct RocPoint {
  double pd = 0;
  double pf = 0;
  double tau = 0;
  bool operator==(const RocPoint&) const = default;
};

/// Thresholds are the distinct normalised scores plus 0 and 1 (uniformly
/// subsampled by rank when there are more than n_thresholds), followed by one
/// point just above the maximum where P_D = P_F = 0. A pixel is detected at
/// tau when its score >= tau. Unnormalised maps are normalised first.
/// Throws SingleClassTruth / ShapeMismatch.
std::vector<RocPoint> roc_3d(const ScoreMap& scores, const GroundTruthMask& truth,
                             std::size_t n_thresholds = kDefaultRocThresholds);
std::vector<RocPoint> roc_3d(std::span<const double> normalized_scores, std::span<const std::uint8_t> labels,
                             std::size_t n_thresholds = kDefaultRocThresholds);

struct AucReport {
  double auc_df = 0;
  double auc_dtau = 0;
  double auc_ftau = 0;
  double auc_td = 0;
  double auc_bs = 0;
  double auc_tdbs = 0;
  double auc_snpr = 0;  // +inf when auc_ftau == 0
  double auc_odp = 0;
  std::vector<RocPoint> roc_points;

  /// Largest violation among TD - BS = dtau + ftau, ODP = BS + dtau, ODP = TD - ftau.
  double identity_residual() const;
  bool operator==(const AucReport&) const = default;
};

/// Derived measures from the three base areas.
AucReport auc_from_bases(double auc_df, double auc_dtau, double auc_ftau);

/// Trapezoid areas over the ROC points, then the derived measures.
/// Throws TooFewPoints.
AucReport auc_suite(const std::vector<RocPoint>& roc);

/// Row r holds AUC_{r,i} for i <= r; later entries are ignored.
using AucMatrix = std::vector<std::vector<std::optional<double>>>;

struct ClMetrics {
  AucMatrix auc_matrix;
  double acc = 0;
  std::optional<double> bwt;

  /// Throws BwtUndefined for a single task.
  double bwt_value() const;
};

/// Throws InvalidArgument when a required entry is missing or out of range.
ClMetrics cl_metrics(const AucMatrix& matrix);

/// Global Mahalanobis (RX) detector with ridge 1e-6 * trace / C on the covariance.
ScoreMap rx_baseline(const HsiCube& cube);

/// Text grid: "M N" header then M lines of N space-separated scores.
void save_score_grid(const ScoreMap& map, const std::filesystem::path& path);
/// Binary "SCM1": magic, u8 normalised flag, 3 pad, u32 M, u32 N, f64 scores.
void save_score_map(const ScoreMap& map, const std::filesystem::path& path);
ScoreMap load_score_map(const std::filesystem::path& path);

}  // namespace clcagan
