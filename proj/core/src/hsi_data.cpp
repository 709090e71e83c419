#include "clcagan/hsi_data.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "clcagan/binary_io.hpp"
#include "clcagan/error.hpp"
#include "clcagan/log.hpp"

namespace clcagan {

HsiCube::HsiCube(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> values,
                 std::optional<BandRange> band_range)
    : height_(height),
      width_(width),
      channels_(channels),
      values_(std::move(values)),
      band_range_(band_range) {
  if (height_ < 2 || width_ < 2 || channels_ < 1) {
    throw Error(ErrorCode::InvalidArgument, "cube dims " + std::to_string(height_) + "x" +
                                                std::to_string(width_) + "x" + std::to_string(channels_) +
                                                " below minimum 2x2x1");
  }
  if (values_.size() != height_ * width_ * channels_) {
    throw Error(ErrorCode::InvalidArgument, "cube holds " + std::to_string(values_.size()) +
                                                " values, expected " +
                                                std::to_string(height_ * width_ * channels_));
  }
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (!std::isfinite(values_[k])) {
      throw Error(ErrorCode::NonFiniteValue, "value index " + std::to_string(k));
    }
  }
}

bool bitwise_equal(const HsiCube& a, const HsiCube& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() ||
      a.band_range() != b.band_range()) {
    return false;
  }
  auto va = a.values();
  auto vb = b.values();
  return std::equal(va.begin(), va.end(), vb.begin(), [](float x, float y) {
    return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
  });
}

GroundTruthMask::GroundTruthMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  if (height_ == 0 || width_ == 0 || labels_.size() != height_ * width_) {
    throw Error(ErrorCode::InvalidArgument, "mask size does not match its dimensions");
  }
  std::size_t anomalies = 0;
  for (auto v : labels_) {
    if (v > 1) throw Error(ErrorCode::InvalidArgument, "mask label outside {0,1}");
    anomalies += v;
  }
  if (anomalies == labels_.size()) {
    throw Error(ErrorCode::InvalidArgument, "mask has no background pixel");
  }
  if (2 * anomalies >= labels_.size()) {
    throw Error(ErrorCode::InvalidArgument, "anomaly fraction must be below 0.5");
  }
}

std::size_t GroundTruthMask::anomaly_count() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Containers

namespace {

constexpr std::uint8_t kHsiVersion = 1;

}  // namespace

void save_hsi(const HsiCube& cube, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("HSIB");
  w.u8(kHsiVersion);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(cube.height()));
  w.u32(static_cast<std::uint32_t>(cube.width()));
  w.u32(static_cast<std::uint32_t>(cube.channels()));
  for (float v : cube.values()) w.f32(v);
  if (cube.band_range()) {
    w.magic("BNDR");
    w.f64(cube.band_range()->low_nm);
    w.f64(cube.band_range()->high_nm);
  }
  io::write_file(path, w.buffer());
}

HsiCube load_hsi(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  r.expect_magic("HSIB");
  const auto version = r.u8();
  if (version != kHsiVersion) {
    throw Error(ErrorCode::BadMagic, "unsupported HSIB version " + std::to_string(version));
  }
  r.take(3);
  const std::size_t m = r.u32();
  const std::size_t n = r.u32();
  const std::size_t c = r.u32();
  const std::size_t count = m * n * c;
  if (r.remaining() / 4 < count) {
    throw Error(ErrorCode::TruncatedPayload, "header declares " + std::to_string(count) +
                                                 " values, file holds " + std::to_string(r.remaining() / 4));
  }
  std::vector<float> values(count);
  for (std::size_t k = 0; k < count; ++k) {
    values[k] = r.f32();
    if (!std::isfinite(values[k])) {
      throw Error(ErrorCode::NonFiniteValue, path.string() + " value index " + std::to_string(k));
    }
  }
  std::optional<BandRange> range;
  if (r.remaining() >= 20) {
    r.expect_magic("BNDR");
    BandRange b;
    b.low_nm = r.f64();
    b.high_nm = r.f64();
    range = b;
  }
  return HsiCube(m, n, c, std::move(values), range);
}

void save_mask_bytes(std::size_t height, std::size_t width, std::span<const std::uint8_t> labels,
                     const std::filesystem::path& path) {
  if (labels.size() != height * width) {
    throw Error(ErrorCode::InvalidArgument, "mask payload does not match its dimensions");
  }
  io::ByteWriter w;
  w.magic("MSK1");
  w.u32(static_cast<std::uint32_t>(height));
  w.u32(static_cast<std::uint32_t>(width));
  w.bytes(labels);
  io::write_file(path, w.buffer());
}

void save_mask(const GroundTruthMask& mask, const std::filesystem::path& path) {
  save_mask_bytes(mask.height(), mask.width(), mask.labels(), path);
}

GroundTruthMask load_mask(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  r.expect_magic("MSK1");
  const std::size_t m = r.u32();
  const std::size_t n = r.u32();
  auto raw = r.take(m * n);
  return GroundTruthMask(m, n, std::vector<std::uint8_t>(raw.begin(), raw.end()));
}

// ---------------------------------------------------------------------------
// Synthetic scenes

std::size_t blob_area(int radius) {
  std::size_t area = 0;
  for (int di = -radius; di <= radius; ++di) {
    for (int dj = -radius; dj <= radius; ++dj) {
      if (di * di + dj * dj <= radius * radius + radius) ++area;
    }
  }
  return area;
}

namespace {

using Spectrum = std::vector<double>;

double spectral_angle(const Spectrum& a, const Spectrum& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double c = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  return std::acos(c);
}

// Positive spectrum: baseline plus a few Gaussian bumps over the band axis.
Spectrum smooth_signature(std::mt19937_64& rng, std::size_t channels) {
  std::uniform_real_distribution<double> base_d(0.15, 0.4);
  std::uniform_real_distribution<double> amp_d(0.2, 0.9);
  std::uniform_real_distribution<double> mu_d(-0.1, 1.1);
  std::uniform_real_distribution<double> sigma_d(0.06, 0.3);
  Spectrum s(channels, base_d(rng));
  for (int g = 0; g < 3; ++g) {
    const double a = amp_d(rng);
    const double mu = mu_d(rng);
    const double sigma = sigma_d(rng);
    for (std::size_t k = 0; k < channels; ++k) {
      const double x = channels > 1 ? static_cast<double>(k) / static_cast<double>(channels - 1) : 0.0;
      s[k] += a * std::exp(-(x - mu) * (x - mu) / (2 * sigma * sigma));
    }
  }
  return s;
}

double min_angle(const Spectrum& s, const std::vector<Spectrum>& others) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : others) best = std::min(best, spectral_angle(s, o));
  return best;
}

Spectrum anomaly_signature(std::mt19937_64& rng, std::size_t channels, const std::vector<Spectrum>& background,
                           double contrast) {
  for (int attempt = 0; attempt < 2000; ++attempt) {
    auto s = smooth_signature(rng, channels);
    if (min_angle(s, background) >= contrast) return s;
  }
  // Fall back to a background mean with a growing narrow feature.
  Spectrum mean(channels, 0.0);
  for (const auto& b : background) {
    for (std::size_t k = 0; k < channels; ++k) mean[k] += b[k] / static_cast<double>(background.size());
  }
  std::uniform_real_distribution<double> mu_d(0.0, 1.0);
  const double mu = mu_d(rng);
  for (double amp = 0.5;; amp *= 1.5) {
    Spectrum s = mean;
    for (std::size_t k = 0; k < channels; ++k) {
      const double x = channels > 1 ? static_cast<double>(k) / static_cast<double>(channels - 1) : 0.0;
      s[k] += amp * std::exp(-(x - mu) * (x - mu) / (2 * 0.05 * 0.05));
    }
    if (min_angle(s, background) >= contrast || amp > 1e6) return s;
  }
}

// Low-frequency random field on the pixel grid, roughly in [-1, 1].
std::vector<double> smooth_field(std::mt19937_64& rng, std::size_t height, std::size_t width) {
  std::uniform_real_distribution<double> freq_d(0.2, 2.0);
  std::uniform_real_distribution<double> phase_d(0.0, 2 * std::numbers::pi);
  std::uniform_real_distribution<double> sign_d(-1.0, 1.0);
  std::vector<double> field(height * width, 0.0);
  for (int q = 0; q < 3; ++q) {
    const double fx = freq_d(rng) * (sign_d(rng) < 0 ? -1 : 1);
    const double fy = freq_d(rng);
    const double phase = phase_d(rng);
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        const double arg = 2 * std::numbers::pi *
                               (fx * static_cast<double>(i) / static_cast<double>(height) +
                                fy * static_cast<double>(j) / static_cast<double>(width)) +
                           phase;
        field[i * width + j] += std::cos(arg) / 3.0;
      }
    }
  }
  return field;
}

struct Blob {
  int ci;
  int cj;
  int radius;
};

}  // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                                        std::size_t channels, std::size_t n_anomalies, double contrast,
                                        const SceneOptions& options) {
  if (height < 2 || width < 2 || channels < 2) {
    throw Error(ErrorCode::InvalidArgument, "synthetic scene needs at least 2x2x2");
  }
  if (!(contrast > 0.0) || contrast >= std::numbers::pi / 2) {
    throw Error(ErrorCode::InvalidArgument, "contrast must lie in (0, pi/2)");
  }
  if (options.max_blob_radius < 1 || options.background_signatures < 1) {
    throw Error(ErrorCode::InvalidArgument, "blob radius and signature count must be positive");
  }
  const double pixels = static_cast<double>(height * width);
  const auto max_area = blob_area(options.max_blob_radius);
  if (static_cast<double>(n_anomalies * max_area) >= 0.05 * pixels) {
    throw Error(ErrorCode::InfeasibleLayout, std::to_string(n_anomalies) + " blobs of up to " +
                                                 std::to_string(max_area) + " px exceed 5% of the scene");
  }

  std::mt19937_64 rng(seed);

  std::vector<Spectrum> background;
  for (std::size_t k = 0; k < options.background_signatures; ++k) {
    background.push_back(smooth_signature(rng, channels));
  }

  std::vector<std::vector<double>> fields;
  for (std::size_t k = 0; k < background.size(); ++k) fields.push_back(smooth_field(rng, height, width));
  const auto illumination = smooth_field(rng, height, width);

  double mean_level = 0;
  for (const auto& b : background) {
    for (double v : b) mean_level += v;
  }
  mean_level /= static_cast<double>(background.size() * channels);

  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<float> values(height * width * channels);
  std::vector<double> weights(background.size());
  for (std::size_t p = 0; p < height * width; ++p) {
    double total = 0;
    for (std::size_t k = 0; k < background.size(); ++k) {
      weights[k] = std::exp(3.0 * fields[k][p]);
      total += weights[k];
    }
    const double illum = 1.0 + 0.1 * illumination[p];
    for (std::size_t c = 0; c < channels; ++c) {
      double v = 0;
      for (std::size_t k = 0; k < background.size(); ++k) v += weights[k] / total * background[k][c];
      v = illum * v + options.background_noise * mean_level * unit(rng);
      values[p * channels + c] = static_cast<float>(v);
    }
  }

  // Blob placement: fully inside the image, separated by at least two
  // pixels so local windows of different blobs never overlap.
  std::uniform_int_distribution<int> radius_d(1, options.max_blob_radius);
  std::vector<Blob> blobs;
  for (std::size_t a = 0; a < n_anomalies; ++a) {
    const int r = radius_d(rng);
    if (static_cast<std::size_t>(2 * r + 1) > std::min(height, width)) {
      throw Error(ErrorCode::InfeasibleLayout, "blob of radius " + std::to_string(r) + " does not fit");
    }
    std::uniform_int_distribution<int> ci_d(r, static_cast<int>(height) - 1 - r);
    std::uniform_int_distribution<int> cj_d(r, static_cast<int>(width) - 1 - r);
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      const Blob cand{ci_d(rng), cj_d(rng), r};
      const bool clear = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
        const int gap = o.radius + cand.radius + 3;
        return std::abs(o.ci - cand.ci) >= gap || std::abs(o.cj - cand.cj) >= gap;
      });
      if (clear) {
        blobs.push_back(cand);
        placed = true;
      }
    }
    if (!placed) throw Error(ErrorCode::InfeasibleLayout, "cannot place blob " + std::to_string(a));
  }

  std::vector<Spectrum> avoid = background;
  for (const auto& s : options.avoid_signatures) {
    if (s.size() != channels) throw Error(ErrorCode::ShapeMismatch, "avoid signature length differs from channels");
    avoid.push_back(s);
  }
  std::vector<std::uint8_t> labels(height * width, 0);
  std::vector<Spectrum> anomalies;
  for (const auto& blob : blobs) {
    const auto sig = anomaly_signature(rng, channels, avoid, contrast);
    anomalies.push_back(sig);
    for (int di = -blob.radius; di <= blob.radius; ++di) {
      for (int dj = -blob.radius; dj <= blob.radius; ++dj) {
        if (di * di + dj * dj > blob.radius * blob.radius + blob.radius) continue;
        const auto p = static_cast<std::size_t>(blob.ci + di) * width + static_cast<std::size_t>(blob.cj + dj);
        labels[p] = 1;
        const double illum = 1.0 + 0.1 * illumination[p];
        for (std::size_t c = 0; c < channels; ++c) {
          const double jitter = 1.0 + options.anomaly_variability * unit(rng);
          values[p * channels + c] = static_cast<float>(illum * sig[c] * jitter);
        }
      }
    }
  }

  return SyntheticScene{HsiCube(height, width, channels, std::move(values)),
                        GroundTruthMask(height, width, std::move(labels)), std::move(background),
                        std::move(anomalies)};
}

std::vector<SyntheticScene> generate_synthetic_stream(const std::vector<std::uint64_t>& seeds, std::size_t height,
                                                      std::size_t width, std::size_t channels,
                                                      std::size_t n_anomalies, double contrast,
                                                      const SceneOptions& options) {
  // Background endmembers are the first draws from each seed, so a second
  // pass with the pooled signatures reproduces the same backgrounds.
  std::vector<Spectrum> pooled = options.avoid_signatures;
  for (const auto seed : seeds) {
    const auto first = generate_synthetic_scene(seed, height, width, channels, 0, contrast, options);
    pooled.insert(pooled.end(), first.background_signatures.begin(), first.background_signatures.end());
  }
  SceneOptions with_pool = options;
  with_pool.avoid_signatures = pooled;
  std::vector<SyntheticScene> out;
  for (const auto seed : seeds) {
    out.push_back(generate_synthetic_scene(seed, height, width, channels, n_anomalies, contrast, with_pool));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and PCA

HsiCube normalize_bands(const HsiCube& cube) {
  auto v = cube.values();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<float> out(v.size(), 0.0f);
  if (hi > lo) {
    const double span = hi - lo;
    for (std::size_t k = 0; k < v.size(); ++k) {
      out[k] = static_cast<float>((static_cast<double>(v[k]) - lo) / span);
    }
  }
  return HsiCube(cube.height(), cube.width(), cube.channels(), std::move(out), cube.band_range());
}

namespace {

Eigen::MatrixXd pixel_matrix(const HsiCube& cube) {
  Eigen::MatrixXd x(cube.pixel_count(), cube.channels());
  auto v = cube.values();
  for (std::size_t p = 0; p < cube.pixel_count(); ++p) {
    for (std::size_t c = 0; c < cube.channels(); ++c) {
      x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = v[p * cube.channels() + c];
    }
  }
  return x;
}

HsiCube from_matrix(const Eigen::MatrixXd& z, const HsiCube& like) {
  std::vector<float> out(static_cast<std::size_t>(z.size()));
  const auto cols = static_cast<std::size_t>(z.cols());
  for (Eigen::Index p = 0; p < z.rows(); ++p) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      out[static_cast<std::size_t>(p) * cols + static_cast<std::size_t>(c)] = static_cast<float>(z(p, c));
    }
  }
  return HsiCube(like.height(), like.width(), cols, std::move(out), like.band_range());
}

}  // namespace

std::pair<PcaModel, HsiCube> pca_fit_reduce(const HsiCube& cube, std::size_t target_dim) {
  const auto channels = cube.channels();
  if (target_dim < 1 || target_dim > channels) {
    throw Error(ErrorCode::InvalidArgument, "PCA target dimension " + std::to_string(target_dim) +
                                                " outside [1, " + std::to_string(channels) + "]");
  }
  const Eigen::MatrixXd x = pixel_matrix(cube);
  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const auto c = static_cast<Eigen::Index>(channels);
  const auto d = static_cast<Eigen::Index>(target_dim);
  // Eigen sorts ascending; take from the top.
  model.basis.resize(c, d);
  model.eigenvalues.resize(d);
  const double top = std::max(solver.eigenvalues()(c - 1), 0.0);
  const double zero_tol = std::max(top, std::numeric_limits<double>::min()) * 1e-12;
  model.effective_rank = 0;
  for (Eigen::Index k = 0; k < d; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(c - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    model.basis.col(k) = v;
    const double lambda = std::max(solver.eigenvalues()(c - 1 - k), 0.0);
    model.eigenvalues(k) = lambda;
    if (lambda > zero_tol) ++model.effective_rank;
  }
  model.target_dim = target_dim;

  Eigen::MatrixXd z = centered * model.basis;
  if (model.effective_rank < target_dim) {
    log::warn("PCA: only " + std::to_string(model.effective_rank) + " nonzero eigenvalues for target dim " +
              std::to_string(target_dim) + "; padding with zero components");
    for (Eigen::Index k = static_cast<Eigen::Index>(model.effective_rank); k < d; ++k) z.col(k).setZero();
  }
  return {model, from_matrix(z, cube)};
}

HsiCube pca_project(const PcaModel& model, const HsiCube& cube) {
  if (static_cast<Eigen::Index>(cube.channels()) != model.mean.size()) {
    throw Error(ErrorCode::DimensionMismatch, "PCA model expects " + std::to_string(model.mean.size()) +
                                                  " channels, cube has " + std::to_string(cube.channels()));
  }
  const Eigen::MatrixXd x = pixel_matrix(cube);
  Eigen::MatrixXd z = (x.rowwise() - model.mean.transpose()) * model.basis;
  for (Eigen::Index k = static_cast<Eigen::Index>(model.effective_rank); k < z.cols(); ++k) z.col(k).setZero();
  return from_matrix(z, cube);
}

HsiCube pca_reconstruct(const PcaModel& model, const HsiCube& projected) {
  if (static_cast<Eigen::Index>(projected.channels()) != model.basis.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "projected cube has " + std::to_string(projected.channels()) +
                                                  " channels, model has " + std::to_string(model.basis.cols()));
  }
  const Eigen::MatrixXd z = pixel_matrix(projected);
  Eigen::MatrixXd x = (z * model.basis.transpose()).rowwise() + model.mean.transpose();
  return from_matrix(x, projected);
}

}  // namespace clcagan
