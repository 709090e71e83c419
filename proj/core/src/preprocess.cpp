#include "clcagan/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "clcagan/error.hpp"

namespace clcagan {

std::size_t CbmMask::flagged_count() const {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
}

namespace {

template <typename T>
double cosine(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size() || u.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "similarity needs equal non-empty vectors");
  }
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double a = u[k];
    const double b = v[k];
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0) throw Error(ErrorCode::ZeroVector, "similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

}  // namespace

double sam_similarity(std::span<const double> u, std::span<const double> v) { return cosine(u, v); }
double sam_similarity(std::span<const float> u, std::span<const float> v) { return cosine(u, v); }

CbmMask build_cbm(const HsiCube& cube, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "CBM threshold must lie in (0, 1]");
  }
  CbmMask mask;
  mask.height = cube.height();
  mask.width = cube.width();
  mask.beta = beta;
  mask.flags.assign(cube.pixel_count(), 0);
  for (std::size_t i = 0; i < cube.height(); ++i) {
    for (std::size_t j = 0; j < cube.width(); ++j) {
      const std::size_t nj = j + 1 < cube.width() ? j + 1 : j - 1;
      std::uint8_t flag = 1;
      try {
        flag = sam_similarity(cube.pixel(i, j), cube.pixel(i, nj)) >= beta ? 0 : 1;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ZeroVector) throw;
        flag = 1;
      }
      mask.flags[i * cube.width() + j] = flag;
    }
  }
  return mask;
}

CbmMask all_background_mask(std::size_t height, std::size_t width) {
  CbmMask mask;
  mask.height = height;
  mask.width = width;
  mask.beta = 1.0;
  mask.flags.assign(height * width, 0);
  return mask;
}

RowMatrix local_mean(const HsiCube& cube, std::size_t window) {
  if (window % 2 == 0) throw Error(ErrorCode::EvenWindow, "window " + std::to_string(window) + " is even");
  if (window < 1 || window > std::min(cube.height(), cube.width())) {
    throw Error(ErrorCode::InvalidArgument, "window " + std::to_string(window) + " exceeds the image");
  }
  const auto h = static_cast<long>(cube.height());
  const auto w = static_cast<long>(cube.width());
  const auto c = cube.channels();
  const long half = static_cast<long>(window / 2);
  const double inv = 1.0 / static_cast<double>(window * window);
  RowMatrix out = RowMatrix::Zero(static_cast<Eigen::Index>(cube.pixel_count()), static_cast<Eigen::Index>(c));
  for (long i = 0; i < h; ++i) {
    for (long j = 0; j < w; ++j) {
      auto row = out.row(i * w + j);
      for (long di = -half; di <= half; ++di) {
        const auto si = static_cast<std::size_t>(std::clamp(i + di, 0L, h - 1));
        for (long dj = -half; dj <= half; ++dj) {
          const auto sj = static_cast<std::size_t>(std::clamp(j + dj, 0L, w - 1));
          auto px = cube.pixel(si, sj);
          for (std::size_t k = 0; k < c; ++k) row(static_cast<Eigen::Index>(k)) += px[k];
        }
      }
      row *= inv;
    }
  }
  return out;
}

FeatureMatrix ss_features(const HsiCube& cube, std::size_t window) {
  const RowMatrix means = local_mean(cube, window);
  const auto c = static_cast<Eigen::Index>(cube.channels());
  FeatureMatrix f;
  f.height = cube.height();
  f.width = cube.width();
  f.window = window;
  f.vectors.resize(static_cast<Eigen::Index>(cube.pixel_count()), 2 * c);
  for (std::size_t i = 0; i < cube.height(); ++i) {
    for (std::size_t j = 0; j < cube.width(); ++j) {
      const auto p = static_cast<Eigen::Index>(i * cube.width() + j);
      auto px = cube.pixel(i, j);
      for (Eigen::Index k = 0; k < c; ++k) f.vectors(p, k) = px[static_cast<std::size_t>(k)];
      f.vectors.row(p).tail(c) = means.row(p);
    }
  }
  return f;
}

SampleSplit split_samples(const FeatureMatrix& features, const CbmMask& mask) {
  if (features.height != mask.height || features.width != mask.width ||
      mask.flags.size() != features.pixel_count() ||
      static_cast<std::size_t>(features.vectors.rows()) != features.pixel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "feature grid and mask differ");
  }
  const std::size_t n_a = mask.flagged_count();
  const std::size_t n_b = features.pixel_count() - n_a;
  if (n_b == 0) throw Error(ErrorCode::EmptyBackground, "every pixel is flagged as an anomaly candidate");

  SampleSplit split;
  const auto dim = features.vectors.cols();
  split.background.resize(static_cast<Eigen::Index>(n_b), dim);
  split.anomaly.resize(static_cast<Eigen::Index>(n_a), dim);
  split.background_coords.reserve(n_b);
  split.anomaly_coords.reserve(n_a);
  for (std::size_t p = 0; p < features.pixel_count(); ++p) {
    const PixelCoord coord{p / features.width, p % features.width};
    const auto row = features.vectors.row(static_cast<Eigen::Index>(p));
    if (mask.flags[p] == 0) {
      split.background.row(static_cast<Eigen::Index>(split.background_coords.size())) = row;
      split.background_coords.push_back(coord);
    } else {
      split.anomaly.row(static_cast<Eigen::Index>(split.anomaly_coords.size())) = row;
      split.anomaly_coords.push_back(coord);
    }
  }
  return split;
}

void save_cbm(const CbmMask& mask, const std::filesystem::path& path) {
  save_mask_bytes(mask.height, mask.width, mask.flags, path);
}

}  // namespace clcagan
