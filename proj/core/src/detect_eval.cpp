#include "clcagan/detect_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "clcagan/binary_io.hpp"
#include "clcagan/error.hpp"

namespace clcagan {

ScoreMap normalize_scores(ScoreMap map) {
  if (map.scores.empty()) {
    map.normalized = true;
    return map;
  }
  const auto [lo, hi] = std::minmax_element(map.scores.begin(), map.scores.end());
  const double min = *lo;
  const double span = *hi - min;
  for (auto& s : map.scores) s = span > 0 ? (s - min) / span : 0.0;
  map.normalized = true;
  return map;
}

ScoreMap score_map(const BatchFunction& reconstruct, const FeatureMatrix& features, bool normalize,
                   std::size_t chunk) {
  if (chunk == 0) throw Error(ErrorCode::InvalidArgument, "chunk must be positive");
  const auto n = features.vectors.rows();
  if (static_cast<std::size_t>(n) != features.pixel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "feature rows do not match the pixel grid");
  }
  ScoreMap map{features.height, features.width, std::vector<double>(static_cast<std::size_t>(n)), false};
  for (Eigen::Index start = 0; start < n; start += static_cast<Eigen::Index>(chunk)) {
    const auto rows = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), n - start);
    const Matrix batch = features.vectors.middleRows(start, rows);
    const Matrix rec = reconstruct(batch);
    if (rec.rows() != batch.rows() || rec.cols() != batch.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "reconstruction shape differs from its input");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      map.scores[static_cast<std::size_t>(start + r)] = (rec.row(r) - batch.row(r)).squaredNorm();
    }
  }
  return normalize ? normalize_scores(std::move(map)) : map;
}

ScoreMap score_map(const GeneratorParams& generator, const FeatureMatrix& features, bool normalize) {
  if (features.dim() != generator.arch.feature_dim) {
    throw Error(ErrorCode::ShapeMismatch, "generator expects feature dim " + std::to_string(generator.arch.feature_dim) +
                                              ", features have " + std::to_string(features.dim()));
  }
  return score_map([&](const Matrix& b) { return generator_forward(generator, b); }, features, normalize);
}

std::vector<RocPoint> roc_3d(std::span<const double> scores, std::span<const std::uint8_t> labels,
                             std::size_t n_thresholds) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  if (n_thresholds < 2) throw Error(ErrorCode::InvalidArgument, "need at least two thresholds");
  std::size_t n_anom = 0;
  for (const auto l : labels) n_anom += l != 0;
  const std::size_t n_bg = labels.size() - n_anom;
  if (n_anom == 0 || n_bg == 0) throw Error(ErrorCode::SingleClassTruth, "truth needs anomaly and background pixels");

  // Pixels sorted by descending score so counts above a threshold are prefix sums.
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<double> taus(scores.begin(), scores.end());
  taus.push_back(0.0);
  taus.push_back(1.0);
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  if (taus.size() > n_thresholds) {
    std::vector<double> kept;
    kept.reserve(n_thresholds);
    const auto last = taus.size() - 1;
    for (std::size_t q = 0; q < n_thresholds; ++q) {
      kept.push_back(taus[(q * last + (n_thresholds - 1) / 2) / (n_thresholds - 1)]);
    }
    kept.front() = taus.front();
    kept.back() = taus.back();
    // 0 and 1 stay on the axis
    kept.push_back(0.0);
    kept.push_back(1.0);
    std::sort(kept.begin(), kept.end());
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
    taus = std::move(kept);
  }
  taus.push_back(std::nextafter(taus.back(), std::numeric_limits<double>::infinity()));

  std::vector<RocPoint> out;
  out.reserve(taus.size());
  std::size_t pos = order.size();  // pixels order[0, pos) have score >= current tau
  std::size_t hit = n_anom;
  std::size_t fa = n_bg;
  for (const double tau : taus) {
    while (pos > 0 && scores[order[pos - 1]] < tau) {
      --pos;
      if (labels[order[pos]] != 0) {
        --hit;
      } else {
        --fa;
      }
    }
    out.push_back({static_cast<double>(hit) / static_cast<double>(n_anom),
                   static_cast<double>(fa) / static_cast<double>(n_bg), tau});
  }
  return out;
}

std::vector<RocPoint> roc_3d(const ScoreMap& scores, const GroundTruthMask& truth, std::size_t n_thresholds) {
  if (scores.height != truth.height() || scores.width != truth.width()) {
    throw Error(ErrorCode::ShapeMismatch, "score map and truth grids differ");
  }
  if (scores.normalized) return roc_3d(scores.scores, truth.labels(), n_thresholds);
  const auto norm = normalize_scores(scores);
  return roc_3d(norm.scores, truth.labels(), n_thresholds);
}

double AucReport::identity_residual() const {
  const double a = std::abs((auc_td - auc_bs) - (auc_dtau + auc_ftau));
  const double b = std::abs(auc_odp - (auc_bs + auc_dtau));
  const double c = std::abs(auc_odp - (auc_td - auc_ftau));
  return std::max({a, b, c});
}

AucReport auc_from_bases(double df, double dtau, double ftau) {
  AucReport r;
  r.auc_df = df;
  r.auc_dtau = dtau;
  r.auc_ftau = ftau;
  r.auc_td = df + dtau;
  r.auc_bs = df - ftau;
  r.auc_tdbs = dtau - ftau;
  r.auc_snpr = ftau == 0.0 ? std::numeric_limits<double>::infinity() : dtau / ftau;
  r.auc_odp = df + dtau - ftau;
  return r;
}

AucReport auc_suite(const std::vector<RocPoint>& roc) {
  if (roc.size() < 2) throw Error(ErrorCode::TooFewPoints, std::to_string(roc.size()) + " ROC points");
  double df = 0;
  double dtau = 0;
  double ftau = 0;
  for (std::size_t k = 0; k + 1 < roc.size(); ++k) {
    const auto& a = roc[k];
    const auto& b = roc[k + 1];
    df += std::abs(a.pf - b.pf) * (a.pd + b.pd) / 2.0;
    if (a.tau >= 0.0 && b.tau <= 1.0) {
      const double w = std::abs(b.tau - a.tau);
      dtau += w * (a.pd + b.pd) / 2.0;
      ftau += w * (a.pf + b.pf) / 2.0;
    }
  }
  // summation can overshoot the unit range by a few ulps
  const auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  auto r = auc_from_bases(unit(df), unit(dtau), unit(ftau));
  r.roc_points = roc;
  return r;
}

double ClMetrics::bwt_value() const {
  if (!bwt) throw Error(ErrorCode::BwtUndefined, "BWT needs at least two tasks");
  return *bwt;
}

ClMetrics cl_metrics(const AucMatrix& matrix) {
  const auto t = matrix.size();
  if (t == 0) throw Error(ErrorCode::InvalidArgument, "empty AUC matrix");
  auto entry = [&](std::size_t r, std::size_t i) {
    if (matrix[r].size() <= i || !matrix[r][i]) {
      throw Error(ErrorCode::InvalidArgument, "AUC matrix entry (" + std::to_string(r + 1) + ", " +
                                                  std::to_string(i + 1) + ") is missing");
    }
    const double v = *matrix[r][i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw Error(ErrorCode::InvalidArgument, "AUC matrix entry (" + std::to_string(r + 1) + ", " +
                                                  std::to_string(i + 1) + ") outside [0,1]");
    }
    return v;
  };
  ClMetrics m;
  m.auc_matrix = matrix;
  double sum = 0;
  for (std::size_t i = 0; i < t; ++i) sum += entry(t - 1, i);
  m.acc = sum / static_cast<double>(t);
  if (t >= 2) {
    double b = 0;
    for (std::size_t i = 0; i + 1 < t; ++i) b += entry(t - 1, i) - entry(i, i);
    m.bwt = b / static_cast<double>(t - 1);
  }
  return m;
}

ScoreMap rx_baseline(const HsiCube& cube) {
  const auto n = static_cast<Eigen::Index>(cube.pixel_count());
  const auto c = static_cast<Eigen::Index>(cube.channels());
  RowMatrix x(n, c);
  const auto v = cube.values();
  for (Eigen::Index i = 0; i < n * c; ++i) x.data()[i] = static_cast<double>(v[static_cast<std::size_t>(i)]);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  ScoreMap map{cube.height(), cube.width(), std::vector<double>(static_cast<std::size_t>(n), 0.0), false};
  const double trace = cov.trace();
  if (trace <= 0.0) return map;
  cov.diagonal().array() += 1e-6 * trace / static_cast<double>(c);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  const Eigen::MatrixXd solved = ldlt.solve(x.transpose());
  for (Eigen::Index i = 0; i < n; ++i) {
    map.scores[static_cast<std::size_t>(i)] = std::max(0.0, x.row(i).dot(solved.col(i)));
  }
  return map;
}

void save_score_grid(const ScoreMap& map, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.precision(17);
  out << map.height << ' ' << map.width << '\n';
  for (std::size_t i = 0; i < map.height; ++i) {
    for (std::size_t j = 0; j < map.width; ++j) out << (j ? " " : "") << map.at(i, j);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

void save_score_map(const ScoreMap& map, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("SCM1");
  w.u8(map.normalized ? 1 : 0);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(map.height));
  w.u32(static_cast<std::uint32_t>(map.width));
  for (const double s : map.scores) w.f64(s);
  io::write_file(path, w.buffer());
}

ScoreMap load_score_map(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  r.expect_magic("SCM1");
  ScoreMap map;
  map.normalized = r.u8() != 0;
  r.take(3);
  map.height = r.u32();
  map.width = r.u32();
  const auto count = map.height * map.width;
  if (r.remaining() != count * 8) {
    throw Error(ErrorCode::TruncatedPayload, "SCM1 payload holds " + std::to_string(r.remaining()) +
                                                 " bytes, expected " + std::to_string(count * 8));
  }
  map.scores.resize(count);
  for (auto& s : map.scores) {
    s = r.f64();
    if (!std::isfinite(s)) throw Error(ErrorCode::NonFiniteValue, "non-finite score in " + path.string());
  }
  return map;
}

}  // namespace clcagan
