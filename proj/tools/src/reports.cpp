#include "clcagan/cli/reports.hpp"

#include <cmath>
#include <limits>

#include "clcagan/error.hpp"

namespace clcagan::cli {

json number_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw Error(ErrorCode::InvalidArgument, "expected a number, got " + v.dump());
}

json auc_report_json(const AucReport& r, bool with_points) {
  json doc = {{"auc_df", number_json(r.auc_df)},     {"auc_dtau", number_json(r.auc_dtau)},
              {"auc_ftau", number_json(r.auc_ftau)}, {"auc_td", number_json(r.auc_td)},
              {"auc_bs", number_json(r.auc_bs)},     {"auc_tdbs", number_json(r.auc_tdbs)},
              {"auc_snpr", number_json(r.auc_snpr)}, {"auc_odp", number_json(r.auc_odp)}};
  if (with_points) {
    json pts = json::array();
    for (const auto& p : r.roc_points) pts.push_back({p.pd, p.pf, p.tau});
    doc["roc_points"] = pts;
  }
  return doc;
}

AucReport auc_report_from_json(const json& doc) {
  AucReport r;
  try {
    r.auc_df = number_from_json(doc.at("auc_df"));
    r.auc_dtau = number_from_json(doc.at("auc_dtau"));
    r.auc_ftau = number_from_json(doc.at("auc_ftau"));
    r.auc_td = number_from_json(doc.at("auc_td"));
    r.auc_bs = number_from_json(doc.at("auc_bs"));
    r.auc_tdbs = number_from_json(doc.at("auc_tdbs"));
    r.auc_snpr = number_from_json(doc.at("auc_snpr"));
    r.auc_odp = number_from_json(doc.at("auc_odp"));
    if (doc.contains("roc_points")) {
      for (const auto& p : doc.at("roc_points")) {
        r.roc_points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed AUC report: ") + e.what());
  }
  return r;
}

json auc_matrix_json(const AucMatrix& matrix) {
  json rows = json::array();
  for (const auto& row : matrix) {
    json r = json::array();
    for (const auto& v : row) r.push_back(v ? json(*v) : json(nullptr));
    rows.push_back(r);
  }
  return rows;
}

AucMatrix auc_matrix_from_json(const json& doc) {
  const json& rows = doc.is_object() && doc.contains("auc_matrix") ? doc.at("auc_matrix") : doc;
  if (!rows.is_array() || rows.empty()) {
    throw Error(ErrorCode::InvalidArgument, "AUC matrix must be a non-empty array of rows");
  }
  AucMatrix m;
  for (const auto& row : rows) {
    if (!row.is_array()) throw Error(ErrorCode::InvalidArgument, "AUC matrix row is not an array");
    std::vector<std::optional<double>> r;
    for (const auto& v : row) {
      if (v.is_null()) {
        r.emplace_back();
      } else if (v.is_number()) {
        r.emplace_back(v.get<double>());
      } else {
        throw Error(ErrorCode::InvalidArgument, "AUC matrix entry " + v.dump() + " is not a number or null");
      }
    }
    m.push_back(std::move(r));
  }
  return m;
}

json metrics_json(const ClMetrics& metrics) {
  json doc = {{"acc", metrics.acc}, {"tasks", metrics.auc_matrix.size()}};
  if (metrics.bwt) doc["bwt"] = *metrics.bwt;
  return doc;
}

json stage_json(const StageLog& s) {
  json epochs = json::array();
  for (const auto& e : s.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"d_loss", number_json(e.d_loss)},
                      {"g_adv", number_json(e.g_adv)},
                      {"g_recon", number_json(e.g_recon)},
                      {"g_csd", number_json(e.g_csd)},
                      {"batches", e.batches}});
  }
  json row = json::array();
  for (const auto& v : s.auc_row) row.push_back(v ? json(*v) : json(nullptr));
  return {{"stage", s.stage},
          {"task", s.task},
          {"background_count", s.background_count},
          {"exemplars_added", s.exemplars_added},
          {"buffer_size", s.buffer_size},
          {"auc_row", row},
          {"epochs", epochs}};
}

StageLog stage_from_json(const json& doc) {
  StageLog s;
  try {
    s.stage = doc.at("stage").get<std::uint32_t>();
    s.task = doc.at("task").get<std::string>();
    s.background_count = doc.at("background_count").get<std::size_t>();
    s.exemplars_added = doc.at("exemplars_added").get<std::size_t>();
    s.buffer_size = doc.at("buffer_size").get<std::size_t>();
    for (const auto& v : doc.at("auc_row")) {
      s.auc_row.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    for (const auto& e : doc.at("epochs")) {
      s.epochs.push_back({e.at("epoch").get<int>(), number_from_json(e.at("d_loss")),
                          number_from_json(e.at("g_adv")), number_from_json(e.at("g_recon")),
                          number_from_json(e.at("g_csd")), e.at("batches").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed stage record: ") + e.what());
  }
  return s;
}

}  // namespace clcagan::cli
