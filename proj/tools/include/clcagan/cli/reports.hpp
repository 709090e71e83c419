#pragma once

#include <json.hpp>

#include "clcagan/detect_eval.hpp"
#include "clcagan/train.hpp"

namespace clcagan::cli {

using nlohmann::json;

/// Non-finite values are written as the strings "inf", "-inf" or "nan".
json number_json(double v);
double number_from_json(const json& v);  // accepts numbers and those strings

/// Fixed keys auc_df, auc_dtau, auc_ftau, auc_td, auc_bs, auc_tdbs,
/// auc_snpr, auc_odp; roc_points as [P_D, P_F, tau] triples when requested.
json auc_report_json(const AucReport& report, bool with_points = true);
AucReport auc_report_from_json(const json& doc);

/// Rows of numbers, null for entries that were not evaluated.
json auc_matrix_json(const AucMatrix& matrix);
/// Accepts either a bare array or {"auc_matrix": [...]}. Throws InvalidArgument.
AucMatrix auc_matrix_from_json(const json& doc);

/// {"acc": ..., "bwt": ...}; bwt is omitted for a single task.
json metrics_json(const ClMetrics& metrics);

json stage_json(const StageLog& stage);
StageLog stage_from_json(const json& doc);

}  // namespace clcagan::cli
