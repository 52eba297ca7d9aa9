#pragma once

// Pose-error metrics: per-sample position / orientation errors, true medians,
// and the conjunctive accuracy-at-threshold statistic.

#include <vector>

#include "eqpose/model.hpp"

namespace eqpose {

struct SampleError {
  double t_err_m = 0.0;    // straight-line position error, meters
  double r_err_deg = 0.0;  // rotation geodesic, degrees, in [0, 180]
};

struct EvalReport {
  double median_t_m = 0.0;
  double median_r_deg = 0.0;
  double acc = 0.0;  // fraction with t_err < t_thresh AND r_err < r_thresh
  std::vector<SampleError> per_sample;
};

// True median: sorted middle element, or the mean of the central pair when the
// count is even. Empty input is a caller bug.
double median(std::vector<double> xs);

SampleError pose_error(const Se3Pose& pred, const Se3Pose& gt);

EvalReport summarize_errors(const std::vector<SampleError>& errs, double t_thresh,
                            double r_thresh_deg);

// Runs the model over the dataset in inference mode (frozen normalization
// statistics, no gradient tape) and scores each prediction against its label.
template <typename T>
EvalReport evaluate(PoseModel<T>& m, const std::vector<PoseSample<T>>& data, double t_thresh,
                    double r_thresh_deg) {
  contract(!data.empty(), "evaluate: dataset is empty");
  std::vector<SampleError> errs;
  errs.reserve(data.size());
  for (const auto& s : data) {
    Tensor<T> feat = backbone_forward<T>(nullptr, m, s.image, /*training=*/false);
    PosePrediction<T> pred = regress_pose<T>(nullptr, m, feat);
    errs.push_back(pose_error(pred.pose(), s.pose));
  }
  return summarize_errors(errs, t_thresh, r_thresh_deg);
}

}  // namespace eqpose
