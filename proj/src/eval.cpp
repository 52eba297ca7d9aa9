#include "eqpose/eval.hpp"

#include <algorithm>

#include "eqpose/error.hpp"

namespace eqpose {

double median(std::vector<double> xs) {
  contract(!xs.empty(), "median of empty list");
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

SampleError pose_error(const Se3Pose& pred, const Se3Pose& gt) {
  SampleError e;
  e.t_err_m = norm(pred.t - gt.t);
  e.r_err_deg = quat_angle_deg(pred.q, gt.q);
  return e;
}

EvalReport summarize_errors(const std::vector<SampleError>& errs, double t_thresh,
                            double r_thresh_deg) {
  contract(!errs.empty(), "summarize_errors: no samples");
  EvalReport rep;
  rep.per_sample = errs;
  std::vector<double> ts, rs;
  ts.reserve(errs.size());
  rs.reserve(errs.size());
  long long hits = 0;
  for (const auto& e : errs) {
    ts.push_back(e.t_err_m);
    rs.push_back(e.r_err_deg);
    if (e.t_err_m < t_thresh && e.r_err_deg < r_thresh_deg) ++hits;
  }
  rep.median_t_m = median(ts);
  rep.median_r_deg = median(rs);
  rep.acc = (double)hits / (double)errs.size();
  return rep;
}

}  // namespace eqpose
