#include "eqpose/geom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eqpose/error.hpp"

namespace eqpose {

Mat3 Mat3::identity() {
  Mat3 r;
  r(0, 0) = r(1, 1) = r(2, 2) = 1.0;
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
  return r;
}

double Mat3::det() const {
  const Mat3& a = *this;
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      r(i, j) = s;
    }
  return r;
}

Vec3 operator*(const Mat3& a, Vec3 v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
          a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

double normalize_angle(double theta) {
  double r = std::fmod(theta + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

CameraIntrinsics::CameraIntrinsics(double f_, double z0_) : f(f_), z0(z0_) {
  contract(f > 0.0, "CameraIntrinsics: focal distance must be positive");
  contract(z0 > 0.0, "CameraIntrinsics: scene depth must be positive");
}

static void check_same_frame(const Se2Motion& a, const Se2Motion& b, const char* op) {
  if (a.frame != b.frame)
    throw ContractViolation(std::string(op) + ": frame tag mismatch (SCENE vs IMAGE)");
}

Se2Motion se2_compose(const Se2Motion& m1, const Se2Motion& m2) {
  check_same_frame(m1, m2, "se2_compose");
  auto r1 = m1.rotation();
  Vec2 t3 = {m1.t.x + r1[0] * m2.t.x + r1[1] * m2.t.y,
             m1.t.y + r1[2] * m2.t.x + r1[3] * m2.t.y};
  return Se2Motion(m1.theta + m2.theta, t3, m1.frame);
}

Se2Motion se2_inverse(const Se2Motion& m) {
  // t_inv = -R(-theta) t, so that t + R(theta) t_inv = 0.
  double c = std::cos(-m.theta), s = std::sin(-m.theta);
  Vec2 ti = {-(c * m.t.x - s * m.t.y), -(s * m.t.x + c * m.t.y)};
  return Se2Motion(-m.theta, ti, m.frame);
}

Vec3 scene_action(const Se2Motion& m, Vec3 p) {
  contract(m.frame == Frame::Scene, "scene_action: motion must be tagged SCENE");
  double dx = p.x - m.t.x, dy = p.y - m.t.y;
  double c = std::cos(m.theta), s = std::sin(m.theta);
  // R^T (p - t): rows (cos, sin) and (-sin, cos).
  return {c * dx + s * dy, -s * dx + c * dy, p.z};
}

Se2Motion motion_to_image(const Se2Motion& m, const CameraIntrinsics& cam) {
  contract(m.frame == Frame::Scene, "motion_to_image: motion must be tagged SCENE");
  double k = cam.f / cam.z0;
  return Se2Motion(m.theta, {k * m.t.x, k * m.t.y}, Frame::Image);
}

Vec2 image_point_action(const Se2Motion& m, Vec2 p) {
  contract(m.frame == Frame::Image, "image_point_action: motion must be tagged IMAGE");
  double dx = p.x - m.t.x, dy = p.y - m.t.y;
  double c = std::cos(m.theta), s = std::sin(m.theta);
  return {c * dx + s * dy, -s * dx + c * dy};
}

Quat quat_normalized(double w, double x, double y, double z, double norm_tol) {
  double n = std::sqrt(w * w + x * x + y * y + z * z);
  contract(n > 0.0, "quaternion: zero norm");
  if (norm_tol > 0.0 && std::abs(n - 1.0) > norm_tol)
    throw ContractViolation("quaternion: norm " + std::to_string(n) +
                            " deviates from 1 beyond tolerance");
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  bool flip = w < 0.0;
  if (w == 0.0) {
    if (x != 0.0)
      flip = x < 0.0;
    else if (y != 0.0)
      flip = y < 0.0;
    else
      flip = z < 0.0;
  }
  if (flip) {
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  // -0.0 would break bit-exact comparisons of canonical forms.
  if (w == 0.0) w = 0.0;
  Quat q;
  q.w = w;
  q.x = x;
  q.y = y;
  q.z = z;
  return q;
}

Quat quat_about_z(double theta) {
  return quat_normalized(std::cos(0.5 * theta), 0.0, 0.0, std::sin(0.5 * theta));
}

static double ortho_error(const Mat3& r) {
  Mat3 g = r.transposed() * r;
  double e = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      e = std::max(e, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return e;
}

static Mat3 inverse(const Mat3& a) {
  double d = a.det();
  contract(std::abs(d) > 1e-30, "Mat3: singular matrix");
  Mat3 r;
  r(0, 0) = (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) / d;
  r(0, 1) = (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) / d;
  r(0, 2) = (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) / d;
  r(1, 0) = (a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2)) / d;
  r(1, 1) = (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) / d;
  r(1, 2) = (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) / d;
  r(2, 0) = (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)) / d;
  r(2, 1) = (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) / d;
  r(2, 2) = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) / d;
  return r;
}

// Higham polar iteration X <- (X + X^-T)/2; converges quadratically to the
// nearest orthogonal factor for near-rotation inputs.
static Mat3 nearest_rotation(Mat3 x) {
  for (int it = 0; it < 30; ++it) {
    Mat3 xit = inverse(x).transposed();
    Mat3 next;
    double delta = 0.0;
    for (int i = 0; i < 9; ++i) {
      next.m[i] = 0.5 * (x.m[i] + xit.m[i]);
      delta = std::max(delta, std::abs(next.m[i] - x.m[i]));
    }
    x = next;
    if (delta < 1e-15) break;
  }
  return x;
}

Quat quat_from_matrix(const Mat3& r, double tol) {
  double e = ortho_error(r);
  if (e > tol)
    throw ContractViolation("quat_from_matrix: input deviates from orthonormal by " +
                            std::to_string(e) + " (tolerance " + std::to_string(tol) + ")");
  if (r.det() <= 0.0)
    throw ContractViolation("quat_from_matrix: determinant is not +1 (reflection?)");
  Mat3 a = e > 0.0 ? nearest_rotation(r) : r;

  // Shepperd's method: pick the largest of (trace, a00, a11, a22).
  double tr = a(0, 0) + a(1, 1) + a(2, 2);
  double w, x, y, z;
  if (tr > a(0, 0) && tr > a(1, 1) && tr > a(2, 2)) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    w = 0.25 * s;
    x = (a(2, 1) - a(1, 2)) / s;
    y = (a(0, 2) - a(2, 0)) / s;
    z = (a(1, 0) - a(0, 1)) / s;
  } else if (a(0, 0) > a(1, 1) && a(0, 0) > a(2, 2)) {
    double s = std::sqrt(1.0 + a(0, 0) - a(1, 1) - a(2, 2)) * 2.0;
    w = (a(2, 1) - a(1, 2)) / s;
    x = 0.25 * s;
    y = (a(0, 1) + a(1, 0)) / s;
    z = (a(0, 2) + a(2, 0)) / s;
  } else if (a(1, 1) > a(2, 2)) {
    double s = std::sqrt(1.0 + a(1, 1) - a(0, 0) - a(2, 2)) * 2.0;
    w = (a(0, 2) - a(2, 0)) / s;
    x = (a(0, 1) + a(1, 0)) / s;
    y = 0.25 * s;
    z = (a(1, 2) + a(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + a(2, 2) - a(0, 0) - a(1, 1)) * 2.0;
    w = (a(1, 0) - a(0, 1)) / s;
    x = (a(0, 2) + a(2, 0)) / s;
    y = (a(1, 2) + a(2, 1)) / s;
    z = 0.25 * s;
  }
  return quat_normalized(w, x, y, z);
}

Mat3 quat_to_matrix(const Quat& q) {
  double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r(0, 0) = 1.0 - 2.0 * (y * y + z * z);
  r(0, 1) = 2.0 * (x * y - w * z);
  r(0, 2) = 2.0 * (x * z + w * y);
  r(1, 0) = 2.0 * (x * y + w * z);
  r(1, 1) = 1.0 - 2.0 * (x * x + z * z);
  r(1, 2) = 2.0 * (y * z - w * x);
  r(2, 0) = 2.0 * (x * z - w * y);
  r(2, 1) = 2.0 * (y * z + w * x);
  r(2, 2) = 1.0 - 2.0 * (x * x + y * y);
  return r;
}

double quat_angle_deg(const Quat& q1, const Quat& q2) {
  double d = q1.w * q2.w + q1.x * q2.x + q1.y * q2.y + q1.z * q2.z;
  d = std::min(1.0, std::abs(d));
  return 2.0 * std::acos(d) * (180.0 / kPi);
}

}  // namespace eqpose
