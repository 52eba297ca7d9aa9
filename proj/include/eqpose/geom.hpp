#pragma once

#include <array>
#include <cmath>

namespace eqpose {

struct Vec2 {
  double x = 0.0, y = 0.0;
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }
inline double norm(Vec3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }

// Row-major 3x3 matrix, just enough for rotations and pose files.
struct Mat3 {
  std::array<double, 9> m{};

  double& operator()(int r, int c) { return m[3 * r + c]; }
  double operator()(int r, int c) const { return m[3 * r + c]; }

  static Mat3 identity();
  Mat3 transposed() const;
  double det() const;
};

Mat3 operator*(const Mat3& a, const Mat3& b);
Vec3 operator*(const Mat3& a, Vec3 v);

// Planar motions carry the frame they live in. The scene-plane and
// image-plane formulas share one symbol set, so mixing them silently would
// be an easy mistake; composing or acting across frames is rejected.
enum class Frame { Scene, Image };

constexpr double kPi = 3.14159265358979323846264338327950288;

// Wraps an angle to (-pi, pi]; exact ties resolve to +pi.
double normalize_angle(double theta);

// Rigid motion of the plane: roll angle theta about the viewing axis plus a
// 2-vector translation (meters in the scene frame, pixels in the image
// frame). theta is kept normalized to (-pi, pi].
struct Se2Motion {
  double theta = 0.0;
  Vec2 t;
  Frame frame = Frame::Scene;

  Se2Motion() = default;
  Se2Motion(double theta_, Vec2 t_, Frame frame_)
      : theta(normalize_angle(theta_)), t(t_), frame(frame_) {}

  static Se2Motion identity(Frame f) { return Se2Motion(0.0, {0.0, 0.0}, f); }

  // Rotation matrix of theta, column-major action on (x, y):
  // R = [[cos, -sin], [sin, cos]].
  std::array<double, 4> rotation() const {
    double c = std::cos(theta), s = std::sin(theta);
    return {c, -s, s, c};
  }
};

// Pinhole camera facing a scene plane: focal distance f (pixels) and
// scene-plane depth Z0 (meters), both positive.
struct CameraIntrinsics {
  double f = 1.0;
  double z0 = 1.0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double f_, double z0_);
};

// Applying m1 then m2 to the camera; equals (theta1+theta2, t1 + R1*t2).
Se2Motion se2_compose(const Se2Motion& m1, const Se2Motion& m2);

// Motion g^-1 with se2_compose(m, se2_inverse(m)) = identity.
Se2Motion se2_inverse(const Se2Motion& m);

// Effect of a scene-frame camera motion on a scene point:
// p' = R^T (p - (T_X, T_Y, 0)); the Z coordinate is untouched.
Vec3 scene_action(const Se2Motion& m, Vec3 p);

// Projects a scene-frame motion to the image frame:
// same angle, translation scaled by f/Z0 (pixels).
Se2Motion motion_to_image(const Se2Motion& m, const CameraIntrinsics& cam);

// Effect of an image-frame motion on an image point: p' = R^T (p - t).
Vec2 image_point_action(const Se2Motion& m, Vec2 p);

// Unit quaternion (w, x, y, z), hemisphere-normalized: w > 0, or w == 0 and
// the first nonzero of (x, y, z) positive.
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;
};

// Normalizes to unit length and canonical hemisphere. Throws if the input
// norm deviates from 1 by more than norm_tol (pass 0 to skip the check and
// accept any nonzero quaternion).
Quat quat_normalized(double w, double x, double y, double z, double norm_tol = 0.0);

// Rotation by theta about u_z.
Quat quat_about_z(double theta);

// Nearest-rotation extraction. The input must be orthonormal within `tol`
// (max abs entry of R^T R - I) and have positive determinant; small float
// noise is removed by polar-decomposition iteration before conversion.
Quat quat_from_matrix(const Mat3& r, double tol = 1e-6);

Mat3 quat_to_matrix(const Quat& q);

// Geodesic distance 2*acos(|<q1,q2>|) in degrees, in [0, 180]; insensitive
// to quaternion sign.
double quat_angle_deg(const Quat& q1, const Quat& q2);

// 6-DoF camera pose: position (meters) + orientation quaternion.
struct Se3Pose {
  Vec3 t;
  Quat q;

  Se3Pose() = default;
  Se3Pose(Vec3 t_, Quat q_) : t(t_), q(q_) {}
};

}  // namespace eqpose
