#pragma once

// Pinhole camera model, SE(3) poses, and the piecewise-rigid warp producing
// differentiable source-frame sampling coordinates.

#include <array>
#include <cmath>
#include <vector>

#include "monorig/ops.hpp"
#include "monorig/tensor.hpp"

namespace monorig::geom {

inline constexpr double kZMin = 1e-3;  // scene units; points closer are "behind"

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    require(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
    require(cx >= 0 && cx < width && cy >= 0 && cy < height,
            "intrinsics: principal point outside image");
  }
};

// Rigid transform as a 4x4 homogeneous matrix, row-major.
struct Pose {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  static Pose identity() { return Pose{}; }

  double at(int r, int c) const { return m[static_cast<size_t>(4 * r + c)]; }
  double& at(int r, int c) { return m[static_cast<size_t>(4 * r + c)]; }

  // Rodrigues. Near-zero angles use the first-order expansion I + [r]x.
  static Pose from_axis_angle(const std::array<double, 6>& v) {
    for (double x : v) require(std::isfinite(x), "axis-angle: non-finite input");
    const double rx = v[0], ry = v[1], rz = v[2];
    const double th2 = rx * rx + ry * ry + rz * rz;
    const double th = std::sqrt(th2);
    Pose p;
    double s1, s2;
    if (th < 1e-8) {
      s1 = 1.0;
      s2 = 0.5;
    } else {
      s1 = std::sin(th) / th;
      s2 = (1.0 - std::cos(th)) / th2;
    }
    p.at(0, 0) = 1.0 - s2 * (ry * ry + rz * rz);
    p.at(0, 1) = -s1 * rz + s2 * rx * ry;
    p.at(0, 2) = s1 * ry + s2 * rx * rz;
    p.at(1, 0) = s1 * rz + s2 * rx * ry;
    p.at(1, 1) = 1.0 - s2 * (rx * rx + rz * rz);
    p.at(1, 2) = -s1 * rx + s2 * ry * rz;
    p.at(2, 0) = -s1 * ry + s2 * rx * rz;
    p.at(2, 1) = s1 * rx + s2 * ry * rz;
    p.at(2, 2) = 1.0 - s2 * (rx * rx + ry * ry);
    p.at(0, 3) = v[3];
    p.at(1, 3) = v[4];
    p.at(2, 3) = v[5];
    if (th >= 1e-8) return p;
    // first-order rotation block
    p.at(0, 0) = 1;
    p.at(0, 1) = -rz;
    p.at(0, 2) = ry;
    p.at(1, 0) = rz;
    p.at(1, 1) = 1;
    p.at(1, 2) = -rx;
    p.at(2, 0) = -ry;
    p.at(2, 1) = rx;
    p.at(2, 2) = 1;
    return p;
  }

  Pose operator*(const Pose& o) const {
    Pose r;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double acc = 0;
        for (int k = 0; k < 4; ++k) acc += at(i, k) * o.at(k, j);
        r.at(i, j) = acc;
      }
    return r;
  }

  Vec3 apply(Vec3 p) const {
    return {at(0, 0) * p.x + at(0, 1) * p.y + at(0, 2) * p.z + at(0, 3),
            at(1, 0) * p.x + at(1, 1) * p.y + at(1, 2) * p.z + at(1, 3),
            at(2, 0) * p.x + at(2, 1) * p.y + at(2, 2) * p.z + at(2, 3)};
  }

  Vec3 rotate(Vec3 p) const {
    return {at(0, 0) * p.x + at(0, 1) * p.y + at(0, 2) * p.z,
            at(1, 0) * p.x + at(1, 1) * p.y + at(1, 2) * p.z,
            at(2, 0) * p.x + at(2, 1) * p.y + at(2, 2) * p.z};
  }

  Vec3 translation() const { return {at(0, 3), at(1, 3), at(2, 3)}; }

  double orthonormality_defect() const {
    double worst = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += at(k, i) * at(k, j);
        worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
      }
    return worst;
  }

  // Rigid inverse; rejects matrices whose rotation block is not orthonormal.
  Pose inverse() const {
    require(orthonormality_defect() < 1e-6, "pose_invert: rotation block not orthonormal");
    Pose r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
    const Vec3 t = translation();
    r.at(0, 3) = -(r.at(0, 0) * t.x + r.at(0, 1) * t.y + r.at(0, 2) * t.z);
    r.at(1, 3) = -(r.at(1, 0) * t.x + r.at(1, 1) * t.y + r.at(1, 2) * t.z);
    r.at(2, 3) = -(r.at(2, 0) * t.x + r.at(2, 1) * t.y + r.at(2, 2) * t.z);
    return r;
  }

  double rotation_angle() const {
    const double tr = at(0, 0) + at(1, 1) + at(2, 2);
    return std::acos(std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0)));
  }

  // Log map back to 6 axis-angle parameters.
  std::array<double, 6> to_axis_angle() const {
    const double th = rotation_angle();
    std::array<double, 3> r{};
    if (th < 1e-10) {
      r = {(at(2, 1) - at(1, 2)) / 2.0, (at(0, 2) - at(2, 0)) / 2.0, (at(1, 0) - at(0, 1)) / 2.0};
    } else if (th < M_PI - 1e-6) {
      const double s = th / (2.0 * std::sin(th));
      r = {s * (at(2, 1) - at(1, 2)), s * (at(0, 2) - at(2, 0)), s * (at(1, 0) - at(0, 1))};
    } else {
      // near pi: recover axis from the symmetric part
      std::array<double, 3> a{std::sqrt(std::max(0.0, (at(0, 0) + 1.0) / 2.0)),
                              std::sqrt(std::max(0.0, (at(1, 1) + 1.0) / 2.0)),
                              std::sqrt(std::max(0.0, (at(2, 2) + 1.0) / 2.0))};
      int big = 0;
      if (a[1] > a[big]) big = 1;
      if (a[2] > a[big]) big = 2;
      if (big == 0) {
        a[1] = (at(0, 1) + at(1, 0)) / (4.0 * a[0]);
        a[2] = (at(0, 2) + at(2, 0)) / (4.0 * a[0]);
      } else if (big == 1) {
        a[0] = (at(0, 1) + at(1, 0)) / (4.0 * a[1]);
        a[2] = (at(1, 2) + at(2, 1)) / (4.0 * a[1]);
      } else {
        a[0] = (at(0, 2) + at(2, 0)) / (4.0 * a[2]);
        a[1] = (at(1, 2) + at(2, 1)) / (4.0 * a[2]);
      }
      // disambiguate sign with the skew part
      if ((at(2, 1) - at(1, 2)) * a[0] + (at(0, 2) - at(2, 0)) * a[1] +
              (at(1, 0) - at(0, 1)) * a[2] < 0)
        for (auto& x : a) x = -x;
      const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
      r = {th * a[0] / n, th * a[1] / n, th * a[2] / n};
    }
    return {r[0], r[1], r[2], at(0, 3), at(1, 3), at(2, 3)};
  }
};

struct DepthMap {
  int h = 0, w = 0;
  std::vector<double> v;  // row-major, positive

  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
};

struct Instance {
  int id = 0;  // >= 1; 0 is background
  int cls = 0;
  std::array<double, 4> box{};       // x0, y0, x1, y1 in pixels
  std::vector<uint8_t> mask;         // H*W binary
  std::vector<Pose> pose_per_source; // T_o per source frame
};

struct InstanceSet {
  int width = 0, height = 0;
  std::vector<Instance> instances;
};

// Per-pixel instance index map: 0 background, i means instances[i-1].
// Overlapping masks violate the disjointness contract.
inline std::vector<uint8_t> mask_ids_from_instances(const InstanceSet& set) {
  std::vector<uint8_t> ids(static_cast<size_t>(set.width) * set.height, 0);
  for (size_t i = 0; i < set.instances.size(); ++i) {
    const auto& inst = set.instances[i];
    require(inst.mask.size() == ids.size(), "instance set: mask extent mismatch");
    for (size_t p = 0; p < ids.size(); ++p) {
      if (!inst.mask[p]) continue;
      require(ids[p] == 0, "instance set: overlapping masks");
      ids[p] = static_cast<uint8_t>(i + 1);
    }
  }
  return ids;
}

// ---------------------------------------------------------------------------
// plain (non-differentiable) camera ops

inline Vec3 backproject(double px, double py, double depth, const CameraIntrinsics& k) {
  require(depth > 0, "backproject: non-positive depth");
  return {depth * (px - k.cx) / k.fx, depth * (py - k.cy) / k.fy, depth};
}

struct Projected {
  double x = 0, y = 0;
  bool in_front = false;
};

inline Projected project(Vec3 p, const CameraIntrinsics& k) {
  Projected out;
  out.in_front = p.z > kZMin;
  const double z = out.in_front ? p.z : kZMin;
  out.x = k.fx * p.x / z + k.cx;
  out.y = k.fy * p.y / z + k.cy;
  return out;
}

// Relative ego pose T_{s<-t} from camera-to-world poses of the two frames.
inline Pose relative_ego_pose(const Pose& cam_to_world_t, const Pose& cam_to_world_s) {
  return cam_to_world_s.inverse() * cam_to_world_t;
}

enum class ObjectPoseFrame { SourceCamera, TargetCamera };

// Per-instance pose T_o for the warp composite, from world-frame object
// poses at the two times. SourceCamera matches the literal left-multiplied
// composite (T_o * T_{s<-t}); TargetCamera the alternative ordering.
inline Pose relative_object_pose(const Pose& cam_to_world_t, const Pose& cam_to_world_s,
                                 const Pose& obj_to_world_t, const Pose& obj_to_world_s,
                                 ObjectPoseFrame frame) {
  const Pose motion_world = obj_to_world_s * obj_to_world_t.inverse();
  if (frame == ObjectPoseFrame::SourceCamera)
    return cam_to_world_s.inverse() * motion_world * cam_to_world_s;
  return cam_to_world_t.inverse() * motion_world * cam_to_world_t;
}

// ---------------------------------------------------------------------------
// differentiable pieces

// Rodrigues on the tape: 6 parameters -> 4x4 pose matrix, composed from
// scalar primitives so gradients come for free.
template <typename T>
diff::Tensor<T> pose_from_axis_angle(const diff::Tensor<T>& v) {
  using diff::Tensor;
  require(v.numel() == 6, "pose_from_axis_angle: want 6 parameters");
  for (int i = 0; i < 6; ++i)
    require(std::isfinite(static_cast<double>(v.data()[i])), "pose_from_axis_angle: non-finite input");
  auto flat = reshape(v, {6});
  auto elem = [&](int i) { return crop(flat, {i}, {1}); };
  Tensor<T> rx = elem(0), ry = elem(1), rz = elem(2);
  Tensor<T> tx = elem(3), ty = elem(4), tz = elem(5);
  Tensor<T> one = Tensor<T>::scalar(T(1));
  Tensor<T> zero = Tensor<T>::scalar(T(0));

  const double th = std::sqrt(static_cast<double>(v.data()[0]) * v.data()[0] +
                              static_cast<double>(v.data()[1]) * v.data()[1] +
                              static_cast<double>(v.data()[2]) * v.data()[2]);
  std::array<Tensor<T>, 9> r;
  if (th < 1e-8) {
    // I + [r]x, exact to first order and free of the 1/theta singularity
    r = {one, neg(rz), ry, rz, one, neg(rx), neg(ry), rx, one};
  } else {
    Tensor<T> th2 = rx * rx + ry * ry + rz * rz;
    Tensor<T> theta = diff::sqrt(th2);
    Tensor<T> s1 = diff::sin(theta) / theta;
    Tensor<T> s2 = (one - diff::cos(theta)) / th2;
    r[0] = one - s2 * (ry * ry + rz * rz);
    r[1] = neg(s1 * rz) + s2 * rx * ry;
    r[2] = s1 * ry + s2 * rx * rz;
    r[3] = s1 * rz + s2 * rx * ry;
    r[4] = one - s2 * (rx * rx + rz * rz);
    r[5] = neg(s1 * rx) + s2 * ry * rz;
    r[6] = neg(s1 * ry) + s2 * rx * rz;
    r[7] = s1 * rx + s2 * ry * rz;
    r[8] = one - s2 * (rx * rx + ry * ry);
  }
  std::vector<Tensor<T>> cells{r[0], r[1], r[2], tx,  r[3], r[4], r[5], ty,
                               r[6], r[7], r[8], tz,  zero, zero, zero, one};
  return reshape(concat(cells, 0), {4, 4});
}

template <typename T>
struct WarpField {
  diff::Tensor<T> coords;       // [H,W,2] source-frame (x,y) per target pixel
  std::vector<uint8_t> in_front;  // H*W
};

// Fused projection: per pixel, lift by depth, transform by the 4x4 selected
// via the mask-id map, project. Differentiable w.r.t. depth and every
// matrix; pixels landing behind the camera get clamped coordinates,
// in_front=false and zero gradient.
template <typename T>
WarpField<T> project_with_poses(const diff::Tensor<T>& depth, const CameraIntrinsics& k,
                                const std::vector<diff::Tensor<T>>& mats,
                                const std::vector<uint8_t>& mask_ids) {
  using diff::Node;
  using diff::NodePtr;
  require(depth.ndim() == 2, "project_with_poses: depth must be [H,W]");
  const int h = depth.dim(0), w = depth.dim(1);
  require(static_cast<int64_t>(mask_ids.size()) == static_cast<int64_t>(h) * w,
          "project_with_poses: mask id map extent mismatch");
  require(!mats.empty(), "project_with_poses: need at least the background matrix");
  for (const auto& m : mats)
    require(m.ndim() == 2 && m.dim(0) == 4 && m.dim(1) == 4, "project_with_poses: matrices must be 4x4");
  for (uint8_t id : mask_ids)
    require(id < mats.size(), "project_with_poses: mask id exceeds matrix count");

  std::vector<NodePtr<T>> parents{depth.node()};
  for (const auto& m : mats) parents.push_back(m.node());
  auto n = diff::detail::make_node<T>({h, w, 2}, parents, "project_with_poses");
  std::vector<uint8_t> in_front(static_cast<size_t>(h) * w, 0);

  const T* pd = depth.data();
  T* po = n->data.data();
  const double inv_fx = 1.0 / k.fx, inv_fy = 1.0 / k.fy;
  for (int y = 0; y < h; ++y) {
    const T qy = static_cast<T>((y - k.cy) * inv_fy);
    for (int x = 0; x < w; ++x) {
      const int64_t i = static_cast<int64_t>(y) * w + x;
      const T qx = static_cast<T>((x - k.cx) * inv_fx);
      const T* m = mats[mask_ids[static_cast<size_t>(i)]].data();
      const T d = pd[i];
      require(d > T(0), "project_with_poses: non-positive depth");
      const T ax = m[0] * qx + m[1] * qy + m[2];
      const T ay = m[4] * qx + m[5] * qy + m[6];
      const T az = m[8] * qx + m[9] * qy + m[10];
      const T px = d * ax + m[3];
      const T py = d * ay + m[7];
      T pz = d * az + m[11];
      if (pz > static_cast<T>(kZMin)) {
        in_front[static_cast<size_t>(i)] = 1;
      } else {
        pz = static_cast<T>(kZMin);
      }
      po[2 * i] = static_cast<T>(k.fx) * px / pz + static_cast<T>(k.cx);
      po[2 * i + 1] = static_cast<T>(k.fy) * py / pz + static_cast<T>(k.cy);
    }
  }
  if (n->requires_grad) {
    auto dn = depth.node();
    std::vector<NodePtr<T>> mat_nodes;
    for (const auto& m : mats) mat_nodes.push_back(m.node());
    auto ids = mask_ids;  // shared with caller semantics: copy for the closure
    auto front = in_front;
    const double fx = k.fx, fy = k.fy, cx = k.cx, cy = k.cy;
    n->backward_fn = [dn, mat_nodes, ids, front, h, w, fx, fy, cx, cy](Node<T>& self) {
      const T* g = self.grad.data();
      const T* pd2 = dn->data.data();
      const double inv_fx2 = 1.0 / fx, inv_fy2 = 1.0 / fy;
      for (int y = 0; y < h; ++y) {
        const T qy = static_cast<T>((y - cy) * inv_fy2);
        for (int x = 0; x < w; ++x) {
          const int64_t i = static_cast<int64_t>(y) * w + x;
          if (!front[static_cast<size_t>(i)]) continue;
          const T gu = g[2 * i], gv = g[2 * i + 1];
          if (gu == T(0) && gv == T(0)) continue;
          const T qx = static_cast<T>((x - cx) * inv_fx2);
          auto& mn = mat_nodes[ids[static_cast<size_t>(i)]];
          const T* m = mn->data.data();
          const T d = pd2[i];
          const T ax = m[0] * qx + m[1] * qy + m[2];
          const T ay = m[4] * qx + m[5] * qy + m[6];
          const T az = m[8] * qx + m[9] * qy + m[10];
          const T px = d * ax + m[3];
          const T py = d * ay + m[7];
          const T pz = d * az + m[11];
          const T inv_z = T(1) / pz;
          // du/dY = (fx/z, 0, -fx x/z^2); dv/dY = (0, fy/z, -fy y/z^2)
          const T gpx = gu * static_cast<T>(fx) * inv_z;
          const T gpy = gv * static_cast<T>(fy) * inv_z;
          const T gpz = -(gu * static_cast<T>(fx) * px + gv * static_cast<T>(fy) * py) * inv_z * inv_z;
          if (dn->requires_grad)
            dn->grad[static_cast<size_t>(i)] += gpx * ax + gpy * ay + gpz * az;
          if (mn->requires_grad) {
            T* gm = mn->grad.data();
            const T dq0 = d * qx, dq1 = d * qy;
            gm[0] += gpx * dq0; gm[1] += gpx * dq1; gm[2] += gpx * d; gm[3] += gpx;
            gm[4] += gpy * dq0; gm[5] += gpy * dq1; gm[6] += gpy * d; gm[7] += gpy;
            gm[8] += gpz * dq0; gm[9] += gpz * dq1; gm[10] += gpz * d; gm[11] += gpz;
          }
        }
      }
    };
  }
  return {diff::Tensor<T>(n), std::move(in_front)};
}

// Eq.-style piecewise-rigid warp. Pixels under instance i use the composite
// T_o^i * T_{s<-t} (mask-gated matrix left-multiplies the ego pose);
// background pixels use T_{s<-t} alone. TargetCamera flips the order.
template <typename T>
WarpField<T> piecewise_rigid_warp(const diff::Tensor<T>& depth, const CameraIntrinsics& k,
                                  const diff::Tensor<T>& ego_mat,
                                  const std::vector<diff::Tensor<T>>& instance_mats,
                                  const std::vector<uint8_t>& mask_ids,
                                  ObjectPoseFrame frame = ObjectPoseFrame::SourceCamera) {
  std::vector<diff::Tensor<T>> composites;
  composites.reserve(instance_mats.size() + 1);
  composites.push_back(ego_mat);
  for (const auto& inst : instance_mats)
    composites.push_back(frame == ObjectPoseFrame::SourceCamera ? diff::matmul(inst, ego_mat)
                                                                : diff::matmul(ego_mat, inst));
  return project_with_poses(depth, k, composites, mask_ids);
}

template <typename T>
struct WarpedImage {
  diff::Tensor<T> image;        // [H,W,C]
  std::vector<uint8_t> valid;   // in_front and in-bounds
};

// Synthesizes the target view by sampling the source image at the warp
// coordinates. Gradients flow through sample values and coords.
template <typename T>
WarpedImage<T> inverse_warp(const diff::Tensor<T>& source, const WarpField<T>& field) {
  require(source.ndim() == 3, "inverse_warp: source must be [H,W,C]");
  auto sampled = diff::bilinear_sample(source, field.coords);
  WarpedImage<T> out;
  out.image = sampled.values;
  out.valid.resize(sampled.valid.size());
  for (size_t i = 0; i < out.valid.size(); ++i)
    out.valid[i] = sampled.valid[i] && field.in_front[i];
  return out;
}

}  // namespace monorig::geom
