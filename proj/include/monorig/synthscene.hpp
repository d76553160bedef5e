#pragma once

// Procedural scene generator: a tilted textured background wall plus moving
// textured billboards, rendered by exact per-pixel ray/plane intersection
// with z-buffering. Depth, masks and poses are analytic ground truth.

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "monorig/geometry.hpp"
#include "monorig/image_io.hpp"
#include "monorig/rng.hpp"

namespace monorig::scene {

struct MotionScale {
  double translation = 0.0;  // max per-frame translation, scene units
  double rotation = 0.0;     // max per-frame rotation, radians
};

struct SceneConfig {
  int width = 192;
  int height = 64;
  int frames = 7;
  int n_objects = 2;
  double depth_near = 3.0;
  double depth_far = 20.0;
  MotionScale ego_motion_scale{0.25, 0.015};
  MotionScale object_motion_scale{0.12, 0.008};
  int texture_octaves = 3;
  double texture_contrast = 1.0;
  int aa_samples = 3;  // n x n subpixel grid for the image; depth/masks stay center-sampled
  // motion scales are caps; trajectories are drawn at motion_fill of the cap
  double motion_fill = 1.0;
  uint64_t seed = 0;

  void validate() const {
    require(depth_near >= 0.5 && depth_far <= 100.0 && depth_far > depth_near,
            "scene config: depth range must sit inside [0.5, 100]");
    require(frames >= 3, "scene config: need at least 3 frames");
    require(width >= 16 && height >= 16, "scene config: image too small");
    require(n_objects >= 0 && n_objects < 250, "scene config: bad object count");
    require(texture_octaves >= 1 && texture_octaves <= 8, "scene config: bad octave count");
    require(texture_contrast > 0.0 && texture_contrast <= 1.0, "scene config: bad texture contrast");
    require(aa_samples >= 1 && aa_samples <= 8, "scene config: bad AA sample count");
    require(motion_fill > 0.0 && motion_fill <= 1.0, "scene config: bad motion fill");
    if (n_objects > 0)
      require(depth_far - depth_near >= 1.0,
              "scene config: objects cannot fit depth range (needs far - near >= 1)");
  }
};

// Hash-based band-limited value noise; C1-smooth via smoothstep blending.
struct Texture {
  uint64_t seed = 0;
  int octaves = 3;
  double base_cell = 0.6;  // world units per base lattice cell
  double contrast = 1.0;   // scales the value range around mid-gray

  static double lattice(uint64_t seed, int64_t ix, int64_t iy, int oct, int ch) {
    uint64_t z = seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(ix + 0x10000)) ^
                 (0xbf58476d1ce4e5b9ull * static_cast<uint64_t>(iy + 0x20000)) ^
                 (0x94d049bb133111ebull * static_cast<uint64_t>(oct * 4 + ch + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
  }

  std::array<double, 3> sample(double u, double v) const {
    std::array<double, 3> out{};
    double amp = 1.0, total = 0.0, freq = 1.0 / base_cell;
    for (int o = 0; o < octaves; ++o) {
      for (int ch = 0; ch < 3; ++ch) {
        const double x = u * freq, y = v * freq;
        const int64_t ix = static_cast<int64_t>(std::floor(x));
        const int64_t iy = static_cast<int64_t>(std::floor(y));
        double fx = x - static_cast<double>(ix), fy = y - static_cast<double>(iy);
        fx = fx * fx * (3 - 2 * fx);
        fy = fy * fy * (3 - 2 * fy);
        const double v00 = lattice(seed, ix, iy, o, ch), v01 = lattice(seed, ix + 1, iy, o, ch);
        const double v10 = lattice(seed, ix, iy + 1, o, ch), v11 = lattice(seed, ix + 1, iy + 1, o, ch);
        out[static_cast<size_t>(ch)] +=
            amp * ((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
      }
      total += amp;
      amp *= 0.55;
      freq *= 2.0;
    }
    for (auto& c : out) c = 0.5 + contrast * 0.76 * (c / total - 0.5);
    return out;
  }
};

struct Surface {
  int id = 0;  // 0 = background
  int cls = 0;
  double half_w = 1.0, half_h = 1.0;
  std::vector<geom::Pose> pose_per_frame;  // local -> world
  Texture texture;
};

struct SceneSpec {
  geom::CameraIntrinsics intrinsics;
  std::vector<geom::Pose> cam_per_frame;  // camera -> world
  std::vector<Surface> surfaces;          // [0] is the background wall
  int frames = 0;
  int aa_samples = 3;
};

// Frozen per-frame world geometry; everything the geometric oracle needs.
struct SurfaceState {
  int id = 0;
  int cls = 0;
  double half_w = 0, half_h = 0;
  geom::Pose to_world;
  geom::Pose to_local;  // cached inverse
  bool moved = false;   // world pose changed vs an adjacent frame
};

struct WorldState {
  geom::CameraIntrinsics k;
  geom::Pose cam_to_world;
  geom::Pose world_to_cam;
  std::vector<SurfaceState> surfaces;
};

struct Frame {
  io::ImageF image;
  geom::CameraIntrinsics intrinsics;
  geom::DepthMap gt_depth;
  geom::InstanceSet gt_instances;  // ids/classes/boxes/masks; poses live in world
  geom::Pose gt_ego_pose_world;    // camera -> world
  WorldState world;
};

struct SurfaceHit {
  int index = -1;       // into WorldState::surfaces
  double depth = 0;     // camera-frame z along the pixel ray
  double u = 0, v = 0;  // local surface coordinates
};

// Exact ray/plane z-buffer for the pixel ray through (px, py).
inline SurfaceHit intersect(const WorldState& w, double px, double py) {
  const geom::Vec3 q{(px - w.k.cx) / w.k.fx, (py - w.k.cy) / w.k.fy, 1.0};
  const geom::Vec3 origin = w.cam_to_world.translation();
  const geom::Vec3 dir = w.cam_to_world.rotate(q);
  SurfaceHit best;
  for (size_t i = 0; i < w.surfaces.size(); ++i) {
    const auto& s = w.surfaces[i];
    const geom::Vec3 o = s.to_local.apply(origin);
    const geom::Vec3 d = s.to_local.rotate(dir);
    if (std::abs(d.z) < 1e-12) continue;
    const double t = -o.z / d.z;  // camera depth: ray param in units of q
    if (t <= geom::kZMin) continue;
    const double u = o.x + t * d.x, v = o.y + t * d.y;
    if (std::abs(u) > s.half_w || std::abs(v) > s.half_h) continue;
    if (best.index < 0 || t < best.depth) best = {static_cast<int>(i), t, u, v};
  }
  return best;
}

namespace detail {

// Cubic Bezier through 4 control vectors, anchored so p(0) = c0.
inline std::array<double, 3> bezier(const std::array<std::array<double, 3>, 4>& c, double t) {
  const double s = 1 - t;
  const double b0 = s * s * s, b1 = 3 * s * s * t, b2 = 3 * s * t * t, b3 = t * t * t;
  return {b0 * c[0][0] + b1 * c[1][0] + b2 * c[2][0] + b3 * c[3][0],
          b0 * c[0][1] + b1 * c[1][1] + b2 * c[2][1] + b3 * c[3][1],
          b0 * c[0][2] + b1 * c[1][2] + b2 * c[2][2] + b3 * c[3][2]};
}

// Smooth random walk over `frames` steps: per-frame 3-vectors whose largest
// per-frame increment norm is clipped to `max_step`. First frame is zero.
inline std::vector<std::array<double, 3>> smooth_walk(Rng& rng, int frames, double max_step,
                                                      std::array<double, 3> axis_weight) {
  std::array<std::array<double, 3>, 4> ctrl{};
  for (int i = 1; i < 4; ++i)
    for (int a = 0; a < 3; ++a)
      ctrl[static_cast<size_t>(i)][static_cast<size_t>(a)] =
          rng.normal() * axis_weight[static_cast<size_t>(a)];
  std::vector<std::array<double, 3>> out(static_cast<size_t>(frames));
  for (int f = 0; f < frames; ++f)
    out[static_cast<size_t>(f)] = bezier(ctrl, frames > 1 ? static_cast<double>(f) / (frames - 1) : 0.0);
  double worst = 0;
  for (int f = 0; f + 1 < frames; ++f) {
    double d2 = 0;
    for (int a = 0; a < 3; ++a) {
      const double d = out[static_cast<size_t>(f + 1)][static_cast<size_t>(a)] -
                       out[static_cast<size_t>(f)][static_cast<size_t>(a)];
      d2 += d * d;
    }
    worst = std::max(worst, std::sqrt(d2));
  }
  const double scale = (worst > 0 && max_step >= 0) ? std::min(1.0, max_step / worst) : 0.0;
  for (auto& p : out)
    for (auto& x : p) x *= scale;
  return out;
}

inline geom::Pose translation_pose(double x, double y, double z) {
  return geom::Pose::from_axis_angle({0, 0, 0, x, y, z});
}

}  // namespace detail

// Randomized scene layout for a config; pure function of (config, seed).
inline SceneSpec sample_scene(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed * 0x51ed2701e4c2f1a1ull + 0xabcd1234ull);
  SceneSpec spec;
  spec.frames = cfg.frames;
  spec.aa_samples = cfg.aa_samples;
  spec.intrinsics.width = cfg.width;
  spec.intrinsics.height = cfg.height;
  spec.intrinsics.fx = 0.6 * cfg.width;
  spec.intrinsics.fy = spec.intrinsics.fx;
  spec.intrinsics.cx = (cfg.width - 1) / 2.0;
  spec.intrinsics.cy = (cfg.height - 1) / 2.0;

  // ego trajectory, identity at frame 0, lateral translation dominant
  auto ego_t = detail::smooth_walk(rng, cfg.frames, cfg.motion_fill * cfg.ego_motion_scale.translation,
                                   {1.0, 0.45, 0.8});
  auto ego_r = detail::smooth_walk(rng, cfg.frames, cfg.motion_fill * cfg.ego_motion_scale.rotation,
                                   {0.5, 1.0, 0.4});
  for (int f = 0; f < cfg.frames; ++f) {
    const auto& t = ego_t[static_cast<size_t>(f)];
    const auto& r = ego_r[static_cast<size_t>(f)];
    spec.cam_per_frame.push_back(geom::Pose::from_axis_angle({r[0], r[1], r[2], t[0], t[1], t[2]}));
  }

  // background wall, slightly tilted so depth varies across the image
  Surface wall;
  wall.id = 0;
  wall.cls = 0;
  const double z_wall = 0.8 * cfg.depth_far;
  wall.half_w = 50.0 * cfg.depth_far;
  wall.half_h = 50.0 * cfg.depth_far;
  const double tilt_x = -0.22 + rng.uniform(-0.06, 0.06);  // bottom of image nearer
  const double tilt_y = rng.uniform(-0.08, 0.08);
  wall.texture = Texture{rng.next_u64(), cfg.texture_octaves, 0.11 * z_wall, cfg.texture_contrast};
  {
    geom::Pose base = detail::translation_pose(0, 0, z_wall) *
                      geom::Pose::from_axis_angle({tilt_x, tilt_y, 0, 0, 0, 0});
    wall.pose_per_frame.assign(static_cast<size_t>(cfg.frames), base);
  }
  spec.surfaces.push_back(std::move(wall));

  for (int i = 0; i < cfg.n_objects; ++i) {
    Surface obj;
    obj.id = i + 1;
    obj.cls = 1 + static_cast<int>(rng.uniform_int(3));
    const double z = rng.uniform(cfg.depth_near + 0.15 * (cfg.depth_far - cfg.depth_near),
                                 cfg.depth_near + 0.70 * (cfg.depth_far - cfg.depth_near));
    const double px = rng.uniform(0.22, 0.78) * cfg.width;
    const double py = rng.uniform(0.30, 0.70) * cfg.height;
    const geom::Vec3 center = geom::backproject(px, py, z, spec.intrinsics);
    const double screen_half = rng.uniform(0.09, 0.16) * cfg.width;
    obj.half_w = screen_half * z / spec.intrinsics.fx;
    obj.half_h = obj.half_w * rng.uniform(0.55, 0.95);
    obj.texture = Texture{rng.next_u64(), cfg.texture_octaves, 0.45 * obj.half_w, cfg.texture_contrast};
    const geom::Pose base =
        detail::translation_pose(center.x, center.y, center.z) *
        geom::Pose::from_axis_angle({rng.uniform(-0.18, 0.18), rng.uniform(-0.18, 0.18),
                                     rng.uniform(-0.3, 0.3), 0, 0, 0});
    auto obj_t = detail::smooth_walk(rng, cfg.frames,
                                     cfg.motion_fill * cfg.object_motion_scale.translation,
                                     {1.0, 0.6, 0.35});
    auto obj_r = detail::smooth_walk(rng, cfg.frames,
                                     cfg.motion_fill * cfg.object_motion_scale.rotation,
                                     {0.6, 1.0, 0.6});
    for (int f = 0; f < cfg.frames; ++f) {
      const auto& t = obj_t[static_cast<size_t>(f)];
      const auto& r = obj_r[static_cast<size_t>(f)];
      // drift and spin about the object's own centre
      obj.pose_per_frame.push_back(detail::translation_pose(t[0], t[1], t[2]) * base *
                                   geom::Pose::from_axis_angle({r[0], r[1], r[2], 0, 0, 0}));
    }
    spec.surfaces.push_back(std::move(obj));
  }
  return spec;
}

inline WorldState world_state(const SceneSpec& spec, int frame) {
  WorldState w;
  w.k = spec.intrinsics;
  w.cam_to_world = spec.cam_per_frame[static_cast<size_t>(frame)];
  w.world_to_cam = w.cam_to_world.inverse();
  for (const auto& s : spec.surfaces) {
    SurfaceState st;
    st.id = s.id;
    st.cls = s.cls;
    st.half_w = s.half_w;
    st.half_h = s.half_h;
    st.to_world = s.pose_per_frame[static_cast<size_t>(frame)];
    st.to_local = st.to_world.inverse();
    auto differs = [&](int other) {
      if (other < 0 || other >= spec.frames) return false;
      const geom::Pose rel = s.pose_per_frame[static_cast<size_t>(other)].inverse() * st.to_world;
      return rel.rotation_angle() > 1e-6 || geom::norm(rel.translation()) > 1e-6;
    };
    st.moved = differs(frame - 1) || differs(frame + 1);
    w.surfaces.push_back(st);
  }
  return w;
}

inline Frame render_frame(const SceneSpec& spec, int frame) {
  Frame out;
  out.intrinsics = spec.intrinsics;
  out.gt_ego_pose_world = spec.cam_per_frame[static_cast<size_t>(frame)];
  out.world = world_state(spec, frame);
  const int w = spec.intrinsics.width, h = spec.intrinsics.height;
  out.image.h = h;
  out.image.w = w;
  out.image.c = 3;
  out.image.v.resize(static_cast<size_t>(h) * w * 3);
  out.gt_depth.h = h;
  out.gt_depth.w = w;
  out.gt_depth.v.resize(static_cast<size_t>(h) * w);
  std::vector<uint8_t> ids(static_cast<size_t>(h) * w, 0);
  const int aa = std::max(1, spec.aa_samples);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // depth and mask come from the exact center ray (z-buffer contract)
      const SurfaceHit hit = intersect(out.world, x, y);
      require(hit.index >= 0, "render: background does not cover the field of view");
      out.gt_depth.at(y, x) = hit.depth;
      ids[static_cast<size_t>(y * w + x)] =
          static_cast<uint8_t>(spec.surfaces[static_cast<size_t>(hit.index)].id);
      // the image is box-averaged over an aa x aa subpixel grid
      std::array<double, 3> acc{};
      for (int sy = 0; sy < aa; ++sy)
        for (int sx = 0; sx < aa; ++sx) {
          const double px = x + (sx + 0.5) / aa - 0.5;
          const double py = y + (sy + 0.5) / aa - 0.5;
          const SurfaceHit sub = aa == 1 ? hit : intersect(out.world, px, py);
          require(sub.index >= 0, "render: background does not cover the field of view");
          const auto& surf = spec.surfaces[static_cast<size_t>(sub.index)];
          const auto rgb = surf.texture.sample(sub.u + surf.half_w, sub.v + surf.half_h);
          for (int c = 0; c < 3; ++c) acc[static_cast<size_t>(c)] += rgb[static_cast<size_t>(c)];
        }
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = acc[static_cast<size_t>(c)] / (aa * aa);
    }

  out.gt_instances.width = w;
  out.gt_instances.height = h;
  for (size_t si = 1; si < spec.surfaces.size(); ++si) {
    geom::Instance inst;
    inst.id = spec.surfaces[si].id;
    inst.cls = spec.surfaces[si].cls;
    inst.mask.assign(static_cast<size_t>(h) * w, 0);
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (ids[static_cast<size_t>(y * w + x)] == inst.id) {
          inst.mask[static_cast<size_t>(y * w + x)] = 1;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    inst.box = x1 >= 0 ? std::array<double, 4>{static_cast<double>(x0), static_cast<double>(y0),
                                               static_cast<double>(x1 + 1), static_cast<double>(y1 + 1)}
                       : std::array<double, 4>{0, 0, 0, 0};
    out.gt_instances.instances.push_back(std::move(inst));
  }
  return out;
}

inline std::vector<Frame> generate_sequence(const SceneConfig& cfg) {
  SceneSpec spec = sample_scene(cfg);
  std::vector<Frame> frames;
  frames.reserve(static_cast<size_t>(cfg.frames));
  for (int f = 0; f < cfg.frames; ++f) frames.push_back(render_frame(spec, f));
  return frames;
}

// ---------------------------------------------------------------------------
// geometric warp oracle (independent of the Eq.-style pixel-space composite)

struct GtWarp {
  int h = 0, w = 0;
  std::vector<double> coords;    // H*W*2 source-frame (x, y)
  std::vector<uint8_t> visible;  // in front, in bounds, and unoccluded in source
};

inline GtWarp gt_warp_field(const WorldState& target, const WorldState& source) {
  const int w = target.k.width, h = target.k.height;
  GtWarp out;
  out.h = h;
  out.w = w;
  out.coords.resize(static_cast<size_t>(h) * w * 2);
  out.visible.assign(static_cast<size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y * w + x);
      const SurfaceHit hit = intersect(target, x, y);
      require(hit.index >= 0, "gt_warp_field: ray misses every surface");
      // material point in local coords, carried to the source frame
      const auto& st = target.surfaces[static_cast<size_t>(hit.index)];
      const auto& ss = source.surfaces[static_cast<size_t>(hit.index)];
      const geom::Vec3 world_s = ss.to_world.apply({hit.u, hit.v, 0.0});
      const geom::Vec3 cam_s = source.world_to_cam.apply(world_s);
      const auto proj = geom::project(cam_s, source.k);
      out.coords[2 * i] = proj.x;
      out.coords[2 * i + 1] = proj.y;
      if (!proj.in_front) continue;
      if (proj.x < 0 || proj.x > w - 1 || proj.y < 0 || proj.y > h - 1) continue;
      // occlusion: the front surface along the source ray must be this one
      const SurfaceHit shit = intersect(source, proj.x, proj.y);
      if (shit.index == hit.index && std::abs(shit.depth - cam_s.z) < 1e-6 * std::max(1.0, cam_s.z))
        out.visible[i] = 1;
      (void)st;
    }
  return out;
}

// Relative pose bundle for feeding the target->source warp.
struct RelativePoses {
  geom::Pose ego;                      // T_{s<-t}
  std::vector<geom::Pose> per_object;  // indexed by instance id - 1
};

inline RelativePoses relative_poses(const WorldState& target, const WorldState& source,
                                    geom::ObjectPoseFrame frame) {
  RelativePoses out;
  out.ego = geom::relative_ego_pose(target.cam_to_world, source.cam_to_world);
  for (size_t i = 1; i < target.surfaces.size(); ++i)
    out.per_object.push_back(geom::relative_object_pose(target.cam_to_world, source.cam_to_world,
                                                        target.surfaces[i].to_world,
                                                        source.surfaces[i].to_world, frame));
  return out;
}

// ---------------------------------------------------------------------------
// on-disk dataset

namespace detail {

inline nlohmann::json pose_json(const geom::Pose& p) {
  nlohmann::json j;
  j["matrix"] = std::vector<double>(p.m.begin(), p.m.end());
  const auto aa = p.to_axis_angle();
  j["axis_angle"] = std::vector<double>(aa.begin(), aa.end());
  return j;
}

inline geom::Pose pose_from_json(const nlohmann::json& j) {
  geom::Pose p;
  const auto m = j.at("matrix").get<std::vector<double>>();
  require(m.size() == 16, "pose json: matrix must have 16 entries");
  std::copy(m.begin(), m.end(), p.m.begin());
  return p;
}

inline nlohmann::json intrinsics_json(const geom::CameraIntrinsics& k) {
  return nlohmann::json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
                        {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline geom::CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  geom::CameraIntrinsics k;
  k.fx = j.at("fx");
  k.fy = j.at("fy");
  k.cx = j.at("cx");
  k.cy = j.at("cy");
  k.width = j.at("width");
  k.height = j.at("height");
  k.validate();
  return k;
}

inline std::string frame_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03d", index);
  return buf;
}

}  // namespace detail

// Writes sequences under <root>/<seq_id>/ and a manifest.json at the root.
inline nlohmann::json write_dataset(const std::vector<std::vector<Frame>>& sequences,
                                    const std::vector<uint64_t>& seeds, const std::string& root) {
  namespace fs = std::filesystem;
  require(sequences.size() == seeds.size(), "write_dataset: one seed per sequence");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("write_dataset: cannot create " + root + ": " + ec.message());

  nlohmann::json manifest;
  auto seq_list = nlohmann::json::array();
  int64_t dynamic_px = 0, total_px = 0;
  for (size_t s = 0; s < sequences.size(); ++s) {
    char seq_id[32];
    std::snprintf(seq_id, sizeof seq_id, "seq_%04zu", s);
    const fs::path dir = fs::path(root) / seq_id;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("write_dataset: cannot create " + dir.string());
    const auto& frames = sequences[s];
    for (size_t f = 0; f < frames.size(); ++f) {
      const Frame& fr = frames[f];
      const std::string stem = (dir / detail::frame_stem(static_cast<int>(f))).string();
      io::write_png(stem + ".png", io::quantize_u8(fr.image));
      io::write_pfm(stem + "_depth.pfm", fr.gt_depth);
      io::ImageU8 mask;
      mask.h = fr.intrinsics.height;
      mask.w = fr.intrinsics.width;
      mask.c = 1;
      mask.v = geom::mask_ids_from_instances(fr.gt_instances);
      io::write_png(stem + "_mask.png", mask);

      nlohmann::json meta;
      meta["intrinsics"] = detail::intrinsics_json(fr.intrinsics);
      meta["ego_pose_world"] = detail::pose_json(fr.gt_ego_pose_world);
      const auto& bg = fr.world.surfaces[0];
      meta["background"] = {{"pose_world", detail::pose_json(bg.to_world)},
                            {"half_w", bg.half_w},
                            {"half_h", bg.half_h}};
      auto insts = nlohmann::json::array();
      for (size_t i = 1; i < fr.world.surfaces.size(); ++i) {
        const auto& surf = fr.world.surfaces[i];
        const auto& inst = fr.gt_instances.instances[i - 1];
        insts.push_back({{"id", surf.id},
                         {"class", surf.cls},
                         {"box", inst.box},
                         {"pose_world", detail::pose_json(surf.to_world)},
                         {"half_w", surf.half_w},
                         {"half_h", surf.half_h},
                         {"dynamic", surf.moved}});
        int64_t area = 0;
        for (uint8_t m : inst.mask) area += m;
        if (surf.moved) dynamic_px += area;
      }
      total_px += static_cast<int64_t>(fr.intrinsics.width) * fr.intrinsics.height;
      meta["instances"] = std::move(insts);
      std::ofstream mf(stem + "_meta.json");
      mf << meta.dump(2) << "\n";
      require(mf.good(), "write_dataset: failed writing " + stem + "_meta.json");
    }
    seq_list.push_back({{"id", seq_id},
                        {"frames", static_cast<int>(frames.size())},
                        {"seed", seeds[s]}});
  }
  manifest["sequences"] = std::move(seq_list);
  if (!sequences.empty() && !sequences[0].empty()) {
    manifest["width"] = sequences[0][0].intrinsics.width;
    manifest["height"] = sequences[0][0].intrinsics.height;
  }
  manifest["dynamic_pixel_fraction"] =
      total_px > 0 ? static_cast<double>(dynamic_px) / static_cast<double>(total_px) : 0.0;
  std::ofstream mf(fs::path(root) / "manifest.json");
  mf << manifest.dump(2) << "\n";
  require(mf.good(), "write_dataset: failed writing manifest.json under " + root);
  return manifest;
}

}  // namespace monorig::scene
