#pragma once

// Reader for the on-disk dataset layout produced by write_dataset.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "monorig/image_io.hpp"
#include "monorig/synthscene.hpp"

namespace monorig::data {

struct LoadedFrame {
  io::ImageU8 image;
  geom::DepthMap depth;
  std::vector<uint8_t> mask_ids;
  scene::WorldState world;  // background + instances with per-frame world poses
  std::vector<std::array<double, 4>> boxes;  // per instance, id order
  std::vector<int> classes;
  std::vector<uint8_t> dynamic;  // per instance, renderer motion classification
};

struct SequenceInfo {
  std::string id;
  std::string dir;
  int frames = 0;
  uint64_t seed = 0;
};

class Dataset {
 public:
  static Dataset open(const std::string& root) {
    namespace fs = std::filesystem;
    Dataset d;
    d.root_ = root;
    const fs::path manifest_path = fs::path(root) / "manifest.json";
    std::ifstream mf(manifest_path);
    require(mf.good(), "dataset: missing manifest.json under " + root);
    mf >> d.manifest_;
    for (const auto& s : d.manifest_.at("sequences")) {
      SequenceInfo info;
      info.id = s.at("id").get<std::string>();
      info.dir = (fs::path(root) / info.id).string();
      info.frames = s.at("frames").get<int>();
      info.seed = s.at("seed").get<uint64_t>();
      d.sequences_.push_back(std::move(info));
    }
    require(!d.sequences_.empty(), "dataset: manifest lists no sequences");
    d.width_ = d.manifest_.value("width", 0);
    d.height_ = d.manifest_.value("height", 0);
    return d;
  }

  const nlohmann::json& manifest() const { return manifest_; }
  const std::vector<SequenceInfo>& sequences() const { return sequences_; }
  int width() const { return width_; }
  int height() const { return height_; }

  LoadedFrame load_frame(size_t seq, int frame) const {
    namespace fs = std::filesystem;
    require(seq < sequences_.size(), "dataset: sequence index out of range");
    require(frame >= 0 && frame < sequences_[seq].frames, "dataset: frame index out of range");
    const std::string stem =
        (fs::path(sequences_[seq].dir) / scene::detail::frame_stem(frame)).string();
    LoadedFrame out;
    out.image = io::read_png(stem + ".png");
    out.depth = io::read_pfm(stem + "_depth.pfm");
    io::ImageU8 mask = io::read_png(stem + "_mask.png");
    require(mask.c == 1, "dataset: mask must be single channel: " + stem);
    out.mask_ids = std::move(mask.v);

    std::ifstream meta_f(stem + "_meta.json");
    require(meta_f.good(), "dataset: missing meta: " + stem + "_meta.json");
    nlohmann::json meta;
    meta_f >> meta;
    out.world.k = scene::detail::intrinsics_from_json(meta.at("intrinsics"));
    out.world.cam_to_world = scene::detail::pose_from_json(meta.at("ego_pose_world"));
    out.world.world_to_cam = out.world.cam_to_world.inverse();

    scene::SurfaceState bg;
    bg.id = 0;
    bg.half_w = meta.at("background").at("half_w");
    bg.half_h = meta.at("background").at("half_h");
    bg.to_world = scene::detail::pose_from_json(meta.at("background").at("pose_world"));
    bg.to_local = bg.to_world.inverse();
    out.world.surfaces.push_back(bg);

    for (const auto& inst : meta.at("instances")) {
      scene::SurfaceState st;
      st.id = inst.at("id");
      st.cls = inst.at("class");
      st.half_w = inst.at("half_w");
      st.half_h = inst.at("half_h");
      st.to_world = scene::detail::pose_from_json(inst.at("pose_world"));
      st.to_local = st.to_world.inverse();
      st.moved = inst.value("dynamic", false);
      require(st.id == static_cast<int>(out.world.surfaces.size()),
              "dataset: instance ids must be 1..m in order: " + stem);
      out.world.surfaces.push_back(st);
      out.boxes.push_back(inst.at("box").get<std::array<double, 4>>());
      out.classes.push_back(inst.at("class"));
      out.dynamic.push_back(st.moved ? 1 : 0);
    }
    return out;
  }

  // Training triplets (t-1, t, t+1); sequence endpoints excluded.
  struct Triplet {
    size_t seq;
    int target;
  };
  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    for (size_t s = 0; s < sequences_.size(); ++s)
      for (int t = 1; t + 1 < sequences_[s].frames; ++t) out.push_back({s, t});
    return out;
  }

 private:
  std::string root_;
  nlohmann::json manifest_;
  std::vector<SequenceInfo> sequences_;
  int width_ = 0, height_ = 0;
};

// Dynamic-pixel mask for evaluation: pixels of instances the renderer
// classified as moving. Falls back to an externally supplied mask image.
inline std::vector<uint8_t> dynamic_mask(const LoadedFrame& f) {
  std::vector<uint8_t> out(f.mask_ids.size(), 0);
  for (size_t i = 0; i < f.mask_ids.size(); ++i) {
    const uint8_t id = f.mask_ids[i];
    if (id > 0 && f.dynamic[static_cast<size_t>(id - 1)]) out[i] = 1;
  }
  return out;
}

}  // namespace monorig::data
