#include <gtest/gtest.h>

#include <filesystem>

#include "monorig/dataset.hpp"
#include "monorig/losses.hpp"
#include "monorig/synthscene.hpp"

using monorig::Rng;
namespace diff = monorig::diff;
namespace geom = monorig::geom;
namespace scene = monorig::scene;
namespace io = monorig::io;
using Td = diff::Tensor<double>;

namespace {

scene::SceneConfig gentle_config(uint64_t seed, int movers) {
  scene::SceneConfig cfg;
  cfg.width = 96;
  cfg.height = 64;
  cfg.frames = 3;
  cfg.n_objects = movers;
  cfg.depth_near = 3.0;
  cfg.depth_far = 14.0;
  cfg.ego_motion_scale = {0.03, 0.002};
  cfg.object_motion_scale = {0.02, 0.002};
  cfg.seed = seed;
  return cfg;
}

// Eq.-style warp fed with ground truth, compared against the geometric oracle.
struct Agreement {
  double worst = 0;
  int64_t compared = 0;
  int64_t within = 0;
};

Agreement cross_validate(const scene::Frame& target, const scene::Frame& source, double tol) {
  auto gt = scene::gt_warp_field(target.world, source.world);
  auto rel = scene::relative_poses(target.world, source.world, geom::ObjectPoseFrame::SourceCamera);

  Td depth = Td::from({target.gt_depth.h, target.gt_depth.w}, std::vector<double>(target.gt_depth.v));
  std::vector<uint8_t> ids = geom::mask_ids_from_instances(target.gt_instances);
  Td ego = Td::from({4, 4}, std::vector<double>(rel.ego.m.begin(), rel.ego.m.end()));
  std::vector<Td> inst;
  for (const auto& p : rel.per_object)
    inst.push_back(Td::from({4, 4}, std::vector<double>(p.m.begin(), p.m.end())));
  auto field = geom::piecewise_rigid_warp(depth, target.intrinsics, ego, inst, ids);

  Agreement a;
  for (size_t i = 0; i < gt.visible.size(); ++i) {
    if (!gt.visible[i]) continue;
    ++a.compared;
    const double dx = field.coords.data()[2 * i] - gt.coords[2 * i];
    const double dy = field.coords.data()[2 * i + 1] - gt.coords[2 * i + 1];
    const double err = std::sqrt(dx * dx + dy * dy);
    a.worst = std::max(a.worst, err);
    if (err < tol) ++a.within;
  }
  return a;
}

}  // namespace

TEST(Renderer, StaticSceneWithFrozenCameraRepeatsExactly) {
  auto cfg = gentle_config(3, 0);
  cfg.ego_motion_scale = {0.0, 0.0};
  auto frames = scene::generate_sequence(cfg);
  ASSERT_EQ(frames.size(), 3u);
  for (size_t f = 1; f < frames.size(); ++f) {
    EXPECT_EQ(frames[f].image.v, frames[0].image.v);
    EXPECT_EQ(frames[f].gt_depth.v, frames[0].gt_depth.v);
  }
}

TEST(Renderer, SeededGenerationIsBitIdentical) {
  auto cfg = gentle_config(7, 2);
  auto a = scene::generate_sequence(cfg);
  auto b = scene::generate_sequence(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (size_t f = 0; f < a.size(); ++f) {
    EXPECT_EQ(a[f].image.v, b[f].image.v);
    EXPECT_EQ(a[f].gt_depth.v, b[f].gt_depth.v);
    EXPECT_EQ(geom::mask_ids_from_instances(a[f].gt_instances),
              geom::mask_ids_from_instances(b[f].gt_instances));
  }
  auto cfg2 = cfg;
  cfg2.seed = 8;
  auto c = scene::generate_sequence(cfg2);
  EXPECT_NE(a[0].image.v, c[0].image.v);
}

TEST(Renderer, PureLateralEgoGivesPlanarDisparity) {
  // hand-built spec: static wall, camera translating along +x
  auto cfg = gentle_config(11, 0);
  scene::SceneSpec spec = scene::sample_scene(cfg);
  const double tx = 0.12;
  spec.cam_per_frame[1] = geom::Pose::from_axis_angle({0, 0, 0, tx, 0, 0});
  auto target = scene::render_frame(spec, 0);
  auto source = scene::render_frame(spec, 1);
  auto gt = scene::gt_warp_field(target.world, source.world);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const size_t i = static_cast<size_t>(y * cfg.width + x);
      if (!gt.visible[i]) continue;
      const double z = target.gt_depth.at(y, x);
      // source cam sits at +tx: the point moves by -fx*tx/z in source pixels
      EXPECT_NEAR(gt.coords[2 * i] - x, -target.intrinsics.fx * tx / z, 1e-9);
      EXPECT_NEAR(gt.coords[2 * i + 1] - y, 0.0, 1e-9);
    }
}

TEST(Renderer, DynamicPixelDepthIsExactBillboardDepth) {
  auto cfg = gentle_config(13, 2);
  auto frames = scene::generate_sequence(cfg);
  const auto& fr = frames[1];
  auto ids = geom::mask_ids_from_instances(fr.gt_instances);
  int64_t checked = 0;
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const uint8_t id = ids[static_cast<size_t>(y * cfg.width + x)];
      if (id == 0) continue;
      const auto hit = scene::intersect(fr.world, x, y);
      ASSERT_GE(hit.index, 0);
      EXPECT_EQ(fr.world.surfaces[static_cast<size_t>(hit.index)].id, id);
      EXPECT_DOUBLE_EQ(fr.gt_depth.at(y, x), hit.depth);
      ++checked;
    }
  EXPECT_GT(checked, 100);
}

TEST(GtWarp, TargetEqualsSourceGivesIdentityGrid) {
  auto cfg = gentle_config(17, 1);
  auto frames = scene::generate_sequence(cfg);
  auto gt = scene::gt_warp_field(frames[1].world, frames[1].world);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const size_t i = static_cast<size_t>(y * cfg.width + x);
      EXPECT_NEAR(gt.coords[2 * i], x, 1e-9);
      EXPECT_NEAR(gt.coords[2 * i + 1], y, 1e-9);
    }
}

TEST(GtWarp, StaticSceneCrossValidatesEqOneWarp) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = gentle_config(100 + seed, 0);
    auto frames = scene::generate_sequence(cfg);
    auto a = cross_validate(frames[1], frames[0], 1e-5);
    EXPECT_GT(a.compared, 1000);
    EXPECT_EQ(a.within, a.compared) << "seed " << seed << " worst " << a.worst;
  }
}

TEST(GtWarp, MoverSceneCrossValidatesInsideAndOutsideMask) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = gentle_config(200 + seed, 2);
    auto frames = scene::generate_sequence(cfg);
    for (int src : {0, 2}) {
      auto gt = scene::gt_warp_field(frames[1].world, frames[static_cast<size_t>(src)].world);
      auto a = cross_validate(frames[1], frames[static_cast<size_t>(src)], 1e-5);
      EXPECT_GT(a.compared, 1000);
      EXPECT_EQ(a.within, a.compared) << "seed " << seed << " src " << src << " worst " << a.worst;
      // the comparison must include mask pixels
      auto ids = geom::mask_ids_from_instances(frames[1].gt_instances);
      int64_t masked_visible = 0;
      for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] > 0 && gt.visible[i]) ++masked_visible;
      EXPECT_GT(masked_visible, 50) << "seed " << seed;
    }
  }
}

TEST(GtWarp, GroundTruthInputsReconstructAlmostPerfectly) {
  // renderer round trip: total_loss with GT depth and GT poses stays tiny
  for (uint64_t seed = 0; seed < 3; ++seed) {
    auto cfg = gentle_config(300 + seed, 2);
    auto frames = scene::generate_sequence(cfg);
    const auto& t = frames[1];
    monorig::loss::LossConfig lc;
    lc.scales = 1;
    std::vector<monorig::loss::SourceInputs<double>> sources;
    for (int si : {0, 2}) {
      auto rel = scene::relative_poses(t.world, frames[static_cast<size_t>(si)].world,
                                       geom::ObjectPoseFrame::SourceCamera);
      monorig::loss::SourceInputs<double> s;
      s.image = io::image_to_tensor<double>(frames[static_cast<size_t>(si)].image);
      s.ego_mat = Td::from({4, 4}, std::vector<double>(rel.ego.m.begin(), rel.ego.m.end()));
      for (const auto& p : rel.per_object)
        s.instance_mats.push_back(Td::from({4, 4}, std::vector<double>(p.m.begin(), p.m.end())));
      sources.push_back(std::move(s));
    }
    Td depth = Td::from({t.gt_depth.h, t.gt_depth.w}, std::vector<double>(t.gt_depth.v));
    auto breakdown = monorig::loss::total_loss(io::image_to_tensor<double>(t.image), sources, {depth},
                                               geom::mask_ids_from_instances(t.gt_instances),
                                               t.intrinsics, lc);
    EXPECT_LT(breakdown.photometric, 1e-3) << "seed " << seed;
  }
}

TEST(Dataset, WriteReadRoundTrip) {
  namespace fs = std::filesystem;
  const std::string root = testing::TempDir() + "monorig_ds_test";
  fs::remove_all(root);
  auto cfg = gentle_config(23, 2);
  std::vector<std::vector<scene::Frame>> seqs;
  seqs.push_back(scene::generate_sequence(cfg));
  auto manifest = scene::write_dataset(seqs, {cfg.seed}, root);
  EXPECT_EQ(manifest["sequences"][0]["frames"].get<int>(), cfg.frames);

  auto ds = monorig::data::Dataset::open(root);
  ASSERT_EQ(ds.sequences().size(), 1u);
  EXPECT_EQ(ds.sequences()[0].frames, cfg.frames);
  for (int f = 0; f < cfg.frames; ++f) {
    auto loaded = ds.load_frame(0, f);
    const auto& orig = seqs[0][static_cast<size_t>(f)];
    // images: byte-exact vs the quantized original
    auto q = io::quantize_u8(orig.image);
    EXPECT_EQ(loaded.image.v, q.v);
    // depth: exact at float32 precision
    for (size_t i = 0; i < loaded.depth.v.size(); ++i)
      EXPECT_EQ(static_cast<float>(orig.gt_depth.v[i]), static_cast<float>(loaded.depth.v[i]));
    // mask ids match the meta instance ids one-to-one
    auto orig_ids = geom::mask_ids_from_instances(orig.gt_instances);
    EXPECT_EQ(loaded.mask_ids, orig_ids);
    std::vector<uint8_t> seen(loaded.world.surfaces.size(), 0);
    for (uint8_t id : loaded.mask_ids) {
      ASSERT_LT(id, loaded.world.surfaces.size());
      seen[id] = 1;
      if (id > 0) EXPECT_EQ(loaded.world.surfaces[id].id, id);
    }
    // poses round-trip exactly enough for the warp oracle
    for (size_t s = 0; s < loaded.world.surfaces.size(); ++s)
      for (int i = 0; i < 16; ++i)
        EXPECT_NEAR(loaded.world.surfaces[s].to_world.m[static_cast<size_t>(i)],
                    orig.world.surfaces[s].to_world.m[static_cast<size_t>(i)], 1e-12);
  }
  // triplets exclude endpoints
  auto trips = ds.triplets();
  EXPECT_EQ(trips.size(), static_cast<size_t>(cfg.frames - 2));
  fs::remove_all(root);
}

TEST(Dataset, DynamicFractionControllable) {
  auto cfg_static = gentle_config(29, 2);
  cfg_static.object_motion_scale = {0.0, 0.0};
  auto cfg_moving = gentle_config(29, 2);

  namespace fs = std::filesystem;
  const std::string root_a = testing::TempDir() + "monorig_ds_static";
  const std::string root_b = testing::TempDir() + "monorig_ds_moving";
  fs::remove_all(root_a);
  fs::remove_all(root_b);
  auto ma = scene::write_dataset({scene::generate_sequence(cfg_static)}, {cfg_static.seed}, root_a);
  auto mb = scene::write_dataset({scene::generate_sequence(cfg_moving)}, {cfg_moving.seed}, root_b);
  EXPECT_DOUBLE_EQ(ma["dynamic_pixel_fraction"].get<double>(), 0.0);
  EXPECT_GT(mb["dynamic_pixel_fraction"].get<double>(), 0.01);
  fs::remove_all(root_a);
  fs::remove_all(root_b);
}

TEST(ImageIo, PfmAndPngRoundTrips) {
  namespace fs = std::filesystem;
  Rng rng(31);
  geom::DepthMap d;
  d.h = 5;
  d.w = 7;
  for (int i = 0; i < 35; ++i) d.v.push_back(rng.uniform(0.5, 90.0));
  const std::string pfm = testing::TempDir() + "t.pfm";
  io::write_pfm(pfm, d);
  auto d2 = io::read_pfm(pfm);
  ASSERT_EQ(d2.h, d.h);
  ASSERT_EQ(d2.w, d.w);
  for (int i = 0; i < 35; ++i)
    EXPECT_EQ(static_cast<float>(d.v[static_cast<size_t>(i)]), static_cast<float>(d2.v[static_cast<size_t>(i)]));

  io::ImageU8 img;
  img.h = 6;
  img.w = 4;
  img.c = 3;
  for (int i = 0; i < 72; ++i) img.v.push_back(static_cast<uint8_t>(rng.uniform_int(256)));
  const std::string png = testing::TempDir() + "t.png";
  io::write_png(png, img);
  auto img2 = io::read_png(png);
  EXPECT_EQ(img2.v, img.v);

  io::ImageU16 g16;
  g16.h = 3;
  g16.w = 5;
  for (int i = 0; i < 15; ++i) g16.v.push_back(static_cast<uint16_t>(rng.uniform_int(65536)));
  const std::string png16 = testing::TempDir() + "t16.png";
  io::write_png16(png16, g16);
  auto g16b = io::read_png16(png16);
  EXPECT_EQ(g16b.v, g16.v);
  fs::remove(pfm);
  fs::remove(png);
  fs::remove(png16);
}
