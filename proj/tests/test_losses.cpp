#include <gtest/gtest.h>

#include "monorig/gradcheck.hpp"
#include "monorig/losses.hpp"
#include "monorig/rng.hpp"

using monorig::ContractViolation;
using monorig::Rng;
namespace diff = monorig::diff;
namespace geom = monorig::geom;
namespace loss = monorig::loss;
using Td = diff::Tensor<double>;

namespace {

Td random_image(int h, int w, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(h) * w * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td::from({h, w, c}, std::move(v));
}

int reflect(int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); }

// Independent windowed SSIM oracle: naive loops, 3x3 uniform, reflect pad.
std::vector<double> ssim_oracle(const Td& a, const Td& b) {
  const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
  std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int ch = 0; ch < c; ++ch) {
        double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = reflect(y + dy, h), xx = reflect(x + dx, w);
            const double va = a.data()[(yy * w + xx) * c + ch];
            const double vb = b.data()[(yy * w + xx) * c + ch];
            ma += va;
            mb += vb;
            maa += va * va;
            mbb += vb * vb;
            mab += va * vb;
          }
        ma /= 9;
        mb /= 9;
        const double var_a = maa / 9 - ma * ma;
        const double var_b = mbb / 9 - mb * mb;
        const double cov = mab / 9 - ma * mb;
        const double num = (2 * ma * mb + loss::kSsimC1) * (2 * cov + loss::kSsimC2);
        const double den = (ma * ma + mb * mb + loss::kSsimC1) * (var_a + var_b + loss::kSsimC2);
        acc += num / den;
      }
      out[static_cast<size_t>(y * w + x)] = acc / c;
    }
  return out;
}

}  // namespace

TEST(Ssim, IdenticalImagesScoreOne) {
  Rng rng(5);
  Td img = random_image(6, 7, 3, rng);
  Td map = loss::ssim_map(img, img);
  for (int64_t i = 0; i < map.numel(); ++i) EXPECT_NEAR(map.data()[i], 1.0, 1e-6);
}

TEST(Ssim, ConstantZeroVersusConstantOne) {
  Td a = Td::full({4, 5, 1}, 0.0);
  Td b = Td::full({4, 5, 1}, 1.0);
  Td map = loss::ssim_map(a, b);
  // direct substitution: means (0,1), variances 0
  const double expect = (2 * 0.0 * 1.0 + loss::kSsimC1) * (0.0 + loss::kSsimC2) /
                        ((0.0 + 1.0 + loss::kSsimC1) * (0.0 + loss::kSsimC2));
  for (int64_t i = 0; i < map.numel(); ++i) EXPECT_NEAR(map.data()[i], expect, 1e-12);
}

TEST(Ssim, MatchesLoopOracle) {
  Rng rng(13);
  Td a = random_image(8, 9, 3, rng);
  Td b = random_image(8, 9, 3, rng);
  Td map = loss::ssim_map(a, b);
  auto expect = ssim_oracle(a, b);
  for (int64_t i = 0; i < map.numel(); ++i) {
    EXPECT_NEAR(map.data()[i], expect[static_cast<size_t>(i)], 1e-6);
    EXPECT_GE(map.data()[i], -1.0 - 1e-9);
    EXPECT_LE(map.data()[i], 1.0 + 1e-9);
  }
}

TEST(Ssim, ShapeMismatchRejected) {
  Rng rng(1);
  EXPECT_THROW(loss::ssim_map(random_image(4, 4, 3, rng), random_image(4, 5, 3, rng)),
               ContractViolation);
}

TEST(Photometric, PerfectReconstructionIsZero) {
  Rng rng(19);
  Td img = random_image(6, 8, 3, rng);
  std::vector<uint8_t> valid(48, 1);
  Td pe = loss::photometric_loss(img, img, valid, 0.15);
  EXPECT_NEAR(pe.value(), 0.0, 1e-6);
}

TEST(Photometric, AlphaOneReducesToL1Mean) {
  Rng rng(23);
  Td a = random_image(5, 6, 3, rng);
  Td b = random_image(5, 6, 3, rng);
  std::vector<uint8_t> valid(30, 1);
  Td pe = loss::photometric_loss(a, b, valid, 1.0);
  double expect = 0;
  for (int p = 0; p < 30; ++p) {
    double l1 = 0;
    for (int c = 0; c < 3; ++c) l1 += std::abs(a.data()[p * 3 + c] - b.data()[p * 3 + c]);
    expect += l1 / 3;
  }
  expect /= 30;
  EXPECT_NEAR(pe.value(), expect, 1e-12);
}

TEST(Photometric, ComposesFromSubOracles) {
  Rng rng(29);
  Td a = random_image(6, 7, 3, rng);
  Td b = random_image(6, 7, 3, rng);
  std::vector<uint8_t> valid(42, 1);
  const double alpha = 0.15;
  Td pe = loss::photometric_loss(a, b, valid, alpha);
  auto smap = ssim_oracle(a, b);
  double expect = 0;
  for (int p = 0; p < 42; ++p) {
    double l1 = 0;
    for (int c = 0; c < 3; ++c) l1 += std::abs(a.data()[p * 3 + c] - b.data()[p * 3 + c]);
    l1 /= 3;
    expect += (1 - alpha) * (1 - smap[static_cast<size_t>(p)]) / 2 + alpha * l1;
  }
  expect /= 42;
  EXPECT_NEAR(pe.value(), expect, 1e-6);
}

TEST(Photometric, InvalidPixelsContributeNothing) {
  Rng rng(31);
  Td a = random_image(6, 7, 3, rng);
  std::vector<double> bv(a.vec());
  Td b1 = Td::param({6, 7, 3}, bv);
  std::vector<uint8_t> valid(42, 1);
  valid[10] = 0;
  valid[11] = 0;
  Td pe1 = loss::photometric_loss(a, b1, valid, 0.15);
  // mangle the reconstruction at invalid pixels: loss must not move
  for (int c = 0; c < 3; ++c) {
    bv[static_cast<size_t>(10 * 3 + c)] = 123.0;
    bv[static_cast<size_t>(11 * 3 + c)] = -55.0;
  }
  Td b2 = Td::param({6, 7, 3}, bv);
  Td pe2 = loss::photometric_loss(a, b2, valid, 0.15);
  EXPECT_DOUBLE_EQ(pe1.value(), pe2.value());
  // and their gradient is exactly zero
  diff::backward(pe2);
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(b2.grad()[static_cast<size_t>(10 * 3 + c)], 0.0);
    EXPECT_DOUBLE_EQ(b2.grad()[static_cast<size_t>(11 * 3 + c)], 0.0);
  }
}

TEST(Photometric, EmptyValidMaskRejected) {
  Rng rng(2);
  Td a = random_image(3, 3, 3, rng);
  EXPECT_THROW(loss::photometric_loss(a, a, std::vector<uint8_t>(9, 0), 0.15), ContractViolation);
}

TEST(Smoothness, ConstantDisparityIsZero) {
  Rng rng(37);
  Td disp = Td::full({5, 6}, 0.8);
  Td img = random_image(5, 6, 3, rng);
  EXPECT_DOUBLE_EQ(loss::smoothness_loss(disp, img).value(), 0.0);
}

TEST(Smoothness, LinearRampClosedForm) {
  const int h = 4, w = 5;
  std::vector<double> dv(static_cast<size_t>(h) * w);
  const double c0 = 2.0, slope = 0.5;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) dv[static_cast<size_t>(y * w + x)] = c0 + slope * x;
  Td disp = Td::from({h, w}, std::move(dv));
  Td img = Td::full({h, w, 3}, 0.5);
  const double mean_d = c0 + slope * (w - 1) / 2.0;
  const double expect = slope / mean_d;  // weight exp(0)=1, y-term zero
  EXPECT_NEAR(loss::smoothness_loss(disp, img).value(), expect, 1e-12);
}

TEST(Smoothness, ImageEdgeDampsDisparityEdge) {
  const int h = 4, w = 6;
  std::vector<double> dv(static_cast<size_t>(h) * w, 1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 3; x < w; ++x) dv[static_cast<size_t>(y * w + x)] = 2.0;
  Td disp = Td::from({h, w}, dv);
  Td flat = Td::full({h, w, 3}, 0.5);
  std::vector<double> ev(static_cast<size_t>(h) * w * 3, 0.1);
  for (int y = 0; y < h; ++y)
    for (int x = 3; x < w; ++x)
      for (int c = 0; c < 3; ++c) ev[static_cast<size_t>((y * w + x) * 3 + c)] = 0.9;
  Td edged = Td::from({h, w, 3}, std::move(ev));
  EXPECT_LT(loss::smoothness_loss(disp, edged).value(), loss::smoothness_loss(disp, flat).value());
}

TEST(Smoothness, NonPositiveDisparityRejected) {
  Td disp = Td::full({3, 3}, 0.0);
  Td img = Td::full({3, 3, 3}, 0.5);
  EXPECT_THROW(loss::smoothness_loss(disp, img), ContractViolation);
}

// --- gradient checks through the loss stack ---------------------------------

TEST(LossGrad, PhotometricOfWarpPipeline) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    const int w = 10, h = 8;
    geom::CameraIntrinsics k;
    k.fx = 11.0;
    k.fy = 10.0;
    k.cx = 4.5;
    k.cy = 3.5;
    k.width = w;
    k.height = h;
    std::vector<double> depth_v(static_cast<size_t>(w) * h);
    for (auto& d : depth_v) d = rng.uniform(4.0, 6.0);
    Td depth = Td::param({h, w}, depth_v);
    std::vector<uint8_t> ids(static_cast<size_t>(w) * h, 0);
    for (int y = 3; y < 6; ++y)
      for (int x = 4; x < 8; ++x) ids[static_cast<size_t>(y * w + x)] = 1;
    // strictly positive shifts keep validity stable under probe steps
    Td ego6 = Td::param({6}, {rng.uniform(-0.003, 0.003), rng.uniform(-0.003, 0.003),
                              rng.uniform(-0.003, 0.003), 0.2, 0.15, rng.uniform(-0.01, 0.01)});
    Td obj6 = Td::param({6}, {rng.uniform(-0.005, 0.005), rng.uniform(-0.005, 0.005),
                              rng.uniform(-0.005, 0.005), rng.uniform(-0.05, 0.05),
                              rng.uniform(-0.05, 0.05), rng.uniform(-0.02, 0.02)});
    Td target = random_image(h, w, 3, rng);
    Td source = Td::param({h, w, 3}, std::vector<double>(target.vec()));
    for (int64_t i = 0; i < source.numel(); ++i) source.data()[i] += rng.uniform(-0.05, 0.05);

    auto f = [&] {
      auto field = geom::piecewise_rigid_warp(depth, k, geom::pose_from_axis_angle(ego6),
                                              {geom::pose_from_axis_angle(obj6)}, ids);
      auto warped = geom::inverse_warp(source, field);
      return loss::photometric_loss(target, warped.image, warped.valid, 0.15);
    };
    auto rep = diff::grad_check<double>(f, {depth, ego6, obj6, source}, 1e-6, 40, seed);
    EXPECT_LT(rep.max_rel_err, 1e-4) << "seed " << seed;
  }
}

TEST(LossGrad, SmoothnessGradCheck) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1100 + seed);
    std::vector<double> dv(30);
    for (auto& x : dv) x = rng.uniform(0.5, 2.0);
    Td disp = Td::param({5, 6}, std::move(dv));
    Td img = random_image(5, 6, 3, rng);
    auto rep = diff::grad_check<double>([&] { return loss::smoothness_loss(disp, img); }, {disp}, 1e-6);
    EXPECT_LT(rep.max_rel_err, 1e-4) << "seed " << seed;
  }
}

// --- the total objective -----------------------------------------------------

namespace {

struct Scene {
  geom::CameraIntrinsics k;
  Td target;
  std::vector<Td> depths;  // native per-scale
  std::vector<uint8_t> ids;
};

Scene make_scene(Rng& rng, int scales, int h = 16, int w = 24) {
  Scene s;
  s.k.fx = 20.0;
  s.k.fy = 20.0;
  s.k.cx = w / 2.0 - 0.5;
  s.k.cy = h / 2.0 - 0.5;
  s.k.width = w;
  s.k.height = h;
  s.target = random_image(h, w, 3, rng);
  for (int i = 0; i < scales; ++i) {
    const int hs = h >> i, ws = w >> i;
    std::vector<double> dv(static_cast<size_t>(hs) * ws);
    for (auto& x : dv) x = rng.uniform(4.0, 7.0);
    s.depths.push_back(Td::param({hs, ws}, std::move(dv)));
  }
  s.ids.assign(static_cast<size_t>(h) * w, 0);
  for (int y = h / 3; y < std::min(h, h / 3 + 4); ++y)
    for (int x = w / 3; x < std::min(w, w / 3 + 6); ++x) s.ids[static_cast<size_t>(y * w + x)] = 1;
  return s;
}

loss::SourceInputs<double> make_source(Rng& rng, const Scene& s, double tx) {
  loss::SourceInputs<double> src;
  src.image = random_image(16, 24, 3, rng);
  src.ego_mat = geom::pose_from_axis_angle(Td::param({6}, {0, 0, 0, tx, 0.05, 0}));
  src.instance_mats.push_back(
      geom::pose_from_axis_angle(Td::param({6}, {0, 0, 0, rng.uniform(-0.05, 0.05), 0, 0})));
  return src;
}

}  // namespace

TEST(TotalLoss, BreakdownInvariantAndNonNegative) {
  Rng rng(43);
  loss::LossConfig cfg;
  cfg.scales = 3;
  auto s = make_scene(rng, cfg.scales);
  std::vector<loss::SourceInputs<double>> sources{make_source(rng, s, 0.2), make_source(rng, s, -0.2)};
  auto breakdown = loss::total_loss(s.target, sources, s.depths, s.ids, s.k, cfg);
  EXPECT_GE(breakdown.total_value, 0.0);
  EXPECT_NEAR(breakdown.total_value, breakdown.photometric + cfg.alpha_d * breakdown.smoothness, 1e-6);
  EXPECT_EQ(breakdown.skipped_terms, 0);
}

TEST(TotalLoss, AlphaDZeroMeansPhotometricOnly) {
  Rng rng(47);
  loss::LossConfig cfg;
  cfg.scales = 2;
  cfg.alpha_d = 0.0;
  auto s = make_scene(rng, cfg.scales);
  std::vector<loss::SourceInputs<double>> sources{make_source(rng, s, 0.15)};
  auto breakdown = loss::total_loss(s.target, sources, s.depths, s.ids, s.k, cfg);
  EXPECT_DOUBLE_EQ(breakdown.total_value, breakdown.photometric);
}

TEST(TotalLoss, IdentityInstancesMatchEmptyInstanceList) {
  Rng rng(53);
  loss::LossConfig cfg;
  cfg.scales = 2;
  auto s = make_scene(rng, cfg.scales);
  loss::SourceInputs<double> with_inst;
  with_inst.image = random_image(16, 24, 3, rng);
  with_inst.ego_mat = geom::pose_from_axis_angle(Td::param({6}, {0.01, 0, 0, 0.2, 0, 0}));
  with_inst.instance_mats.push_back(geom::pose_from_axis_angle(Td::param({6}, {0, 0, 0, 0, 0, 0})));
  loss::SourceInputs<double> without = with_inst;
  without.instance_mats.clear();
  auto b1 = loss::total_loss(s.target, {with_inst}, s.depths, s.ids, s.k, cfg);
  auto b2 = loss::total_loss(s.target, {without}, s.depths, std::vector<uint8_t>(s.ids.size(), 0),
                             s.k, cfg);
  EXPECT_DOUBLE_EQ(b1.total_value, b2.total_value);
}

TEST(TotalLoss, FullyInvalidSourceSkippedThenErrors) {
  Rng rng(59);
  loss::LossConfig cfg;
  cfg.scales = 2;
  auto s = make_scene(rng, cfg.scales);
  auto good = make_source(rng, s, 0.1);
  auto bad = make_source(rng, s, 500.0);  // warps everything out of frame
  auto breakdown = loss::total_loss(s.target, {good, bad}, s.depths, s.ids, s.k, cfg);
  EXPECT_EQ(breakdown.skipped_terms, cfg.scales);
  EXPECT_GT(breakdown.total_value, 0.0);
  EXPECT_THROW(loss::total_loss(s.target, {bad}, s.depths, s.ids, s.k, cfg), ContractViolation);
}

TEST(TotalLoss, GradCheckThroughScalesAndSources) {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(1300 + seed);
    loss::LossConfig cfg;
    cfg.scales = 2;
    auto s = make_scene(rng, cfg.scales, 8, 12);
    s.ids.assign(s.ids.size(), 0);
    for (int y = 3; y < 6; ++y)
      for (int x = 4; x < 8; ++x) s.ids[static_cast<size_t>(y * 12 + x)] = 1;
    Td ego6 = Td::param({6}, {0.002, -0.001, 0.002, 0.12, 0.1, 0.005});
    Td obj6 = Td::param({6}, {0.003, 0.002, -0.002, 0.04, -0.03, 0.01});
    loss::SourceInputs<double> src;
    src.image = random_image(8, 12, 3, rng);
    auto f = [&] {
      loss::SourceInputs<double> si;
      si.image = src.image;
      si.ego_mat = geom::pose_from_axis_angle(ego6);
      si.instance_mats.push_back(geom::pose_from_axis_angle(obj6));
      return loss::total_loss(s.target, {si}, s.depths, s.ids, s.k, cfg).total;
    };
    std::vector<Td> params{s.depths[0], s.depths[1], ego6, obj6};
    auto rep = diff::grad_check<double>(f, params, 1e-6, 32, seed);
    EXPECT_LT(rep.max_rel_err, 1e-4) << "seed " << seed;
  }
}
