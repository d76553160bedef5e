#pragma once

// Photometric reconstruction (L1 + SSIM), edge-aware smoothness, and the
// multi-scale total objective.

#include <vector>

#include "monorig/geometry.hpp"
#include "monorig/ops.hpp"
#include "monorig/tensor.hpp"

namespace monorig::loss {

struct LossConfig {
  double alpha = 0.15;     // L1 weight; SSIM term gets (1 - alpha)
  double alpha_d = 0.001;  // smoothness weight
  int scales = 4;

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, "loss config: alpha must be in [0,1]");
    require(alpha_d >= 0.0, "loss config: alpha_d must be non-negative");
    require(scales >= 1, "loss config: need at least one scale");
  }
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Per-pixel SSIM with 3x3 uniform windows and reflection padding, averaged
// over channels. Output [H,W] in [-1, 1].
template <typename T>
diff::Tensor<T> ssim_map(const diff::Tensor<T>& a, const diff::Tensor<T>& b) {
  require(a.shape() == b.shape(), "ssim: shape mismatch");
  require(a.ndim() == 3, "ssim: want [H,W,C]");
  using diff::Tensor;
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  Tensor<T> mu_a = diff::box_filter3_reflect(a);
  Tensor<T> mu_b = diff::box_filter3_reflect(b);
  Tensor<T> var_a = diff::box_filter3_reflect(a * a) - mu_a * mu_a;
  Tensor<T> var_b = diff::box_filter3_reflect(b * b) - mu_b * mu_b;
  Tensor<T> cov = diff::box_filter3_reflect(a * b) - mu_a * mu_b;
  Tensor<T> num = diff::add_const(diff::scale(mu_a * mu_b, T(2)), c1) *
                  diff::add_const(diff::scale(cov, T(2)), c2);
  Tensor<T> den = diff::add_const(mu_a * mu_a + mu_b * mu_b, c1) *
                  diff::add_const(var_a + var_b, c2);
  return diff::mean_axis(num / den, 2);  // channel mean -> [H,W]
}

// Eq.-4-style photometric error, averaged over valid pixels only:
// (1-alpha) * (1-SSIM)/2 + alpha * L1, L1 averaged over channels. Invalid
// pixels contribute nothing to value or gradient; to keep them from
// contaminating neighbouring SSIM windows their reconstruction is backfilled
// with the target value before windowing.
template <typename T>
diff::Tensor<T> photometric_loss(const diff::Tensor<T>& target, const diff::Tensor<T>& recon,
                                 const std::vector<uint8_t>& valid, double alpha = 0.15) {
  require(target.shape() == recon.shape() && target.ndim() == 3, "photometric: shape mismatch");
  const int h = target.dim(0), w = target.dim(1);
  require(static_cast<int64_t>(valid.size()) == static_cast<int64_t>(h) * w,
          "photometric: valid mask extent mismatch");
  int64_t count = 0;
  std::vector<T> mask_v(valid.size());
  for (size_t i = 0; i < valid.size(); ++i) {
    mask_v[i] = valid[i] ? T(1) : T(0);
    count += valid[i] ? 1 : 0;
  }
  require(count > 0, "photometric: empty valid mask (degenerate batch)");
  using diff::Tensor;
  Tensor<T> mask = Tensor<T>::from({h, w, 1}, std::move(mask_v));
  Tensor<T> filled = recon * mask + target * diff::add_const(diff::neg(mask), T(1));
  Tensor<T> dssim = diff::scale(diff::add_const(diff::neg(ssim_map(target, filled)), T(1)), T(0.5));
  Tensor<T> l1 = diff::mean_axis(diff::abs(target - filled), 2);
  Tensor<T> pe = diff::scale(dssim, static_cast<T>(1.0 - alpha)) + diff::scale(l1, static_cast<T>(alpha));
  Tensor<T> mask_hw = diff::reshape(mask, {h, w});
  return diff::scale(diff::sum(pe * mask_hw), T(1) / static_cast<T>(count));
}

// Eq.-5 edge-aware smoothness on a mean-normalized disparity, forward
// differences, image gradient magnitude averaged over channels.
template <typename T>
diff::Tensor<T> smoothness_loss(const diff::Tensor<T>& disparity, const diff::Tensor<T>& image) {
  require(disparity.ndim() == 2, "smoothness: disparity must be [H,W]");
  require(image.ndim() == 3 && image.dim(0) == disparity.dim(0) && image.dim(1) == disparity.dim(1),
          "smoothness: image extent mismatch");
  const int h = disparity.dim(0), w = disparity.dim(1);
  for (int64_t i = 0; i < disparity.numel(); ++i)
    require(disparity.data()[i] > T(0), "smoothness: non-positive disparity");
  using diff::Tensor;
  Tensor<T> norm = disparity / diff::mean(disparity);
  auto grad_x = [&](const Tensor<T>& t, int ch) {
    if (ch < 0)
      return diff::crop(t, {0, 1}, {h, w - 1}) - diff::crop(t, {0, 0}, {h, w - 1});
    return diff::crop(t, {0, 1, 0}, {h, w - 1, ch}) - diff::crop(t, {0, 0, 0}, {h, w - 1, ch});
  };
  auto grad_y = [&](const Tensor<T>& t, int ch) {
    if (ch < 0)
      return diff::crop(t, {1, 0}, {h - 1, w}) - diff::crop(t, {0, 0}, {h - 1, w});
    return diff::crop(t, {1, 0, 0}, {h - 1, w, ch}) - diff::crop(t, {0, 0, 0}, {h - 1, w, ch});
  };
  const int c = image.dim(2);
  Tensor<T> wx = diff::exp(diff::neg(diff::mean_axis(diff::abs(grad_x(image, c)), 2)));
  Tensor<T> wy = diff::exp(diff::neg(diff::mean_axis(diff::abs(grad_y(image, c)), 2)));
  Tensor<T> sx = diff::mean(diff::abs(grad_x(norm, -1)) * wx);
  Tensor<T> sy = diff::mean(diff::abs(grad_y(norm, -1)) * wy);
  return sx + sy;
}

// Per-source inputs for the total objective: the source image and the
// already-built pose matrices (ego plus one per instance slot).
template <typename T>
struct SourceInputs {
  diff::Tensor<T> image;                       // [H,W,3]
  diff::Tensor<T> ego_mat;                     // [4,4] T_{s<-t}
  std::vector<diff::Tensor<T>> instance_mats;  // [4,4] per instance id
};

template <typename T>
struct LossBreakdown {
  diff::Tensor<T> total;  // scalar, the backward root
  double total_value = 0;
  double photometric = 0;
  double smoothness = 0;
  std::vector<double> photometric_by_scale;
  std::vector<double> smoothness_by_scale;
  int skipped_terms = 0;
};

namespace detail {

// Constant 2x box-average pyramid step for loss weighting images.
template <typename T>
diff::Tensor<T> half_image(const diff::Tensor<T>& img) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const int oh = h / 2, ow = w / 2;
  std::vector<T> out(static_cast<size_t>(oh) * ow * c);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int k = 0; k < c; ++k) {
        const T* p = img.data();
        const int64_t r0 = (static_cast<int64_t>(2 * y) * w + 2 * x) * c + k;
        const int64_t r1 = (static_cast<int64_t>(2 * y + 1) * w + 2 * x) * c + k;
        out[static_cast<size_t>((static_cast<int64_t>(y) * ow + x) * c + k)] =
            (p[r0] + p[r0 + c] + p[r1] + p[r1 + c]) * T(0.25);
      }
  return diff::Tensor<T>::from({oh, ow, c}, std::move(out));
}

}  // namespace detail

// Eq.-6 objective over scales and sources. Depths arrive one per scale at
// native resolution (stride 2^k) and are upsampled to full resolution
// before warping; smoothness runs on 1/depth at native resolution against
// a box-downsampled image, weighted by 1/2^k.
template <typename T>
LossBreakdown<T> total_loss(const diff::Tensor<T>& target_img,
                            const std::vector<SourceInputs<T>>& sources,
                            const std::vector<diff::Tensor<T>>& depths,
                            const std::vector<uint8_t>& mask_ids, const geom::CameraIntrinsics& k,
                            const LossConfig& cfg,
                            geom::ObjectPoseFrame frame = geom::ObjectPoseFrame::SourceCamera) {
  cfg.validate();
  require(!sources.empty(), "total_loss: need at least one source");
  require(static_cast<int>(depths.size()) == cfg.scales, "total_loss: depth count != scales");
  using diff::Tensor;
  const int h = target_img.dim(0), w = target_img.dim(1);

  LossBreakdown<T> out;
  Tensor<T> photo_acc;
  int photo_terms = 0;
  out.photometric_by_scale.assign(static_cast<size_t>(cfg.scales), 0.0);

  for (int s = 0; s < cfg.scales; ++s) {
    const int factor = 1 << s;
    const Tensor<T>& d = depths[static_cast<size_t>(s)];
    require(d.ndim() == 2 && d.dim(0) * factor == h && d.dim(1) * factor == w,
            "total_loss: depth scale " + std::to_string(s) + " has wrong extent");
    Tensor<T> d_full = s == 0 ? d
                              : diff::reshape(diff::upsample_bilinear(
                                                  diff::reshape(d, {d.dim(0), d.dim(1), 1}), factor),
                                              {h, w});
    int scale_terms = 0;
    for (const auto& src : sources) {
      auto field = geom::piecewise_rigid_warp(d_full, k, src.ego_mat, src.instance_mats, mask_ids, frame);
      auto warped = geom::inverse_warp(src.image, field);
      int64_t valid_count = 0;
      for (uint8_t v : warped.valid) valid_count += v;
      if (valid_count == 0) {
        ++out.skipped_terms;
        continue;
      }
      Tensor<T> pe = photometric_loss(target_img, warped.image, warped.valid, cfg.alpha);
      out.photometric_by_scale[static_cast<size_t>(s)] += static_cast<double>(pe.value());
      photo_acc = photo_terms == 0 ? pe : photo_acc + pe;
      ++photo_terms;
      ++scale_terms;
    }
    if (scale_terms > 0)
      out.photometric_by_scale[static_cast<size_t>(s)] /= scale_terms;
  }
  require(photo_terms > 0, "total_loss: every scale/source term was skipped");
  Tensor<T> photometric = diff::scale(photo_acc, T(1) / static_cast<T>(photo_terms));

  Tensor<T> image_at_scale = diff::detach(target_img);
  Tensor<T> smooth_acc;
  for (int s = 0; s < cfg.scales; ++s) {
    const Tensor<T>& d = depths[static_cast<size_t>(s)];
    Tensor<T> disp = Tensor<T>::scalar(T(1)) / d;
    Tensor<T> term = diff::scale(smoothness_loss(disp, image_at_scale), T(1) / static_cast<T>(1 << s));
    out.smoothness_by_scale.push_back(static_cast<double>(term.value()));
    smooth_acc = s == 0 ? term : smooth_acc + term;
    if (s + 1 < cfg.scales) image_at_scale = detail::half_image(image_at_scale);
  }
  Tensor<T> smoothness = diff::scale(smooth_acc, T(1) / static_cast<T>(cfg.scales));

  out.total = photometric + diff::scale(smoothness, static_cast<T>(cfg.alpha_d));
  out.total_value = static_cast<double>(out.total.value());
  out.photometric = static_cast<double>(photometric.value());
  out.smoothness = static_cast<double>(smoothness.value());
  return out;
}

}  // namespace monorig::loss
