#pragma once

// Toy-scale network heads: strided pyramid encoder with top-down merging,
// multi-scale depth decoder, ego-pose head, ROI pooling, and the
// transformer instance-pose head.

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "monorig/checkpoint.hpp"
#include "monorig/geometry.hpp"
#include "monorig/ops.hpp"
#include "monorig/rng.hpp"

namespace monorig::nets {

struct DepthHeadConfig {
  double d_min = 0.5;
  double d_max = 100.0;

  double a() const { return 1.0 / d_min - 1.0 / d_max; }
  double b() const { return 1.0 / d_max; }

  void validate() const {
    require(d_min > 0 && d_max > d_min, "depth head: need 0 < d_min < d_max");
  }
};

struct HeadConfig {
  int max_instances = 8;  // N
  int sources = 2;        // s
  int embed_dim = 64;
  int layers = 2;
  int heads = 4;
  int roi_size = 7;

  void validate() const {
    require(embed_dim % heads == 0, "head config: embed_dim must divide by heads");
    require(max_instances >= 1 && sources >= 1, "head config: N >= 1 and s >= 1 required");
    require(layers >= 1 && roi_size >= 1, "head config: layers and roi_size must be positive");
  }
};

enum class EgoFeatureLevel { P4, P8, P16 };

struct ModelConfig {
  std::vector<int> feature_channels{16, 32, 48, 64, 64};  // strides 2..32
  int fpn_channels = 64;                                   // C_f
  std::vector<int> decoder_channels{64, 48, 32, 16, 12};   // strides 16..1
  DepthHeadConfig depth;
  HeadConfig head;
  EgoFeatureLevel ego_feature_level = EgoFeatureLevel::P4;
  bool shared_backbone = true;
  bool piecewise_rigid = true;
  geom::ObjectPoseFrame object_pose_frame = geom::ObjectPoseFrame::SourceCamera;
  uint64_t seed = 0;

  void validate() const {
    require(feature_channels.size() == 5, "model config: need 5 feature channel counts");
    require(decoder_channels.size() == 5, "model config: need 5 decoder channel counts");
    depth.validate();
    head.validate();
  }
};

inline const char* to_string(EgoFeatureLevel l) {
  switch (l) {
    case EgoFeatureLevel::P4: return "P4";
    case EgoFeatureLevel::P8: return "P8";
    default: return "P16";
  }
}

inline EgoFeatureLevel ego_level_from_string(const std::string& s) {
  if (s == "P4") return EgoFeatureLevel::P4;
  if (s == "P8") return EgoFeatureLevel::P8;
  if (s == "P16") return EgoFeatureLevel::P16;
  throw ContractViolation("model config: unknown ego feature level " + s);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"feature_channels", c.feature_channels},
                     {"fpn_channels", c.fpn_channels},
                     {"decoder_channels", c.decoder_channels},
                     {"depth", {{"d_min", c.depth.d_min}, {"d_max", c.depth.d_max}}},
                     {"head",
                      {{"max_instances", c.head.max_instances},
                       {"sources", c.head.sources},
                       {"embed_dim", c.head.embed_dim},
                       {"layers", c.head.layers},
                       {"heads", c.head.heads},
                       {"roi_size", c.head.roi_size}}},
                     {"ego_feature_level", to_string(c.ego_feature_level)},
                     {"shared_backbone", c.shared_backbone},
                     {"piecewise_rigid", c.piecewise_rigid},
                     {"object_pose_frame",
                      c.object_pose_frame == geom::ObjectPoseFrame::SourceCamera ? "source" : "target"},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  c.fpn_channels = j.value("fpn_channels", c.fpn_channels);
  c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
  if (j.contains("depth")) {
    c.depth.d_min = j["depth"].value("d_min", c.depth.d_min);
    c.depth.d_max = j["depth"].value("d_max", c.depth.d_max);
  }
  if (j.contains("head")) {
    const auto& h = j["head"];
    c.head.max_instances = h.value("max_instances", c.head.max_instances);
    c.head.sources = h.value("sources", c.head.sources);
    c.head.embed_dim = h.value("embed_dim", c.head.embed_dim);
    c.head.layers = h.value("layers", c.head.layers);
    c.head.heads = h.value("heads", c.head.heads);
    c.head.roi_size = h.value("roi_size", c.head.roi_size);
  }
  c.ego_feature_level = ego_level_from_string(j.value("ego_feature_level", std::string("P4")));
  c.shared_backbone = j.value("shared_backbone", c.shared_backbone);
  c.piecewise_rigid = j.value("piecewise_rigid", c.piecewise_rigid);
  c.object_pose_frame = j.value("object_pose_frame", std::string("source")) == std::string("target")
                            ? geom::ObjectPoseFrame::TargetCamera
                            : geom::ObjectPoseFrame::SourceCamera;
  c.seed = j.value("seed", c.seed);
  c.validate();
}

// ---------------------------------------------------------------------------
// layers

template <typename T>
struct Conv {
  diff::Tensor<T> w, b;
  int stride = 1, pad = 0;

  Conv() = default;
  Conv(diff::ParamStore<T>& ps, const std::string& name, int k, int cin, int cout, int stride_,
       Rng& rng, bool zero_init = false)
      : stride(stride_), pad(k / 2) {
    std::vector<T> wv(static_cast<size_t>(k) * k * cin * cout, T(0));
    if (!zero_init) {
      const double limit = std::sqrt(6.0 / (static_cast<double>(k) * k * cin));
      for (auto& x : wv) x = static_cast<T>(rng.uniform(-limit, limit));
    }
    w = ps.add(name + ".w", {k, k, cin, cout}, std::move(wv));
    b = ps.add(name + ".b", {cout}, std::vector<T>(static_cast<size_t>(cout), T(0)));
  }

  diff::Tensor<T> operator()(const diff::Tensor<T>& x) const {
    return diff::conv2d(x, w, b, stride, pad);
  }
};

template <typename T>
struct Linear {
  diff::Tensor<T> w, b;

  Linear() = default;
  Linear(diff::ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
         bool zero_init = false) {
    std::vector<T> wv(static_cast<size_t>(in) * out, T(0));
    if (!zero_init) {
      const double limit = std::sqrt(6.0 / in);
      for (auto& x : wv) x = static_cast<T>(rng.uniform(-limit, limit));
    }
    w = ps.add(name + ".w", {in, out}, std::move(wv));
    b = ps.add(name + ".b", {out}, std::vector<T>(static_cast<size_t>(out), T(0)));
  }

  diff::Tensor<T> operator()(const diff::Tensor<T>& x) const { return diff::matmul(x, w) + b; }
};

template <typename T>
struct LayerNorm {
  diff::Tensor<T> gain, b;

  LayerNorm() = default;
  LayerNorm(diff::ParamStore<T>& ps, const std::string& name, int n) {
    gain = ps.add(name + ".gain", {n}, std::vector<T>(static_cast<size_t>(n), T(1)));
    b = ps.add(name + ".b", {n}, std::vector<T>(static_cast<size_t>(n), T(0)));
  }

  diff::Tensor<T> operator()(const diff::Tensor<T>& x) const { return diff::layer_norm(x, gain, b); }
};

template <typename T>
struct FeaturePyramid {
  diff::Tensor<T> p4, p8, p16, p32;
};

// Strided conv stack with 1x1 laterals and nearest-upsample top-down merging.
template <typename T>
class PyramidEncoder {
 public:
  PyramidEncoder() = default;
  PyramidEncoder(diff::ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
    const auto& ch = cfg.feature_channels;
    int cin = 3;
    for (int i = 0; i < 5; ++i) {
      stem_[static_cast<size_t>(i)] =
          Conv<T>(ps, prefix + ".stem" + std::to_string(i), 3, cin, ch[static_cast<size_t>(i)], 2, rng);
      cin = ch[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 4; ++i) {
      lateral_[static_cast<size_t>(i)] = Conv<T>(ps, prefix + ".lat" + std::to_string(i), 1,
                                                 ch[static_cast<size_t>(i + 1)], cfg.fpn_channels, 1, rng);
      smooth_[static_cast<size_t>(i)] =
          Conv<T>(ps, prefix + ".smooth" + std::to_string(i), 3, cfg.fpn_channels, cfg.fpn_channels, 1, rng);
    }
  }

  FeaturePyramid<T> operator()(const diff::Tensor<T>& image) const {
    require(image.ndim() == 3 && image.dim(2) == 3, "encoder: want [H,W,3]");
    require(image.dim(0) % 32 == 0 && image.dim(1) % 32 == 0,
            "encoder: image extents must be divisible by 32");
    diff::Tensor<T> x = image;
    std::array<diff::Tensor<T>, 5> feats;
    for (int i = 0; i < 5; ++i) {
      x = diff::elu(stem_[static_cast<size_t>(i)](x));
      feats[static_cast<size_t>(i)] = x;
    }
    FeaturePyramid<T> out;
    diff::Tensor<T> top = lateral_[3](feats[4]);
    out.p32 = diff::elu(smooth_[3](top));
    diff::Tensor<T> m16 = lateral_[2](feats[3]) + diff::upsample_nearest(top, 2);
    out.p16 = diff::elu(smooth_[2](m16));
    diff::Tensor<T> m8 = lateral_[1](feats[2]) + diff::upsample_nearest(m16, 2);
    out.p8 = diff::elu(smooth_[1](m8));
    diff::Tensor<T> m4 = lateral_[0](feats[1]) + diff::upsample_nearest(m8, 2);
    out.p4 = diff::elu(smooth_[0](m4));
    return out;
  }

 private:
  std::array<Conv<T>, 5> stem_;
  std::array<Conv<T>, 4> lateral_;
  std::array<Conv<T>, 4> smooth_;
};

template <typename T>
struct DepthPrediction {
  // index k holds the map at stride 2^k: [H/2^k, W/2^k]
  std::vector<diff::Tensor<T>> sigma;
  std::vector<diff::Tensor<T>> depth;
};

// Decoder with skip connections; per scale a 1x1 conv + sigmoid, re-scaled
// to depth via D = 1 / (a sigma + b).
template <typename T>
class DepthHead {
 public:
  DepthHead() = default;
  DepthHead(diff::ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg.depth) {
    const int cf = cfg.fpn_channels;
    const auto& dc = cfg.decoder_channels;
    up_[0] = Conv<T>(ps, prefix + ".up16", 3, cf + cf, dc[0], 1, rng);        // @/16 after concat P16
    up_[1] = Conv<T>(ps, prefix + ".up8", 3, dc[0] + cf, dc[1], 1, rng);      // @/8
    up_[2] = Conv<T>(ps, prefix + ".up4", 3, dc[1] + cf, dc[2], 1, rng);      // @/4
    up_[3] = Conv<T>(ps, prefix + ".up2", 3, dc[2], dc[3], 1, rng);           // @/2
    up_[4] = Conv<T>(ps, prefix + ".up1", 3, dc[3], dc[4], 1, rng);           // @/1
    disp_[0] = Conv<T>(ps, prefix + ".disp8", 1, dc[1], 1, 1, rng);
    disp_[1] = Conv<T>(ps, prefix + ".disp4", 1, dc[2], 1, 1, rng);
    disp_[2] = Conv<T>(ps, prefix + ".disp2", 1, dc[3], 1, 1, rng);
    disp_[3] = Conv<T>(ps, prefix + ".disp1", 1, dc[4], 1, 1, rng);
  }

  DepthPrediction<T> operator()(const FeaturePyramid<T>& pyr) const {
    using diff::Tensor;
    Tensor<T> x = diff::elu(up_[0](diff::concat(
        std::vector<Tensor<T>>{diff::upsample_nearest(pyr.p32, 2), pyr.p16}, 2)));
    x = diff::elu(up_[1](diff::concat(std::vector<Tensor<T>>{diff::upsample_nearest(x, 2), pyr.p8}, 2)));
    Tensor<T> s8 = diff::sigmoid(disp_[0](x));
    x = diff::elu(up_[2](diff::concat(std::vector<Tensor<T>>{diff::upsample_nearest(x, 2), pyr.p4}, 2)));
    Tensor<T> s4 = diff::sigmoid(disp_[1](x));
    x = diff::elu(up_[3](diff::upsample_nearest(x, 2)));
    Tensor<T> s2 = diff::sigmoid(disp_[2](x));
    x = diff::elu(up_[4](diff::upsample_nearest(x, 2)));
    Tensor<T> s1 = diff::sigmoid(disp_[3](x));

    DepthPrediction<T> out;
    for (Tensor<T> s : {s1, s2, s4, s8}) {
      Tensor<T> flat = diff::reshape(s, {s.dim(0), s.dim(1)});
      out.sigma.push_back(flat);
      Tensor<T> disparity = diff::add_const(diff::scale(flat, static_cast<T>(cfg_.a())),
                                            static_cast<T>(cfg_.b()));
      out.depth.push_back(diff::Tensor<T>::scalar(T(1)) / disparity);
    }
    return out;
  }

  const DepthHeadConfig& config() const { return cfg_; }

 private:
  DepthHeadConfig cfg_;
  std::array<Conv<T>, 5> up_;
  std::array<Conv<T>, 4> disp_;
};

// Ego-pose head: concat target/source features, strided conv stack, global
// average, zero-initialized 1x1 head scaled by 0.01 -> 6 axis-angle params.
template <typename T>
class EgoPoseHead {
 public:
  EgoPoseHead() = default;
  EgoPoseHead(diff::ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
    const int cf = cfg.fpn_channels;
    conv_[0] = Conv<T>(ps, prefix + ".conv0", 3, 2 * cf, 64, 2, rng);
    conv_[1] = Conv<T>(ps, prefix + ".conv1", 3, 64, 64, 2, rng);
    head_ = Conv<T>(ps, prefix + ".head", 1, 64, 6, 1, rng, /*zero_init=*/true);
  }

  // One source at a time; weights are shared across sources.
  diff::Tensor<T> operator()(const diff::Tensor<T>& target_feat,
                             const diff::Tensor<T>& source_feat) const {
    using diff::Tensor;
    require(target_feat.shape() == source_feat.shape(), "ego head: feature shapes must match");
    Tensor<T> x = diff::concat(std::vector<Tensor<T>>{target_feat, source_feat}, 2);
    x = diff::elu(conv_[0](x));
    x = diff::elu(conv_[1](x));
    x = head_(x);  // [h,w,6]
    Tensor<T> pooled = diff::mean_axis(diff::reshape(x, {x.dim(0) * x.dim(1), 6}), 0);
    return diff::scale(diff::reshape(pooled, {6}), T(0.01));
  }

 private:
  std::array<Conv<T>, 2> conv_;
  Conv<T> head_;
};

// ---------------------------------------------------------------------------
// ROI pooling

// Pools each box into roi_size x roi_size bin samples on an endpoint-
// inclusive lattice, bilinearly, differentiable w.r.t. the features.
// Boxes are image-pixel coordinates; `stride` maps them onto the feature
// grid (pixel-center aligned). Output [N, C, r, r].
template <typename T>
diff::Tensor<T> roi_align(const diff::Tensor<T>& features, const std::vector<std::array<double, 4>>& boxes,
                          int roi_size, int stride) {
  require(features.ndim() == 3, "roi_align: features must be [H,W,C]");
  const int n = static_cast<int>(boxes.size());
  require(n >= 1, "roi_align: need at least one box");
  const int r = roi_size;
  std::vector<T> coords(static_cast<size_t>(n) * r * r * 2);
  auto to_feature = [stride](double image_coord) {
    return (image_coord - (stride - 1) / 2.0) / stride;
  };
  for (int bi = 0; bi < n; ++bi) {
    const auto& b = boxes[static_cast<size_t>(bi)];
    require(b[2] > b[0] && b[3] > b[1], "roi_align: degenerate box");
    for (int by = 0; by < r; ++by)
      for (int bx = 0; bx < r; ++bx) {
        const double fx = r > 1 ? static_cast<double>(bx) / (r - 1) : 0.5;
        const double fy = r > 1 ? static_cast<double>(by) / (r - 1) : 0.5;
        const double ix = b[0] + fx * (b[2] - b[0]);
        const double iy = b[1] + fy * (b[3] - b[1]);
        const size_t at = (static_cast<size_t>(bi) * r * r + static_cast<size_t>(by) * r + bx) * 2;
        coords[at] = static_cast<T>(to_feature(ix));
        coords[at + 1] = static_cast<T>(to_feature(iy));
      }
  }
  auto sampled = diff::bilinear_sample(features, diff::Tensor<T>::from({n * r * r, 2}, std::move(coords)));
  const int c = features.dim(2);
  return diff::transpose(diff::reshape(sampled.values, {n, r, r, c}), {0, 3, 1, 2});
}

// ---------------------------------------------------------------------------
// transformer instance-pose head

template <typename T>
class InstancePoseHead {
 public:
  InstancePoseHead() = default;
  InstancePoseHead(diff::ParamStore<T>& ps, const std::string& prefix, const HeadConfig& cfg,
                   int roi_channels, Rng& rng)
      : cfg_(cfg) {
    const int e = cfg.embed_dim;
    proj_ = Linear<T>(ps, prefix + ".proj", roi_channels * cfg.roi_size * cfg.roi_size, e, rng);
    // learned frame-index embedding: target, source-1, ..., source-s
    {
      std::vector<T> fe(static_cast<size_t>(cfg.sources + 1) * e);
      for (auto& x : fe) x = static_cast<T>(rng.normal(0.0, 0.02));
      frame_embed_ = ps.add(prefix + ".frame_embed", {cfg.sources + 1, e}, std::move(fe));
    }
    for (int l = 0; l < cfg.layers; ++l) {
      enc_.push_back(Block(ps, prefix + ".enc" + std::to_string(l), e, cfg.heads, rng, /*cross=*/false));
      dec_.push_back(Block(ps, prefix + ".dec" + std::to_string(l), e, cfg.heads, rng, /*cross=*/true));
    }
    final_norm_ = LayerNorm<T>(ps, prefix + ".final_norm", e);
    out_ = Linear<T>(ps, prefix + ".out", e, cfg.sources * 6, rng, /*zero_init=*/true);
  }

  // pooled: [s+1, N, C, r, r] for one batch sample, target at index 0.
  // Returns [N, s, 6].
  diff::Tensor<T> operator()(const diff::Tensor<T>& pooled) const {
    using diff::Tensor;
    require(pooled.ndim() == 5 && pooled.dim(0) == cfg_.sources + 1 &&
                pooled.dim(1) == cfg_.max_instances,
            "instance head: pooled shape mismatch, got " + diff::shape_str(pooled.shape()));
    const int frames = cfg_.sources + 1, n = cfg_.max_instances, e = cfg_.embed_dim;
    const int feat = pooled.dim(2) * pooled.dim(3) * pooled.dim(4);
    // linear projection flattens the trailing three axes
    Tensor<T> tokens = proj_(diff::reshape(pooled, {frames * n, feat}));
    // add the frame-index embedding per frame block
    std::vector<Tensor<T>> with_embed;
    for (int f = 0; f < frames; ++f) {
      Tensor<T> block = diff::crop(tokens, {f * n, 0}, {n, e});
      Tensor<T> fe = diff::crop(frame_embed_, {f, 0}, {1, e});
      with_embed.push_back(block + fe);
    }
    Tensor<T> enc = diff::concat(with_embed, 0);
    Tensor<T> queries = with_embed[0];  // only the target proposals feed the decoder
    for (const auto& b : enc_) enc = b.run(enc, enc);
    Tensor<T> dec = queries;
    for (const auto& b : dec_) dec = b.run(dec, enc);
    Tensor<T> out = out_(final_norm_(dec));  // [N, s*6]
    return diff::reshape(out, {n, cfg_.sources, 6});
  }

  const HeadConfig& config() const { return cfg_; }

 private:
  struct Block {
    Block() = default;
    Block(diff::ParamStore<T>& ps, const std::string& prefix, int e, int heads_, Rng& rng, bool cross)
        : has_cross(cross), heads(heads_) {
      norm1 = LayerNorm<T>(ps, prefix + ".norm1", e);
      wq = Linear<T>(ps, prefix + ".wq", e, e, rng);
      wk = Linear<T>(ps, prefix + ".wk", e, e, rng);
      wv = Linear<T>(ps, prefix + ".wv", e, e, rng);
      wo = Linear<T>(ps, prefix + ".wo", e, e, rng);
      if (cross) {
        norm_cross = LayerNorm<T>(ps, prefix + ".norm_cross", e);
        cq = Linear<T>(ps, prefix + ".cq", e, e, rng);
        ck = Linear<T>(ps, prefix + ".ck", e, e, rng);
        cv = Linear<T>(ps, prefix + ".cv", e, e, rng);
        co = Linear<T>(ps, prefix + ".co", e, e, rng);
      }
      norm2 = LayerNorm<T>(ps, prefix + ".norm2", e);
      ff1 = Linear<T>(ps, prefix + ".ff1", e, 4 * e, rng);
      ff2 = Linear<T>(ps, prefix + ".ff2", 4 * e, e, rng);
    }

    diff::Tensor<T> attend(const diff::Tensor<T>& q_in, const diff::Tensor<T>& kv,
                           const Linear<T>& lq, const Linear<T>& lk, const Linear<T>& lv,
                           const Linear<T>& lo) const {
      return lo(diff::multi_head_attention(lq(q_in), lk(kv), lv(kv), heads));
    }

    // pre-LN: x += attn(LN(x)); [x += cross(LN(x), memory)]; x += ffn(LN(x))
    diff::Tensor<T> run(const diff::Tensor<T>& x_in, const diff::Tensor<T>& memory) const {
      using diff::Tensor;
      Tensor<T> x = x_in;
      Tensor<T> n1 = norm1(x);
      x = x + attend(n1, n1, wq, wk, wv, wo);
      if (has_cross) x = x + attend(norm_cross(x), memory, cq, ck, cv, co);
      Tensor<T> n2 = norm2(x);
      x = x + ff2(diff::elu(ff1(n2)));
      return x;
    }

    bool has_cross = false;
    int heads = 4;
    LayerNorm<T> norm1, norm_cross, norm2;
    Linear<T> wq, wk, wv, wo, cq, ck, cv, co;
    Linear<T> ff1, ff2;
  };

  HeadConfig cfg_;
  Linear<T> proj_;
  diff::Tensor<T> frame_embed_;
  std::vector<Block> enc_;
  std::vector<Block> dec_;
  LayerNorm<T> final_norm_;
  Linear<T> out_;
};

// ---------------------------------------------------------------------------
// the whole model

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg.seed * 0x2545f4914f6cdd1dull + 99991);
    encoder_ = PyramidEncoder<T>(params_, "encoder", cfg, rng);
    if (!cfg.shared_backbone) pose_encoder_ = PyramidEncoder<T>(params_, "pose_encoder", cfg, rng);
    depth_head_ = DepthHead<T>(params_, "depth", cfg, rng);
    ego_head_ = EgoPoseHead<T>(params_, "ego", cfg, rng);
    if (cfg.piecewise_rigid)
      instance_head_ = InstancePoseHead<T>(params_, "instance", cfg.head, cfg.fpn_channels, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  diff::ParamStore<T>& params() { return params_; }
  const diff::ParamStore<T>& params() const { return params_; }

  FeaturePyramid<T> encode(const diff::Tensor<T>& image) const { return encoder_(image); }
  FeaturePyramid<T> encode_pose(const diff::Tensor<T>& image) const {
    return cfg_.shared_backbone ? encoder_(image) : pose_encoder_(image);
  }

  DepthPrediction<T> predict_depth(const FeaturePyramid<T>& pyr) const { return depth_head_(pyr); }

  const diff::Tensor<T>& ego_feature(const FeaturePyramid<T>& pyr) const {
    switch (cfg_.ego_feature_level) {
      case EgoFeatureLevel::P4: return pyr.p4;
      case EgoFeatureLevel::P8: return pyr.p8;
      default: return pyr.p16;
    }
  }

  // 6 axis-angle parameters of T_{s<-t} for one source.
  diff::Tensor<T> predict_ego(const FeaturePyramid<T>& target_pyr,
                              const FeaturePyramid<T>& source_pyr) const {
    return ego_head_(ego_feature(target_pyr), ego_feature(source_pyr));
  }

  // Pools per-frame boxes from P4 into the padded [s+1, N, C, r, r] block.
  // `boxes[f]` lists real boxes of frame f (target first); missing slots are
  // zero-filled dummies.
  diff::Tensor<T> pool_instances(const std::vector<FeaturePyramid<T>>& pyramids,
                                 const std::vector<std::vector<std::array<double, 4>>>& boxes) const {
    using diff::Tensor;
    const int frames = cfg_.head.sources + 1;
    require(static_cast<int>(pyramids.size()) == frames && static_cast<int>(boxes.size()) == frames,
            "pool_instances: need target plus s source pyramids");
    const int n = cfg_.head.max_instances, r = cfg_.head.roi_size, c = cfg_.fpn_channels;
    std::vector<Tensor<T>> frames_pooled;
    for (int f = 0; f < frames; ++f) {
      const auto& bx = boxes[static_cast<size_t>(f)];
      require(static_cast<int>(bx.size()) <= n, "pool_instances: more boxes than proposal slots");
      std::vector<Tensor<T>> slots;
      if (!bx.empty()) {
        Tensor<T> pooled = roi_align(pyramids[static_cast<size_t>(f)].p4, bx, r, 4);
        slots.push_back(diff::reshape(pooled, {static_cast<int>(bx.size()), c, r, r}));
      }
      const int missing = n - static_cast<int>(bx.size());
      if (missing > 0) slots.push_back(Tensor<T>::zeros({missing, c, r, r}));
      frames_pooled.push_back(diff::reshape(slots.size() == 1 ? slots[0] : diff::concat(slots, 0),
                                            {1, n, c, r, r}));
    }
    return diff::concat(frames_pooled, 0);
  }

  // [N, s, 6] object poses for the target frame's proposals.
  diff::Tensor<T> predict_instance_poses(const diff::Tensor<T>& pooled) const {
    require(cfg_.piecewise_rigid, "instance head disabled in this configuration");
    return instance_head_(pooled);
  }

  const InstancePoseHead<T>& instance_head() const { return instance_head_; }

 private:
  ModelConfig cfg_;
  diff::ParamStore<T> params_;
  PyramidEncoder<T> encoder_, pose_encoder_;
  DepthHead<T> depth_head_;
  EgoPoseHead<T> ego_head_;
  InstancePoseHead<T> instance_head_;
};

}  // namespace monorig::nets
