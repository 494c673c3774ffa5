#pragma once

#include <string>

#include <json.hpp>

#include "camulenet/ad/nn.hpp"
#include "camulenet/encoders.hpp"

namespace camulenet {

struct FusionConfig {
  std::size_t T = 1024;         // projection width of both frequency-domain branches
  std::size_t L = 0;            // frame count of the pretrained embedding
  std::size_t W = 0;            // width of the pretrained embedding
  std::size_t D_hidden = 512;   // width of the post-attention network
  double dropout = 0.15;
  std::size_t spec_dim = kSpectrogramEmbeddingWidth;
  std::size_t mfcc_dim = 512;

  void validate() const {
    if (T < 1 || L < 1 || W < 1 || D_hidden < 1 || spec_dim < 1 || mfcc_dim < 1) {
      throw ConfigError("fusion widths T, L, W, D_hidden must all be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("fusion dropout must lie in [0, 1)");
  }

  std::size_t fused_width() const { return D_hidden + L; }
};

inline void to_json(nlohmann::json& j, const FusionConfig& c) {
  j = {{"T", c.T}, {"L", c.L}, {"W", c.W}, {"D_hidden", c.D_hidden}, {"dropout", c.dropout},
       {"spec_dim", c.spec_dim}, {"mfcc_dim", c.mfcc_dim}};
}

inline void from_json(const nlohmann::json& j, FusionConfig& c) {
  c.T = j.at("T");
  c.L = j.at("L");
  c.W = j.at("W");
  c.D_hidden = j.at("D_hidden");
  c.dropout = j.at("dropout");
  c.spec_dim = j.at("spec_dim");
  c.mfcc_dim = j.at("mfcc_dim");
}

template <class T>
struct FusionTrace {
  ad::Tensor<T> x_s_att;   // [B, T]
  ad::Tensor<T> x_m_att;   // [B, T]
  ad::Tensor<T> x_sm_att;  // [B, L]
  ad::Tensor<T> x_w_att;   // [B, W]
  ad::Tensor<T> fused;     // [B, D_hidden + L]
};

// Co-attention fusion of the spectrogram / MFCC embeddings with the frames of
// a pretrained encoder:
//   x_s_att  = FC_s(x'_s),  x_m_att = FC_m(x'_m final state)
//   x_sm_att = LN(ReLU(FC_ms(x_m_att ⊕ x_s_att)))            ∈ R^L
//   x_w_att  = x_sm_att · x_w                                 ∈ R^W
//   h        = LN(ReLU(FC3(drop(FC2(drop(FC1(drop(x_w_att))))))))
//   fused    = h ⊕ x_sm_att
// FC1 is the projection applied to the attended frames; it is a separate layer
// from FC_ms.
template <class T>
struct CoAttentionFusion {
  FusionConfig cfg;
  ad::Linear<T> fc_s, fc_m, fc_ms;
  ad::LayerNorm<T> ln_sm;
  ad::Linear<T> post1, post2, post3;
  ad::LayerNorm<T> ln_out;

  CoAttentionFusion() = default;
  CoAttentionFusion(const FusionConfig& c, CounterRng& rng) : cfg(c) {
    cfg.validate();
    fc_s = ad::Linear<T>(cfg.spec_dim, cfg.T, rng);
    fc_m = ad::Linear<T>(cfg.mfcc_dim, cfg.T, rng);
    fc_ms = ad::Linear<T>(2 * cfg.T, cfg.L, rng);
    ln_sm = ad::LayerNorm<T>(cfg.L);
    post1 = ad::Linear<T>(cfg.W, cfg.D_hidden, rng);
    post2 = ad::Linear<T>(cfg.D_hidden, cfg.D_hidden, rng);
    post3 = ad::Linear<T>(cfg.D_hidden, cfg.D_hidden, rng);
    ln_out = ad::LayerNorm<T>(cfg.D_hidden);
  }

  std::pair<ad::Tensor<T>, ad::Tensor<T>> project_branches(const ad::Tensor<T>& x_s, const ad::Tensor<T>& x_m_final) const {
    if (x_s.rank() != 2 || x_s.dim(1) != cfg.spec_dim) {
      throw ShapeError("spectrogram embedding must be [B, " + std::to_string(cfg.spec_dim) + "], got " + ad::shape_str(x_s.shape()));
    }
    if (x_m_final.rank() != 2 || x_m_final.dim(1) != cfg.mfcc_dim) {
      throw ShapeError("MFCC embedding must be [B, " + std::to_string(cfg.mfcc_dim) + "], got " + ad::shape_str(x_m_final.shape()));
    }
    return {fc_s(x_s), fc_m(x_m_final)};
  }

  ad::Tensor<T> concat_project(const ad::Tensor<T>& x_m_att, const ad::Tensor<T>& x_s_att) const {
    if (x_m_att.rank() != 2 || x_s_att.rank() != 2 || x_m_att.dim(1) != cfg.T || x_s_att.dim(1) != cfg.T) {
      throw ShapeError("concat_project expects two [B, " + std::to_string(cfg.T) + "] inputs, got " +
                       ad::shape_str(x_m_att.shape()) + " and " + ad::shape_str(x_s_att.shape()));
    }
    return ln_sm(ad::relu(fc_ms(ad::concat<T>({x_m_att, x_s_att}, 1))));
  }

  // x_sm_att [B, L] times x_w [B, L, W] -> [B, W]; no normalisation of the weights.
  static ad::Tensor<T> attend(const ad::Tensor<T>& x_sm_att, const ad::Tensor<T>& x_w) {
    if (x_w.rank() != 3 || x_sm_att.rank() != 2 || x_sm_att.dim(0) != x_w.dim(0)) {
      throw ShapeError("attend expects [B, L] weights and [B, L, W] frames, got " + ad::shape_str(x_sm_att.shape()) +
                       " and " + ad::shape_str(x_w.shape()));
    }
    if (x_sm_att.dim(1) != x_w.dim(1)) {
      throw ShapeError("attention weights have L = " + std::to_string(x_sm_att.dim(1)) +
                       " but the pretrained embedding has L = " + std::to_string(x_w.dim(1)));
    }
    const std::size_t bs = x_w.dim(0), l = x_w.dim(1), w = x_w.dim(2);
    return ad::reshape(ad::bmm(ad::reshape(x_sm_att, {bs, 1, l}), x_w), {bs, w});
  }

  ad::Tensor<T> fuse(const ad::Tensor<T>& x_w_att, const ad::Tensor<T>& x_sm_att, ad::Mode mode, CounterRng& rng) const {
    if (x_w_att.rank() != 2 || x_w_att.dim(1) != cfg.W || x_sm_att.rank() != 2 || x_sm_att.dim(1) != cfg.L) {
      throw ShapeError("fuse expects [B, " + std::to_string(cfg.W) + "] and [B, " + std::to_string(cfg.L) + "], got " +
                       ad::shape_str(x_w_att.shape()) + " and " + ad::shape_str(x_sm_att.shape()));
    }
    auto h = post1(ad::dropout(x_w_att, cfg.dropout, mode, rng));
    h = post2(ad::dropout(h, cfg.dropout, mode, rng));
    h = post3(ad::dropout(h, cfg.dropout, mode, rng));
    h = ln_out(ad::relu(h));
    return ad::concat<T>({h, x_sm_att}, 1);
  }

  FusionTrace<T> operator()(const ad::Tensor<T>& x_s, const ad::Tensor<T>& x_m_final, const ad::Tensor<T>& x_w,
                            ad::Mode mode, CounterRng& rng) const {
    FusionTrace<T> t;
    std::tie(t.x_s_att, t.x_m_att) = project_branches(x_s, x_m_final);
    t.x_sm_att = concat_project(t.x_m_att, t.x_s_att);
    t.x_w_att = attend(t.x_sm_att, x_w);
    t.fused = fuse(t.x_w_att, t.x_sm_att, mode, rng);
    return t;
  }

  void collect(ad::ParamList<T>& out, const std::string& prefix) {
    fc_s.collect(out, prefix + ".fc_s");
    fc_m.collect(out, prefix + ".fc_m");
    fc_ms.collect(out, prefix + ".fc_ms");
    ln_sm.collect(out, prefix + ".ln_sm");
    post1.collect(out, prefix + ".post1");
    post2.collect(out, prefix + ".post2");
    post3.collect(out, prefix + ".post3");
    ln_out.collect(out, prefix + ".ln_out");
  }
};

}  // namespace camulenet
