#include "msct/model.hpp"

#include <stdexcept>
#include <string>

#include "msct/ops.hpp"

namespace msct {

const char* to_string(SelfVariant v) { return v == SelfVariant::SA ? "sa" : "mssa"; }
const char* to_string(CrossVariant v) { return v == CrossVariant::CA ? "ca" : "dca"; }

SelfVariant parse_self_variant(const std::string& s) {
  if (s == "sa") return SelfVariant::SA;
  if (s == "mssa") return SelfVariant::MSSA;
  throw std::invalid_argument("unknown self-attention variant '" + s + "' (expected sa|mssa)");
}

CrossVariant parse_cross_variant(const std::string& s) {
  if (s == "ca") return CrossVariant::CA;
  if (s == "dca") return CrossVariant::DCA;
  throw std::invalid_argument("unknown cross-attention variant '" + s + "' (expected ca|dca)");
}

AttentionConfig ModelConfig::attention_config() const {
  AttentionConfig a;
  a.C = C;
  a.h = h;
  a.scales = scales;
  return a;
}

void ModelConfig::validate() const {
  if (C <= 0 || T <= 0 || C_a <= 0 || C_v_feat <= 0) {
    throw std::invalid_argument("model config: dimensions must be positive");
  }
  if (n_blocks < 0) throw std::invalid_argument("model config: n_blocks must be >= 0");
  if (ffn_multiplier < 1) throw std::invalid_argument("model config: ffn_multiplier must be >= 1");
  if (init_stddev <= 0) throw std::invalid_argument("model config: init_stddev must be positive");
  attention_config().validate(self_variant == SelfVariant::MSSA);
  loss.validate();
}

namespace {

LayerNormParams make_ln(std::int64_t C) {
  LayerNormParams p;
  p.gamma = Tensor::ones({C}).set_requires_grad();
  p.beta = Tensor::zeros({C}).set_requires_grad();
  return p;
}

FeedForward make_ffn(std::int64_t C, std::int64_t mult, std::mt19937_64& rng, double stddev) {
  FeedForward f;
  f.w1 = Tensor::randn({C, C * mult}, rng, stddev).set_requires_grad();
  f.b1 = Tensor::zeros({C * mult}).set_requires_grad();
  f.w2 = Tensor::randn({C * mult, C}, rng, stddev).set_requires_grad();
  f.b2 = Tensor::zeros({C}).set_requires_grad();
  return f;
}

Branch make_branch(const ModelConfig& cfg, std::mt19937_64& rng) {
  Branch b;
  const std::int64_t C = cfg.C;
  b.cls = Tensor::randn({1, 1, C}, rng, cfg.init_stddev).set_requires_grad();
  b.pos = Tensor::randn({1, cfg.T + 1, C}, rng, cfg.init_stddev).set_requires_grad();
  const auto acfg = cfg.attention_config();
  for (int i = 0; i < cfg.n_blocks; ++i) {
    BranchBlock blk;
    blk.ln_self = make_ln(C);
    blk.self_w = make_attention_weights(acfg, rng, /*with_cross=*/false,
                                        cfg.self_variant == SelfVariant::MSSA, cfg.init_stddev);
    blk.ln_cross = make_ln(C);
    blk.cross_w = make_attention_weights(acfg, rng, cfg.cross_variant == CrossVariant::DCA,
                                         /*with_conv=*/false, cfg.init_stddev);
    blk.ln_ffn = make_ln(C);
    blk.ffn = make_ffn(C, cfg.ffn_multiplier, rng, cfg.init_stddev);
    b.blocks.push_back(std::move(blk));
  }
  return b;
}

Tensor apply_ln(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gamma, p.beta);
}

Tensor apply_ffn(const Tensor& x, const FeedForward& f) {
  return affine(gelu(affine(x, f.w1, f.b1)), f.w2, f.b2);
}

void append_ln_params(const LayerNormParams& p, const std::string& prefix,
                      std::vector<NamedParam>& out) {
  out.push_back({prefix + ".gamma", p.gamma});
  out.push_back({prefix + ".beta", p.beta});
}

void append_block_params(const BranchBlock& blk, const std::string& prefix,
                         std::vector<NamedParam>& out) {
  append_ln_params(blk.ln_self, prefix + ".ln_self", out);
  append_attention_params(blk.self_w, prefix + ".self", out);
  append_ln_params(blk.ln_cross, prefix + ".ln_cross", out);
  append_attention_params(blk.cross_w, prefix + ".cross", out);
  append_ln_params(blk.ln_ffn, prefix + ".ln_ffn", out);
  out.push_back({prefix + ".ffn.w1", blk.ffn.w1});
  out.push_back({prefix + ".ffn.b1", blk.ffn.b1});
  out.push_back({prefix + ".ffn.w2", blk.ffn.w2});
  out.push_back({prefix + ".ffn.b2", blk.ffn.b2});
}

}  // namespace

Model::Model(ModelConfig cfg, std::mt19937_64& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::int64_t C = cfg_.C;
  pre_audio_.w = Tensor::randn({cfg_.C_a, C}, rng, cfg_.init_stddev).set_requires_grad();
  pre_audio_.b = Tensor::zeros({C}).set_requires_grad();
  pre_visual_.w = Tensor::randn({cfg_.C_v_feat, C}, rng, cfg_.init_stddev).set_requires_grad();
  pre_visual_.b = Tensor::zeros({C}).set_requires_grad();
  audio_ = make_branch(cfg_, rng);
  visual_ = make_branch(cfg_, rng);
  heads_.w_a = Tensor::randn({C, 2}, rng, cfg_.init_stddev).set_requires_grad();
  heads_.b_a = Tensor::zeros({2}).set_requires_grad();
  heads_.w_v = Tensor::randn({C, 2}, rng, cfg_.init_stddev).set_requires_grad();
  heads_.b_v = Tensor::zeros({2}).set_requires_grad();
  heads_.w_m = Tensor::randn({2 * C, 2}, rng, cfg_.init_stddev).set_requires_grad();
  heads_.b_m = Tensor::zeros({2}).set_requires_grad();
}

Tensor Model::audio_pre_encode(const Tensor& x_a) const {
  if (x_a.ndim() != 3 || x_a.size(1) != cfg_.C_a || x_a.size(2) != cfg_.T) {
    throw std::invalid_argument("audio_pre_encode: expected [B, " + std::to_string(cfg_.C_a) +
                                ", " + std::to_string(cfg_.T) + "], got " +
                                shape_to_string(x_a.shape()));
  }
  return affine(transpose_last2(x_a), pre_audio_.w, pre_audio_.b);
}

Tensor Model::visual_pre_encode(const Tensor& v) const {
  if (v.ndim() != 3 || v.size(1) != cfg_.T || v.size(2) != cfg_.C_v_feat) {
    throw std::invalid_argument("visual_pre_encode: expected [B, " + std::to_string(cfg_.T) +
                                ", " + std::to_string(cfg_.C_v_feat) + "], got " +
                                shape_to_string(v.shape()));
  }
  auto mapped = affine(v, pre_visual_.w, pre_visual_.b);
  return cfg_.visual_activation ? gelu(mapped) : mapped;
}

Tensor Model::run_branch_pre(const Tensor& f, const Branch& branch) const {
  const auto B = f.size(0);
  auto cls = expand(branch.cls, {B, 1, cfg_.C});
  std::vector<Tensor> parts{cls, f};
  return add(concat(parts, 1), branch.pos);
}

std::pair<EncoderOutput, EncoderOutput> Model::encode(const Tensor& f_a, const Tensor& f_v) const {
  const Shape want{f_a.size(0), cfg_.T, cfg_.C};
  if (f_a.ndim() != 3 || f_v.ndim() != 3 || f_a.shape() != want || f_v.shape() != want) {
    throw std::invalid_argument("encode: modalities must share [B, " + std::to_string(cfg_.T) +
                                ", " + std::to_string(cfg_.C) + "], got " +
                                shape_to_string(f_a.shape()) + " and " +
                                shape_to_string(f_v.shape()));
  }
  const auto acfg = cfg_.attention_config();

  Tensor xa = run_branch_pre(f_a, audio_);
  Tensor xv = run_branch_pre(f_v, visual_);

  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const auto& ba = audio_.blocks[i];
    const auto& bv = visual_.blocks[i];

    // Self slot.
    auto self_of = [&](const Tensor& x, const BranchBlock& blk) {
      auto nx = apply_ln(x, blk.ln_self);
      auto out = cfg_.self_variant == SelfVariant::MSSA ? mssa(nx, blk.self_w, acfg)
                                                        : mha_self(nx, blk.self_w, acfg);
      return add(x, out);
    };
    Tensor sa = self_of(xa, ba);
    Tensor sv = self_of(xv, bv);

    // Cross slot: each branch consumes the other branch's post-self state
    // at the same depth, normalized by that branch's own cross norm. For
    // plain cross attention the other branch provides the queries; for the
    // differential form it provides the cross-query stream.
    Tensor na = apply_ln(sa, ba.ln_cross);
    Tensor nv = apply_ln(sv, bv.ln_cross);
    Tensor ca, cv;
    if (cfg_.cross_variant == CrossVariant::DCA) {
      ca = add(sa, dca(na, nv, ba.cross_w, acfg));
      cv = add(sv, dca(nv, na, bv.cross_w, acfg));
    } else {
      ca = add(sa, mha_cross(nv, na, ba.cross_w, acfg));
      cv = add(sv, mha_cross(na, nv, bv.cross_w, acfg));
    }

    // Feed-forward slot.
    xa = add(ca, apply_ffn(apply_ln(ca, ba.ln_ffn), ba.ffn));
    xv = add(cv, apply_ffn(apply_ln(cv, bv.ln_ffn), bv.ffn));
  }
  return {EncoderOutput{xa}, EncoderOutput{xv}};
}

Model::Logits Model::classify(const EncoderOutput& Z_a, const EncoderOutput& Z_v) const {
  const auto B = Z_a.Z.size(0);
  auto cls_of = [&](const Tensor& Z) {
    return reshape(narrow(Z, 1, 0, 1), {B, static_cast<std::int64_t>(cfg_.C)});
  };
  Tensor za = cls_of(Z_a.Z);
  Tensor zv = cls_of(Z_v.Z);
  Logits out;
  out.a = affine(za, heads_.w_a, heads_.b_a);
  out.v = affine(zv, heads_.w_v, heads_.b_v);
  std::vector<Tensor> pair{za, zv};
  out.m = affine(concat(pair, 1), heads_.w_m, heads_.b_m);
  return out;
}

Model::ForwardOutput Model::forward(const Tensor& x_a, const Tensor& v) const {
  ForwardOutput out;
  auto [za, zv] = encode(audio_pre_encode(x_a), visual_pre_encode(v));
  out.Z_a = za;
  out.Z_v = zv;
  out.logits = classify(out.Z_a, out.Z_v);
  return out;
}

std::vector<NamedParam> Model::named_params() const {
  std::vector<NamedParam> out;
  out.push_back({"pre.audio.w", pre_audio_.w});
  out.push_back({"pre.audio.b", pre_audio_.b});
  out.push_back({"pre.visual.w", pre_visual_.w});
  out.push_back({"pre.visual.b", pre_visual_.b});
  out.push_back({"audio.cls", audio_.cls});
  out.push_back({"audio.pos", audio_.pos});
  out.push_back({"visual.cls", visual_.cls});
  out.push_back({"visual.pos", visual_.pos});
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    append_block_params(audio_.blocks[i], p + ".audio", out);
    append_block_params(visual_.blocks[i], p + ".visual", out);
  }
  out.push_back({"heads.audio.w", heads_.w_a});
  out.push_back({"heads.audio.b", heads_.b_a});
  out.push_back({"heads.visual.w", heads_.w_v});
  out.push_back({"heads.visual.b", heads_.b_v});
  out.push_back({"heads.multi.w", heads_.w_m});
  out.push_back({"heads.multi.b", heads_.b_m});
  return out;
}

std::vector<Tensor> Model::params() const {
  std::vector<Tensor> out;
  for (auto& np : named_params()) out.push_back(np.tensor);
  return out;
}

std::int64_t Model::param_count() const {
  std::int64_t n = 0;
  for (auto& np : named_params()) n += np.tensor.numel();
  return n;
}

std::int64_t Model::expected_param_count(const ModelConfig& cfg) {
  const std::int64_t C = cfg.C, T = cfg.T, m = cfg.ffn_multiplier;
  // Pre-encoders.
  std::int64_t n = cfg.C_a * C + C + cfg.C_v_feat * C + C;
  // CLS and positional embeddings, both branches.
  n += 2 * (C + (T + 1) * C);
  // Attention slots: 4 projections (+biases); DCA adds a fifth; MSSA adds
  // the four kernel banks of h/4 channels each.
  std::int64_t self_slot = 4 * C * C + 4 * C;
  if (cfg.self_variant == SelfVariant::MSSA) {
    for (int k : cfg.scales) self_slot += (cfg.h / 4) * static_cast<std::int64_t>(k) * k;
  }
  std::int64_t cross_slot = 4 * C * C + 4 * C;
  if (cfg.cross_variant == CrossVariant::DCA) cross_slot += C * C + C;
  // Per block per branch: three layer norms, the two slots, the FFN.
  const std::int64_t ffn = C * (C * m) + C * m + (C * m) * C + C;
  const std::int64_t block = 3 * (2 * C) + self_slot + cross_slot + ffn;
  n += 2 * cfg.n_blocks * block;
  // Heads: two C->2 maps and one 2C->2 map.
  n += 2 * (C * 2 + 2) + (2 * C * 2 + 2);
  return n;
}

}  // namespace msct
