#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "msct/attention.hpp"
#include "msct/objectives.hpp"
#include "msct/tensor.hpp"

namespace msct {

enum class SelfVariant { SA, MSSA };
enum class CrossVariant { CA, DCA };

const char* to_string(SelfVariant v);
const char* to_string(CrossVariant v);
SelfVariant parse_self_variant(const std::string& s);
CrossVariant parse_cross_variant(const std::string& s);

struct ModelConfig {
  int C = 64;        // model width
  int n_blocks = 6;  // transformer depth; 0 is allowed and means "embeddings only"
  int h = 8;         // attention heads
  int T = 8;         // frames per clip
  int C_a = 104;     // audio input channels
  int C_v_feat = 32; // visual per-frame feature width
  SelfVariant self_variant = SelfVariant::MSSA;
  CrossVariant cross_variant = CrossVariant::DCA;
  int ffn_multiplier = 4;
  std::vector<int> scales{1, 3, 5, 7};  // MSSA kernel sizes
  double init_stddev = 0.02;
  bool visual_activation = true;  // disable to reduce the visual pre-encoder to its affine map
  LossWeights loss;

  int num_classes() const { return 2; }
  AttentionConfig attention_config() const;
  void validate() const;
};

/// Per-modality encoder state; Z is [B, T+1, C] with row 0 the CLS slot.
struct EncoderOutput {
  Tensor Z;
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct FeedForward {
  Tensor w1, b1, w2, b2;
};

/// One transformer block of one branch: pre-norm self slot, pre-norm cross
/// slot, pre-norm feed-forward, each with a residual connection.
struct BranchBlock {
  LayerNormParams ln_self;
  AttentionWeights self_w;
  LayerNormParams ln_cross;
  AttentionWeights cross_w;
  LayerNormParams ln_ffn;
  FeedForward ffn;
};

struct Branch {
  Tensor cls;  // [1, 1, C]
  Tensor pos;  // [1, T+1, C]
  std::vector<BranchBlock> blocks;
};

struct PreEncoder {
  Tensor w, b;
};

struct Heads {
  Tensor w_a, b_a;  // [C, 2]
  Tensor w_v, b_v;  // [C, 2]
  Tensor w_m, b_m;  // [2C, 2]
};

class Model {
 public:
  Model(ModelConfig cfg, std::mt19937_64& rng);

  const ModelConfig& config() const { return cfg_; }

  /// [B, C_a, T] -> [B, T, C]: transpose then per-frame affine map.
  Tensor audio_pre_encode(const Tensor& x_a) const;
  /// [B, T, C_v_feat] -> [B, T, C]: per-frame affine map plus GELU (the
  /// activation is dropped when the config disables it).
  Tensor visual_pre_encode(const Tensor& v) const;

  /// Runs both branches in lockstep over pre-encoded [B, T, C] inputs.
  std::pair<EncoderOutput, EncoderOutput> encode(const Tensor& f_a, const Tensor& f_v) const;

  struct Logits {
    Tensor a, v, m;  // each [B, 2]
  };
  Logits classify(const EncoderOutput& Z_a, const EncoderOutput& Z_v) const;

  struct ForwardOutput {
    EncoderOutput Z_a, Z_v;
    Logits logits;
  };
  /// Full pipeline from raw [B, C_a, T] audio and [B, T, C_v_feat] visual
  /// features to encoder outputs and the three heads.
  ForwardOutput forward(const Tensor& x_a, const Tensor& v) const;

  /// All parameters in a fixed canonical order under stable path names
  /// ("pre.audio.w", "blocks.0.audio.self.w_q", "heads.multi.b", ...).
  std::vector<NamedParam> named_params() const;
  std::vector<Tensor> params() const;
  std::int64_t param_count() const;

  /// Closed-form parameter count for a config; must equal param_count().
  static std::int64_t expected_param_count(const ModelConfig& cfg);

  // Mutable access for checkpoint loading.
  PreEncoder& audio_pre() { return pre_audio_; }
  PreEncoder& visual_pre() { return pre_visual_; }
  Branch& audio_branch() { return audio_; }
  Branch& visual_branch() { return visual_; }
  Heads& heads() { return heads_; }

 private:
  Tensor run_branch_pre(const Tensor& f, const Branch& branch) const;

  ModelConfig cfg_;
  PreEncoder pre_audio_, pre_visual_;
  Branch audio_, visual_;
  Heads heads_;
};

}  // namespace msct
