#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "msct/grad_check.hpp"
#include "msct/model.hpp"
#include "msct/ops.hpp"
#include "oracles.hpp"

using msct::EncoderOutput;
using msct::LabelTriple;
using msct::Model;
using msct::ModelConfig;
using msct::Shape;
using msct::Tensor;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.C = 16;
  cfg.h = 4;
  cfg.n_blocks = 2;
  cfg.T = 4;
  cfg.C_a = 6;
  cfg.C_v_feat = 5;
  return cfg;
}

}  // namespace

TEST_CASE("variant parsing round-trips") {
  CHECK(msct::parse_self_variant("sa") == msct::SelfVariant::SA);
  CHECK(msct::parse_self_variant("mssa") == msct::SelfVariant::MSSA);
  CHECK(msct::parse_cross_variant("ca") == msct::CrossVariant::CA);
  CHECK(msct::parse_cross_variant("dca") == msct::CrossVariant::DCA);
  CHECK_THROWS_AS(msct::parse_self_variant("bogus"), std::invalid_argument);
  CHECK(std::string(msct::to_string(msct::SelfVariant::MSSA)) == "mssa");
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.h = 6;  // divides C=16? no
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.h = 2;  // divides C but not 4; MSSA needs h % 4 == 0
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.self_variant = msct::SelfVariant::SA;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("audio pre-encoder") {
  std::mt19937_64 rng(1);

  SUBCASE("zero input maps to zero") {
    Model m(small_config(), rng);
    auto out = m.audio_pre_encode(Tensor::zeros({2, 6, 4}));
    for (double v : out.data()) CHECK(v == 0.0);
  }

  SUBCASE("identity projection transposes the input") {
    auto cfg = small_config();
    cfg.C_a = cfg.C;  // square projection
    Model m(cfg, rng);
    auto& w = m.audio_pre().w.mutable_values();
    std::fill(w.begin(), w.end(), 0.0);
    for (int i = 0; i < cfg.C; ++i) w[i * cfg.C + i] = 1.0;
    Tensor x = Tensor::randn({1, static_cast<std::int64_t>(cfg.C), 4}, rng);
    auto out = m.audio_pre_encode(x);
    for (int t = 0; t < 4; ++t)
      for (int c = 0; c < cfg.C; ++c) CHECK(out.at({0, t, c}) == x.at({0, c, t}));
  }

  SUBCASE("paper-scale shape") {
    auto cfg = small_config();
    cfg.C_a = 104;
    cfg.T = 8;
    Model m(cfg, rng);
    auto out = m.audio_pre_encode(Tensor::zeros({2, 104, 8}));
    CHECK(out.shape() == Shape{2, 8, 16});
  }

  SUBCASE("channel mismatch is rejected") {
    Model m(small_config(), rng);
    CHECK_THROWS_AS(m.audio_pre_encode(Tensor::zeros({2, 7, 4})), std::invalid_argument);
  }
}

TEST_CASE("visual pre-encoder") {
  std::mt19937_64 rng(2);

  SUBCASE("zero input maps to zero and shape is right") {
    Model m(small_config(), rng);
    auto out = m.visual_pre_encode(Tensor::zeros({1, 4, 5}));
    CHECK(out.shape() == Shape{1, 4, 16});
    for (double v : out.data()) CHECK(v == 0.0);
  }

  SUBCASE("disabling the activation leaves the affine map") {
    std::mt19937_64 rng_a(7), rng_b(7);
    auto cfg = small_config();
    Model with_act(cfg, rng_a);
    cfg.visual_activation = false;
    Model without_act(cfg, rng_b);  // same seed, same weights
    Tensor v = Tensor::randn({2, 4, 5}, rng);
    auto plain = msct::affine(v, with_act.visual_pre().w, with_act.visual_pre().b);
    CHECK(oracles::max_abs_diff(without_act.visual_pre_encode(v), plain) == 0.0);
    CHECK(oracles::max_abs_diff(with_act.visual_pre_encode(v), msct::gelu(plain)) == 0.0);
  }
}

TEST_CASE("encode with an empty stack returns the embedded inputs") {
  std::mt19937_64 rng(3);
  auto cfg = small_config();
  cfg.n_blocks = 0;
  Model m(cfg, rng);
  Tensor fa = Tensor::randn({2, 4, 16}, rng);
  Tensor fv = Tensor::randn({2, 4, 16}, rng);
  auto [Za, Zv] = m.encode(fa, fv);
  REQUIRE(Za.Z.shape() == Shape{2, 5, 16});

  // Expected: CLS prepended, positions added.
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 16; ++c) {
      CHECK(Za.Z.at({b, 0, c}) ==
            doctest::Approx(m.audio_branch().cls.at({0, 0, c}) + m.audio_branch().pos.at({0, 0, c}))
                .epsilon(1e-15));
      for (int t = 0; t < 4; ++t) {
        CHECK(Za.Z.at({b, t + 1, c}) ==
              doctest::Approx(fa.at({b, t, c}) + m.audio_branch().pos.at({0, t + 1, c}))
                  .epsilon(1e-15));
      }
    }
  }
  CHECK(Zv.Z.shape() == Shape{2, 5, 16});
}

TEST_CASE("zeroed residual branches pass the block input through") {
  std::mt19937_64 rng(4);
  auto cfg = small_config();
  cfg.n_blocks = 1;
  Model m(cfg, rng);
  // Zero every slot weight; layer norms and embeddings stay.
  for (auto& np : m.named_params()) {
    const bool slot = np.name.find(".self.") != std::string::npos ||
                      np.name.find(".cross.") != std::string::npos ||
                      np.name.find(".ffn.") != std::string::npos;
    const bool kernel = np.name.find("conv_kernels") != std::string::npos;
    if (slot && !kernel) {
      auto& vals = np.tensor.mutable_values();
      std::fill(vals.begin(), vals.end(), 0.0);
    }
  }
  Tensor fa = Tensor::randn({2, 4, 16}, rng);
  Tensor fv = Tensor::randn({2, 4, 16}, rng);
  auto [Za, Zv] = m.encode(fa, fv);

  // Expected: exactly the block-0 input (CLS prepended, positions added).
  auto check_branch = [&](const Tensor& Z, const Tensor& f, const msct::Branch& branch) {
    for (int b = 0; b < 2; ++b) {
      for (int c = 0; c < 16; ++c) {
        CHECK(Z.at({b, 0, c}) ==
              doctest::Approx(branch.cls.at({0, 0, c}) + branch.pos.at({0, 0, c})).epsilon(1e-14));
        for (int t = 0; t < 4; ++t)
          CHECK(Z.at({b, t + 1, c}) ==
                doctest::Approx(f.at({b, t, c}) + branch.pos.at({0, t + 1, c})).epsilon(1e-14));
      }
    }
  };
  check_branch(Za.Z, fa, m.audio_branch());
  check_branch(Zv.Z, fv, m.visual_branch());
}

TEST_CASE("encoder output shapes at the desk configuration") {
  std::mt19937_64 rng(5);
  auto cfg = small_config();
  cfg.T = 8;
  Model m(cfg, rng);
  auto [Za, Zv] = m.encode(Tensor::zeros({2, 8, 16}), Tensor::zeros({2, 8, 16}));
  CHECK(Za.Z.shape() == Shape{2, 9, 16});
  CHECK(Zv.Z.shape() == Shape{2, 9, 16});
}

TEST_CASE("encode rejects mismatched modalities") {
  std::mt19937_64 rng(6);
  Model m(small_config(), rng);
  CHECK_THROWS_AS(m.encode(Tensor::zeros({2, 4, 16}), Tensor::zeros({2, 5, 16})),
                  std::invalid_argument);
  CHECK_THROWS_AS(m.encode(Tensor::zeros({2, 4, 16}), Tensor::zeros({2, 4, 8})),
                  std::invalid_argument);
}

TEST_CASE("classification heads") {
  std::mt19937_64 rng(7);
  Model m(small_config(), rng);

  SUBCASE("zero CLS and zero biases give zero logits") {
    EncoderOutput Z{Tensor::zeros({4, 5, 16})};
    auto logits = m.classify(Z, Z);
    CHECK(logits.a.shape() == Shape{4, 2});
    CHECK(logits.v.shape() == Shape{4, 2});
    CHECK(logits.m.shape() == Shape{4, 2});
    for (double v : logits.m.data()) CHECK(v == 0.0);
  }

  SUBCASE("heads are linear in the CLS embedding") {
    Tensor Z = Tensor::randn({4, 5, 16}, rng);
    EncoderOutput one{Z}, two{msct::scale(Z, 2.0)};
    auto l1 = m.classify(one, one);
    auto l2 = m.classify(two, two);
    for (std::int64_t i = 0; i < l1.m.numel(); ++i)
      CHECK(l2.m.data()[i] == doctest::Approx(2.0 * l1.m.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("parameter count matches the documented formula") {
  std::mt19937_64 rng(8);
  for (auto self : {msct::SelfVariant::SA, msct::SelfVariant::MSSA}) {
    for (auto cross : {msct::CrossVariant::CA, msct::CrossVariant::DCA}) {
      auto cfg = small_config();
      cfg.self_variant = self;
      cfg.cross_variant = cross;
      cfg.n_blocks = 3;
      Model m(cfg, rng);
      CHECK(m.param_count() == Model::expected_param_count(cfg));
    }
  }
  // A second width/depth to exercise the formula's terms.
  auto cfg = small_config();
  cfg.C = 8;
  cfg.h = 4;
  cfg.T = 3;
  cfg.ffn_multiplier = 2;
  cfg.n_blocks = 1;
  Model m(cfg, rng);
  CHECK(m.param_count() == Model::expected_param_count(cfg));
}

TEST_CASE("parameter names are unique and stable") {
  std::mt19937_64 rng(9);
  Model m(small_config(), rng);
  auto params = m.named_params();
  std::set<std::string> names;
  for (auto& np : params) names.insert(np.name);
  CHECK(names.size() == params.size());
  CHECK(names.count("pre.audio.w") == 1);
  CHECK(names.count("blocks.0.audio.self.w_q") == 1);
  CHECK(names.count("blocks.1.visual.cross.w_q_cross") == 1);
  CHECK(names.count("blocks.0.visual.self.conv_kernels.3") == 1);
  CHECK(names.count("heads.multi.w") == 1);
}

TEST_CASE("forward produces finite logits across seeds") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    Model m(small_config(), rng);
    Tensor xa = Tensor::randn({2, 6, 4}, rng);
    Tensor v = Tensor::randn({2, 4, 5}, rng);
    auto out = m.forward(xa, v);
    CHECK(msct::all_finite(out.logits.a.data()));
    CHECK(msct::all_finite(out.logits.v.data()));
    CHECK(msct::all_finite(out.logits.m.data()));
    CHECK(msct::all_finite(out.Z_a.Z.data()));
  }
}

TEST_CASE("branches are architecturally symmetric") {
  std::mt19937_64 rng1(10), rng2(10);
  auto cfg = small_config();
  Model m1(cfg, rng1);
  Model m2(cfg, rng2);
  // Swap m2's branch parameters so its audio branch carries m1's visual
  // weights and vice versa (handles share storage with m1's tensors).
  m2.audio_branch() = m1.visual_branch();
  m2.visual_branch() = m1.audio_branch();

  Tensor fa = Tensor::randn({2, 4, 16}, rng1);
  Tensor fv = Tensor::randn({2, 4, 16}, rng1);
  auto [Za1, Zv1] = m1.encode(fa, fv);
  auto [Za2, Zv2] = m2.encode(fv, fa);
  CHECK(oracles::max_abs_diff(Za2.Z, Zv1.Z) == 0.0);
  CHECK(oracles::max_abs_diff(Zv2.Z, Za1.Z) == 0.0);
}

TEST_CASE("full model gradient check through the combined objective") {
  std::mt19937_64 rng(11);
  Model m(small_config(), rng);
  Tensor xa = Tensor::randn({2, 6, 4}, rng);
  Tensor v = Tensor::randn({2, 4, 5}, rng);
  std::vector<LabelTriple> labels{{1, 1, 1}, {0, 1, 0}};

  auto f = [&] {
    auto out = m.forward(xa, v);
    return msct::total_loss(out.logits.a, out.logits.v, out.logits.m, out.Z_a.Z, out.Z_v.Z,
                            labels, m.config().loss);
  };
  auto report = msct::grad_check(f, m.named_params());
  INFO("worst " << report.worst_param << " rel err " << report.max_rel_err);
  CHECK(report.passes(1e-4));
}
