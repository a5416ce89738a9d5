#pragma once

// Internal JSON (de)serialization helpers shared by checkpoints and run
// configs. Unknown keys are rejected so config typos fail loudly instead of
// silently falling back to defaults.

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "msct/model.hpp"

namespace msct::detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) throw std::invalid_argument("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

inline nlohmann::json loss_weights_json(const LossWeights& w) {
  return nlohmann::json{{"ce_a", w.ce_a},
                        {"ce_v", w.ce_v},
                        {"ce_av", w.ce_av},
                        {"c", w.c},
                        {"align_label_both_real", w.align_label_both_real}};
}

inline void apply_loss_weights(const nlohmann::json& j, LossWeights& w) {
  check_keys(j, {"ce_a", "ce_v", "ce_av", "c", "align_label_both_real"}, "loss");
  get_if_present(j, "ce_a", w.ce_a);
  get_if_present(j, "ce_v", w.ce_v);
  get_if_present(j, "ce_av", w.ce_av);
  get_if_present(j, "c", w.c);
  get_if_present(j, "align_label_both_real", w.align_label_both_real);
}

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
  return nlohmann::json{{"C", cfg.C},
                        {"n_blocks", cfg.n_blocks},
                        {"h", cfg.h},
                        {"T", cfg.T},
                        {"C_a", cfg.C_a},
                        {"C_v_feat", cfg.C_v_feat},
                        {"self", to_string(cfg.self_variant)},
                        {"cross", to_string(cfg.cross_variant)},
                        {"ffn_multiplier", cfg.ffn_multiplier},
                        {"scales", cfg.scales},
                        {"init_stddev", cfg.init_stddev},
                        {"visual_activation", cfg.visual_activation},
                        {"loss", loss_weights_json(cfg.loss)}};
}

inline void apply_model_config(const nlohmann::json& j, ModelConfig& cfg) {
  check_keys(j,
             {"C", "n_blocks", "h", "T", "C_a", "C_v_feat", "self", "cross", "ffn_multiplier",
              "scales", "init_stddev", "visual_activation", "loss"},
             "model config");
  get_if_present(j, "C", cfg.C);
  get_if_present(j, "n_blocks", cfg.n_blocks);
  get_if_present(j, "h", cfg.h);
  get_if_present(j, "T", cfg.T);
  get_if_present(j, "C_a", cfg.C_a);
  get_if_present(j, "C_v_feat", cfg.C_v_feat);
  if (auto it = j.find("self"); it != j.end()) {
    cfg.self_variant = parse_self_variant(it->get<std::string>());
  }
  if (auto it = j.find("cross"); it != j.end()) {
    cfg.cross_variant = parse_cross_variant(it->get<std::string>());
  }
  get_if_present(j, "ffn_multiplier", cfg.ffn_multiplier);
  get_if_present(j, "scales", cfg.scales);
  get_if_present(j, "init_stddev", cfg.init_stddev);
  get_if_present(j, "visual_activation", cfg.visual_activation);
  if (auto it = j.find("loss"); it != j.end()) apply_loss_weights(*it, cfg.loss);
}

}  // namespace msct::detail
