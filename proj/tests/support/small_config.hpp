#pragma once

#include "twm/train/config.hpp"

namespace twm::testing {

/// A run small enough for unit tests: 16x16 MiniPong, tiny networks.
inline TrainConfig small_config() {
  TrainConfig c;
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"raw_size", "32"},      {"frame_size", "16"},     {"env_steps", "160"},   {"prefill_steps", "64"},
           {"pretrain_steps", "2"}, {"train_every", "16"},    {"eval_episodes", "0"}, {"log_every", "1"},
           {"tau", "1"},            {"batch_size", "4"},      {"seq_len", "4"},       {"imag_batch", "8"},
           {"horizon", "3"},        {"latent_vars", "4"},     {"latent_classes", "4"}, {"enc_channels", "4"},
           {"enc_stages", "2"},     {"xl_layers", "1"},       {"xl_dim", "16"},       {"xl_heads", "2"},
           {"xl_head_dim", "8"},    {"xl_ff", "32"},          {"latent_units", "16"}, {"latent_layers", "1"},
           {"reward_units", "16"},  {"reward_layers", "1"},   {"discount_units", "16"}, {"discount_layers", "1"},
           {"actor_units", "16"},   {"actor_layers", "1"},    {"critic_units", "16"}, {"critic_layers", "1"},
           {"alpha1", "0.03"},      {"lr_obs", "1e-3"},       {"lr_dyn", "1e-3"}})
    c.set(k, v);
  c.validate();
  return c;
}

}  // namespace twm::testing
