#pragma once

#include "exsr/config.hpp"

namespace exsr::testing {

/// Narrow model for fast tests: every width is a handful of channels.
inline ModelConfig tiny_config(int k = 3, int lr_size = 4, int m1 = 2, FusionMode fusion = FusionMode::kPWAve) {
  ModelConfig c;
  c.arch.scale_factor = 1 << m1;
  c.arch.m1 = m1;
  c.arch.m2 = 1;
  c.arch.k = k;
  c.arch.lr_height = c.arch.lr_width = lr_size;
  c.arch.encoder_channels = 4;
  c.arch.trunk_channels = 8;
  c.arch.min_trunk_channels = 4;
  c.arch.wnn_hidden = 4;
  c.arch.gs_channels = 4;
  c.arch.critic_channels = 4;
  c.arch.critic_max_channels = 8;
  c.arch.fusion = fusion;
  c.train.batch_size = 2;
  c.train.steps = 4;
  c.train.checkpoint_every = 0;
  c.train.out_dir = "";
  c.loss.phi_p = "flatten";
  c.loss.phi_id = "none";
  return c;
}

}  // namespace exsr::testing
