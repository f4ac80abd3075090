#pragma once

#include "gf3d/train/config.h"

namespace gf3d::testing {

// Smallest end-to-end model: 32-point scenes, K=2, M=8, C=8, H=2, L=2.
inline RunConfig toy_run() {
  RunConfig c;
  c.set("epochs", "2");
  c.set("gen.points", "32");
  c.set("gen.min_boxes", "1");
  c.set("gen.max_boxes", "1");
  c.set("backbone.stage_points", "16,8,6,4");
  c.set("backbone.up_points", "6,8");
  c.set("backbone.stage_radii", "0.3,0.5,0.8,1.2");
  c.set("backbone.neighbors", "4");
  c.set("backbone.width", "8");
  c.set("decoder.heads", "2");
  c.set("decoder.layers", "2");
  c.set("decoder.ffn_multiplier", "2");
  c.set("sampling.candidates", "2");
  c.set("data.train_scenes", "2");
  c.set("data.val_scenes", "1");
  c.finalize();
  return c;
}

}  // namespace gf3d::testing
