#pragma once

// Procedural face-like clips for desk-scale runs: a shaded head ellipse with
// eyes and mouth drifting over a gradient background.

#include <cstdint>
#include <vector>

#include "vfe/types.hpp"

namespace vfe {

struct SynthOptions {
  int64_t frames = 8;
  int64_t size = 64;
  double max_shift = 0.08;  // drift amplitude, fraction of the frame
  bool static_scene = false;
};

VideoTensor synth_clip(uint64_t seed, const SynthOptions& options = {});
std::vector<VideoTensor> synth_corpus(int64_t count, uint64_t seed, const SynthOptions& options = {});

// Every frame is the same colour.
VideoTensor constant_clip(int64_t frames, int64_t height, int64_t width, float r, float g, float b);

}  // namespace vfe
