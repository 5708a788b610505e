#pragma once

// Fixed-length, left-padded context windows cut from an offline dataset.
// Both the policy and the critic consume them.

#include <cstdint>
#include <vector>

#include "dtr/dataset.hpp"
#include "dtr/tensor.hpp"

namespace dtr {

struct WindowBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  Tensor rtg;      // [B, L, 1], scaled
  Tensor states;   // [B, L, state_dim], normalized
  Tensor actions;  // [B, L, action_dim]
  std::vector<std::size_t> timesteps;  // B * L, 0 on padding
  std::vector<std::uint8_t> valid;     // B * L

  bool Valid(std::size_t b, std::size_t i) const { return valid[b * length + i] != 0; }
  std::size_t ValidCount() const;
  // The first `n` positions of every row.
  WindowBatch Prefix(std::size_t n) const;
};

// Window ending at step `end` (inclusive) of trajectory `trajectory`.
struct WindowRef {
  std::size_t trajectory = 0;
  std::size_t end = 0;
};

struct WindowSpec {
  std::size_t length = 20;
  double rtg_scale = 1.0;
  // Timesteps above this are clamped.
  std::size_t max_timestep = 1000;
};

// Rows are right-aligned; positions before the trajectory start are padding.
WindowBatch MakeWindows(const OfflineDataset& dataset, const StateNormalizer& normalizer,
                        const std::vector<WindowRef>& refs, const WindowSpec& spec);

// Everything the critic needs on top of the window itself.
struct CriticBatch {
  WindowBatch window;
  // The window ending one step later; its last position holds the bootstrap
  // state. Rows without a bootstrap repeat `window`.
  WindowBatch next_window;
  std::vector<double> rewards;             // B * L, 0 on padding
  std::vector<std::uint8_t> has_bootstrap;  // B
};

CriticBatch MakeCriticBatch(const OfflineDataset& dataset, const StateNormalizer& normalizer,
                            const std::vector<WindowRef>& refs, const WindowSpec& spec);

// Window ends drawn uniformly over all dataset steps.
std::vector<WindowRef> SampleWindowRefs(const OfflineDataset& dataset, std::size_t count,
                                        Rng& rng);

}  // namespace dtr
