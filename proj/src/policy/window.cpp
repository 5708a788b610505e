#include "dtr/window.hpp"

#include <algorithm>

#include "dtr/errors.hpp"

namespace dtr {

std::size_t WindowBatch::ValidCount() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

WindowBatch WindowBatch::Prefix(std::size_t n) const {
  if (n == 0 || n > length) throw InvalidArgument("window prefix out of range");
  if (n == length) return *this;
  WindowBatch out = *this;
  out.length = n;
  out.rtg = Slice(rtg, 1, 0, n);
  out.states = Slice(states, 1, 0, n);
  out.actions = Slice(actions, 1, 0, n);
  out.timesteps.clear();
  out.valid.clear();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      out.timesteps.push_back(timesteps[b * length + i]);
      out.valid.push_back(valid[b * length + i]);
    }
  }
  return out;
}

WindowBatch MakeWindows(const OfflineDataset& dataset, const StateNormalizer& normalizer,
                        const std::vector<WindowRef>& refs, const WindowSpec& spec) {
  if (refs.empty()) throw InvalidArgument("no windows requested");
  if (spec.length == 0) throw InvalidArgument("window length must be positive");
  if (spec.rtg_scale <= 0.0) throw InvalidArgument("rtg scale must be positive");
  WindowBatch w;
  w.batch = refs.size();
  w.length = spec.length;
  w.state_dim = dataset.at(0).states[0].size();
  w.action_dim = dataset.at(0).actions[0].size();
  std::size_t L = spec.length;
  std::vector<double> rtg(w.batch * L, 0.0);
  std::vector<double> states(w.batch * L * w.state_dim, 0.0);
  std::vector<double> actions(w.batch * L * w.action_dim, 0.0);
  w.timesteps.assign(w.batch * L, 0);
  w.valid.assign(w.batch * L, 0);
  for (std::size_t b = 0; b < refs.size(); ++b) {
    const Trajectory& t = dataset.at(refs[b].trajectory);
    std::size_t end = refs[b].end;
    if (end >= t.size()) throw InvalidArgument("window end lies past the trajectory");
    for (std::size_t i = 0; i < L; ++i) {
      // Position i holds step end - (L - 1 - i).
      std::size_t back = L - 1 - i;
      if (back > end) continue;
      std::size_t step = end - back;
      std::size_t row = b * L + i;
      rtg[row] = t.rtg[step] / spec.rtg_scale;
      auto s = normalizer.Apply(t.states[step]);
      std::copy(s.begin(), s.end(), states.begin() + row * w.state_dim);
      std::copy(t.actions[step].begin(), t.actions[step].end(),
                actions.begin() + row * w.action_dim);
      w.timesteps[row] = std::min(step, spec.max_timestep);
      w.valid[row] = 1;
    }
  }
  w.rtg = Tensor::FromVector({w.batch, L, 1}, std::move(rtg));
  w.states = Tensor::FromVector({w.batch, L, w.state_dim}, std::move(states));
  w.actions = Tensor::FromVector({w.batch, L, w.action_dim}, std::move(actions));
  return w;
}

CriticBatch MakeCriticBatch(const OfflineDataset& dataset, const StateNormalizer& normalizer,
                            const std::vector<WindowRef>& refs, const WindowSpec& spec) {
  CriticBatch c;
  c.window = MakeWindows(dataset, normalizer, refs, spec);
  std::vector<WindowRef> next = refs;
  std::size_t L = spec.length;
  c.rewards.assign(refs.size() * L, 0.0);
  c.has_bootstrap.assign(refs.size(), 0);
  for (std::size_t b = 0; b < refs.size(); ++b) {
    const Trajectory& t = dataset.at(refs[b].trajectory);
    if (refs[b].end + 1 < t.size()) {
      c.has_bootstrap[b] = 1;
      next[b].end = refs[b].end + 1;
    }
    for (std::size_t i = 0; i < L; ++i) {
      if (!c.window.Valid(b, i)) continue;
      c.rewards[b * L + i] = t.rewards[refs[b].end - (L - 1 - i)];
    }
  }
  c.next_window = MakeWindows(dataset, normalizer, next, spec);
  return c;
}

std::vector<WindowRef> SampleWindowRefs(const OfflineDataset& dataset, std::size_t count,
                                        Rng& rng) {
  std::size_t total = dataset.num_steps();
  if (total == 0) throw InvalidArgument("cannot sample windows from an empty dataset");
  std::vector<std::size_t> offsets;
  std::size_t running = 0;
  for (const auto& t : dataset.trajectories()) {
    offsets.push_back(running);
    running += t.size();
  }
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<WindowRef> refs;
  refs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t flat = pick(rng);
    std::size_t traj =
        static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) -
                                 offsets.begin()) - 1;
    refs.push_back({traj, flat - offsets[traj]});
  }
  return refs;
}

}  // namespace dtr
