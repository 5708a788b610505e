#include "dtr/inference.hpp"

#include <cmath>

#include "dtr/errors.hpp"

namespace dtr {

std::vector<double> InitialRtgTargets(double return_max, const std::vector<double>& multipliers) {
  if (!(return_max > 0.0)) {
    throw InvalidArgument("initial return-to-go targets need return_max > 0, got " +
                          std::to_string(return_max));
  }
  if (multipliers.empty()) throw InvalidArgument("at least one return-to-go target is needed");
  std::vector<double> out;
  for (double m : multipliers) out.push_back(m * return_max);
  return out;
}

std::size_t ArgmaxLowest(const std::vector<double>& values) {
  if (values.empty()) throw InvalidArgument("argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

InferenceState::InferenceState(std::vector<double> targets, std::size_t context,
                               std::size_t max_timestep, double rtg_scale, std::size_t state_dim,
                               std::size_t action_dim)
    : initial_(std::move(targets)),
      current_(initial_),
      context_(context),
      max_timestep_(max_timestep),
      rtg_scale_(rtg_scale),
      state_dim_(state_dim),
      action_dim_(action_dim) {
  if (initial_.empty()) throw InvalidArgument("inference needs at least one track");
  if (context_ == 0 || max_timestep_ == 0) throw InvalidArgument("context and horizon must be positive");
  if (!(rtg_scale_ > 0.0)) throw InvalidArgument("rtg scale must be positive");
}

void InferenceState::Observe(std::vector<double> state) {
  if (state.size() != state_dim_) throw ShapeError("observed state has the wrong size");
  if (states_.size() != actions_.size()) throw InvalidArgument("previous state has no action yet");
  states_.push_back(std::move(state));
  rtg_.push_back(current_);
}

WindowBatch InferenceState::Window() const {
  if (states_.empty()) throw InvalidArgument("no state observed yet");
  std::size_t K = tracks(), L = context_;
  std::size_t steps = states_.size();
  WindowBatch w;
  w.batch = K;
  w.length = L;
  w.state_dim = state_dim_;
  w.action_dim = action_dim_;
  std::vector<double> rtg(K * L, 0.0), s(K * L * state_dim_, 0.0), a(K * L * action_dim_, 0.0);
  w.timesteps.assign(K * L, 0);
  w.valid.assign(K * L, 0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < L; ++i) {
      std::size_t back = L - 1 - i;
      if (back >= steps) continue;
      std::size_t j = steps - 1 - back;
      std::size_t row = k * L + i;
      rtg[row] = rtg_[j][k] / rtg_scale_;
      std::copy(states_[j].begin(), states_[j].end(), s.begin() + row * state_dim_);
      if (j < actions_.size()) {
        std::copy(actions_[j].begin(), actions_[j].end(), a.begin() + row * action_dim_);
      }
      w.timesteps[row] = std::min(j, max_timestep_);
      w.valid[row] = 1;
    }
  }
  w.rtg = Tensor::FromVector({K, L, 1}, std::move(rtg));
  w.states = Tensor::FromVector({K, L, state_dim_}, std::move(s));
  w.actions = Tensor::FromVector({K, L, action_dim_}, std::move(a));
  return w;
}

void InferenceState::Act(std::vector<double> action) {
  if (action.size() != action_dim_) throw ShapeError("executed action has the wrong size");
  if (actions_.size() + 1 != states_.size()) throw InvalidArgument("act needs a fresh state");
  actions_.push_back(std::move(action));
  ++timestep_;
}

void InferenceState::StepFixed() {
  if (timestep_ > max_timestep_) throw InvalidArgument("return-to-go updated past max_timestep");
  for (std::size_t k = 0; k < current_.size(); ++k) {
    current_[k] -= initial_[k] / static_cast<double>(max_timestep_);
  }
}

void InferenceState::StepReward(double reward) {
  for (double& r : current_) r -= reward;
}

Selection SelectAction(const DtPolicy& policy, const TwinCritic& critic,
                       const InferenceState& state, PolicyQ policy_q) {
  NoGradScope no_grad;
  WindowBatch w = state.Window();
  DtOutput out = policy.Forward(w, nullptr, false);
  std::size_t K = w.batch, L = w.length, ad = w.action_dim, sd = w.state_dim;
  Tensor actions = Reshape(Slice(out.actions, 1, L - 1, L), {K, ad});
  Tensor states = Reshape(Slice(w.states, 1, L - 1, L), {K, sd});
  Tensor q = critic.Q(0, states, actions);
  if (policy_q == PolicyQ::kMin) q = Minimum(q, critic.Q(1, states, actions));
  Selection sel;
  sel.q = q.values();
  for (std::size_t k = 0; k < K; ++k) {
    sel.candidates.emplace_back(actions.data().begin() + k * ad,
                                actions.data().begin() + (k + 1) * ad);
  }
  sel.track = ArgmaxLowest(sel.q);
  sel.action = sel.candidates[sel.track];
  return sel;
}

nlohmann::json EvalReport::ToJson() const {
  return {{"episodes", returns.size()}, {"returns", returns}, {"mean", mean}, {"std", std}};
}

EvalReport Evaluate(const DtPolicy& policy, const TwinCritic& critic, const TabularMdp& mdp,
                    const ContinuousWrapper& wrapper, const StateNormalizer& normalizer,
                    const EvalOptions& options, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw InvalidArgument("evaluation needs at least one episode");
  if (options.update == RtgUpdate::kLearnedReward && options.reward == nullptr) {
    throw InvalidArgument("learned-reward return-to-go updates need a reward ensemble");
  }
  std::size_t horizon = static_cast<std::size_t>(mdp.horizon);
  std::size_t max_timestep = options.max_timestep ? options.max_timestep : horizon;
  if (policy.config().max_timestep + 1 < max_timestep) {
    throw InvalidArgument("policy timestep embedding is shorter than the evaluation horizon");
  }
  std::vector<double> targets = InitialRtgTargets(options.return_max, options.multipliers);
  EvalReport report;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng(DeriveSeed(seed, e));
    int s = options.start.value_or(-1);
    if (s < 0) {
      std::uniform_int_distribution<std::size_t> pick(0, mdp.initial_states.size() - 1);
      s = mdp.initial_states[pick(rng)];
    }
    InferenceState state(targets, policy.config().context, max_timestep, options.rtg_scale,
                         wrapper.state_dim(), wrapper.action_dim());
    std::vector<int> path{s};
    double total = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      std::vector<double> x = wrapper.EncodeState(s, rng);
      state.Observe(normalizer.Apply(x));
      Selection sel = SelectAction(policy, critic, state, options.policy_q);
      int a = wrapper.DecodeAction(sel.action);
      total += mdp.reward[s][a];
      std::vector<double> executed = wrapper.EncodeAction(a);
      state.Act(executed);
      if (options.update == RtgUpdate::kFixedDecrement) {
        if (t < max_timestep) state.StepFixed();
      } else {
        state.StepReward(options.reward->NormalizedReward(x, executed));
      }
      int n = mdp.Next(s, a);
      bool ended = mdp.Ends(s, a);
      if (n != kTerminal) path.push_back(n);
      if (ended) break;
      s = n;
    }
    report.returns.push_back(total);
    report.paths.push_back(std::move(path));
  }
  double n = static_cast<double>(episodes);
  for (double r : report.returns) report.mean += r / n;
  for (double r : report.returns) report.std += (r - report.mean) * (r - report.mean) / n;
  report.std = std::sqrt(report.std);
  return report;
}

}  // namespace dtr
