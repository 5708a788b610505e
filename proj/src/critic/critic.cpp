#include "dtr/critic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "dtr/checkpoint.hpp"
#include "dtr/errors.hpp"
#include "dtr/optim.hpp"

namespace dtr {

void CriticConfig::Validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in (0, 1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("tau must lie in [0, 1]");
  if (hidden_dim == 0) throw InvalidArgument("critic width must be positive");
}

TwinCritic::TwinCritic(std::size_t state_dim, std::size_t action_dim, const CriticConfig& config,
                       Rng& rng)
    : config_((config.Validate(), config)), state_dim_(state_dim), action_dim_(action_dim) {
  MlpConfig mlp{state_dim + action_dim, config.hidden_dim, config.hidden_layers, 1,
                Activation::kRelu, Activation::kNone};
  for (int k = 0; k < 2; ++k) online_.emplace_back(mlp, rng);
  for (int k = 0; k < 2; ++k) target_.emplace_back(mlp, rng);
  SyncTargets();
}

Tensor TwinCritic::Evaluate(const Mlp& net, const Tensor& states, const Tensor& actions) const {
  return net.Forward(Concat({states, actions}, states.rank() - 1));
}

Tensor TwinCritic::Q(std::size_t twin, const Tensor& states, const Tensor& actions) const {
  return Evaluate(online_.at(twin), states, actions);
}

Tensor TwinCritic::TargetQ(std::size_t twin, const Tensor& states, const Tensor& actions) const {
  return Evaluate(target_.at(twin), states, actions);
}

Tensor TwinCritic::MinTargetQ(const Tensor& states, const Tensor& actions) const {
  NoGradScope no_grad;
  return Minimum(TargetQ(0, states, actions), TargetQ(1, states, actions));
}

void TwinCritic::EmaUpdate(double tau) {
  ParameterList target = TargetParameters();
  BlendParameters(Parameters(), target, tau);
}

void TwinCritic::SyncTargets() {
  ParameterList target = TargetParameters();
  CopyParameters(Parameters(), target);
}

ParameterList TwinCritic::Parameters() const {
  ParameterList out = online_[0].Parameters("q1.");
  auto second = online_[1].Parameters("q2.");
  out.insert(out.end(), second.begin(), second.end());
  return out;
}

ParameterList TwinCritic::TargetParameters() const {
  ParameterList out = target_[0].Parameters("q1.");
  auto second = target_[1].Parameters("q2.");
  out.insert(out.end(), second.begin(), second.end());
  return out;
}

ParameterList TwinCritic::AllParameters() const {
  ParameterList out = Parameters();
  for (auto& p : TargetParameters()) out.push_back({"target." + p.name, p.tensor});
  return out;
}

double NStepTarget(const std::vector<double>& rewards, double bootstrap, double gamma,
                   bool use_bootstrap) {
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  if (use_bootstrap) total += discount * bootstrap;
  return total;
}

std::vector<double> WindowTargets(const CriticBatch& batch, const std::vector<double>& bootstrap,
                                  double gamma) {
  const WindowBatch& w = batch.window;
  std::size_t L = w.length;
  std::vector<double> out(w.batch * L, 0.0);
  for (std::size_t b = 0; b < w.batch; ++b) {
    // Backward recursion: G_i = r_i + gamma * G_{i+1}, G_L = bootstrap.
    double running = batch.has_bootstrap[b] ? bootstrap[b] : 0.0;
    for (std::size_t i = L; i-- > 0;) {
      if (!w.Valid(b, i)) break;
      running = batch.rewards[b * L + i] + gamma * running;
      out[b * L + i] = running;
    }
  }
  return out;
}

namespace {

// Row `i` of the last window position as [B, dim].
Tensor LastPosition(const Tensor& x) {
  std::size_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
  return Reshape(Slice(x, 1, L - 1, L), {B, D});
}

Tensor ValidMask(const WindowBatch& w, double& count) {
  std::vector<double> m(w.batch * w.length);
  count = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    m[k] = w.valid[k] ? 1.0 : 0.0;
    count += m[k];
  }
  return Tensor::FromVector({w.batch, w.length, 1}, std::move(m));
}

}  // namespace

std::vector<double> BootstrapValues(const TwinCritic& critic, const DtPolicy& policy,
                                    const CriticBatch& batch) {
  NoGradScope no_grad;
  DtOutput out = policy.Forward(batch.next_window, nullptr, false);
  Tensor action = LastPosition(out.actions);
  Tensor state = LastPosition(batch.next_window.states);
  Tensor q = critic.MinTargetQ(state, action);
  std::vector<double> values = q.values();
  for (std::size_t b = 0; b < values.size(); ++b) {
    if (!batch.has_bootstrap[b]) values[b] = 0.0;
  }
  return values;
}

Tensor QLoss(const TwinCritic& critic, const WindowBatch& window,
             const std::vector<double>& targets) {
  if (targets.size() != window.batch * window.length) {
    throw ShapeError("one target per window position expected");
  }
  double count = 0.0;
  Tensor mask = ValidMask(window, count);
  if (count == 0.0) throw InvalidArgument("window batch has no valid positions");
  Tensor target = Tensor::FromVector({window.batch, window.length, 1}, targets);
  Tensor total;
  for (std::size_t k = 0; k < 2; ++k) {
    Tensor err = Mul(Square(Sub(critic.Q(k, window.states, window.actions), target)), mask);
    Tensor term = Scale(Sum(err), 1.0 / count);
    total = k == 0 ? term : Add(total, term);
  }
  return total;
}

double MeanAbsQ(const TwinCritic& critic, const WindowBatch& window) {
  NoGradScope no_grad;
  Tensor q = critic.Q(0, window.states, window.actions);
  double total = 0.0, count = 0.0;
  for (std::size_t k = 0; k < window.valid.size(); ++k) {
    if (!window.valid[k]) continue;
    total += std::abs(q.data()[k]);
    count += 1.0;
  }
  return count > 0.0 ? total / count : 0.0;
}

DatasetPairs CollectDatasetPairs(const OfflineDataset& dataset,
                                 const StateNormalizer& normalizer) {
  DatasetPairs p;
  std::size_t n = dataset.num_steps();
  std::size_t sd = dataset.at(0).states[0].size(), ad = dataset.at(0).actions[0].size();
  std::vector<double> s, a;
  s.reserve(n * sd);
  a.reserve(n * ad);
  for (const auto& t : dataset.trajectories()) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      auto ns = normalizer.Apply(t.states[k]);
      s.insert(s.end(), ns.begin(), ns.end());
      a.insert(a.end(), t.actions[k].begin(), t.actions[k].end());
      if (!t.state_ids.empty()) {
        p.state_ids.push_back(t.state_ids[k]);
        p.action_ids.push_back(t.action_ids[k]);
      }
    }
  }
  p.states = Tensor::FromVector({n, sd}, std::move(s));
  p.actions = Tensor::FromVector({n, ad}, std::move(a));
  return p;
}

void TrainGreedyTd(TwinCritic& critic, const OfflineDataset& dataset,
                   const StateNormalizer& normalizer, const ContinuousWrapper& wrapper,
                   const TdConfig& config) {
  // Transitions (k -> k + 1) with the supported actions at the next state.
  std::map<int, std::set<int>> support;
  for (const auto& t : dataset.trajectories()) {
    if (t.state_ids.empty()) throw InvalidArgument("greedy TD needs tabular ids");
    for (std::size_t k = 0; k < t.size(); ++k) support[t.state_ids[k]].insert(t.action_ids[k]);
  }
  std::size_t sd = critic.state_dim(), ad = critic.action_dim();
  struct Step {
    std::vector<double> s, a, next;
    double r;
    int next_id;  // -1 when the episode ends here
  };
  std::vector<Step> steps;
  for (const auto& t : dataset.trajectories()) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      Step st{normalizer.Apply(t.states[k]), t.actions[k], {}, t.rewards[k], -1};
      if (k + 1 < t.size()) {
        st.next = normalizer.Apply(t.states[k + 1]);
        st.next_id = t.state_ids[k + 1];
      }
      steps.push_back(std::move(st));
    }
  }
  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.schedule = LrSchedule::Constant();
  Adam adam(critic.Parameters(), opts);
  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, steps.size() - 1);
  for (std::size_t it = 0; it < config.steps; ++it) {
    std::size_t B = config.batch_size;
    std::vector<double> s(B * sd), a(B * ad), target(B);
    for (std::size_t b = 0; b < B; ++b) {
      const Step& st = steps[pick(rng)];
      std::copy(st.s.begin(), st.s.end(), s.begin() + b * sd);
      std::copy(st.a.begin(), st.a.end(), a.begin() + b * ad);
      double boot = 0.0;
      if (st.next_id >= 0) {
        const auto& acts = support.at(st.next_id);
        std::vector<double> ns, na;
        for (int act : acts) {
          ns.insert(ns.end(), st.next.begin(), st.next.end());
          auto e = wrapper.EncodeAction(act);
          na.insert(na.end(), e.begin(), e.end());
        }
        Tensor q = critic.MinTargetQ(Tensor::FromVector({acts.size(), sd}, ns),
                                     Tensor::FromVector({acts.size(), ad}, na));
        boot = *std::max_element(q.values().begin(), q.values().end());
      }
      target[b] = st.r + (st.next_id >= 0 ? critic.config().gamma * boot : 0.0);
    }
    Tensor states = Tensor::FromVector({B, sd}, std::move(s));
    Tensor actions = Tensor::FromVector({B, ad}, std::move(a));
    Tensor tgt = Tensor::FromVector({B, 1}, std::move(target));
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = Add(Mean(Square(Sub(critic.Q(0, states, actions), tgt))),
                      Mean(Square(Sub(critic.Q(1, states, actions), tgt))));
    adam.Step(tape.Backward(loss));
    critic.EmaUpdate();
  }
}

double PretrainCritic(TwinCritic& critic, const Tensor& states, const Tensor& actions,
                      const std::vector<double>& targets, const SupervisedConfig& config) {
  Tensor tgt = Tensor::FromVector({targets.size(), 1}, targets);
  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.schedule = LrSchedule::Constant();
  Adam adam(critic.Parameters(), opts);
  double last = 0.0;
  for (std::size_t it = 0; it < config.steps; ++it) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = Add(Mean(Square(Sub(critic.Q(0, states, actions), tgt))),
                      Mean(Square(Sub(critic.Q(1, states, actions), tgt))));
    last = loss.item() / 2.0;
    adam.Step(tape.Backward(loss));
  }
  critic.SyncTargets();
  return last;
}

double FittedQGap(const TwinCritic& critic, const TabularMdp& mdp, const RewardTable& rewards,
                  const OfflineDataset& dataset, const StateNormalizer& normalizer) {
  DpSolution dp =
      DatasetConstrainedValueIteration(mdp, rewards, dataset, critic.config().gamma);
  DatasetPairs pairs = CollectDatasetPairs(dataset, normalizer);
  if (pairs.state_ids.empty()) throw InvalidArgument("fitted-Q check needs tabular ids");
  NoGradScope no_grad;
  double gap = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    Tensor q = critic.Q(k, pairs.states, pairs.actions);
    for (std::size_t i = 0; i < pairs.state_ids.size(); ++i) {
      double exact = dp.q[pairs.state_ids[i]][pairs.action_ids[i]];
      gap = std::max(gap, std::abs(q.data()[i] - exact));
    }
  }
  return gap;
}

void SaveCritic(const TwinCritic& critic, const std::filesystem::path& path) {
  SaveCheckpoint(path, critic.AllParameters());
}

void LoadCritic(TwinCritic& critic, const std::filesystem::path& path) {
  ParameterList params = critic.AllParameters();
  LoadCheckpoint(path, params);
}

}  // namespace dtr
