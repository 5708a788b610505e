#include "dtr/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dtr/checkpoint.hpp"
#include "dtr/optim.hpp"
#include "json.hpp"

namespace dtr {

RewardNet::RewardNet(std::size_t state_dim, std::size_t action_dim, const RewardConfig& config,
                     Rng& rng)
    : mlp_({state_dim + action_dim, config.hidden_dim, config.hidden_layers, 1,
            Activation::kRelu, Activation::kTanh},
           rng) {}

Tensor RewardNet::Forward(const Tensor& inputs) const { return mlp_.Forward(inputs); }

PreferenceBatch MakePreferenceBatch(const OfflineDataset& dataset,
                                    const StateNormalizer& normalizer,
                                    const std::vector<PreferencePair>& pairs) {
  PreferenceBatch batch;
  batch.pairs = pairs.size();
  if (pairs.empty()) throw InvalidArgument("empty preference batch");
  for (const auto& p : pairs) {
    batch.max_length = std::max({batch.max_length, p.seg0.length, p.seg1.length});
  }
  const auto& first = dataset.at(0);
  std::size_t sd = first.states[0].size();
  std::size_t ad = first.actions[0].size();
  std::size_t in = sd + ad;
  std::size_t rows = 2 * batch.pairs * batch.max_length;
  std::vector<double> inputs(rows * in, 0.0);
  std::vector<double> mask(2 * batch.pairs * batch.max_length, 0.0);
  std::vector<double> labels(2 * batch.pairs);
  for (std::size_t b = 0; b < pairs.size(); ++b) {
    const auto& p = pairs[b];
    for (std::size_t side = 0; side < 2; ++side) {
      const Segment& seg = side == 0 ? p.seg0 : p.seg1;
      const auto& traj = dataset.at(seg.trajectory);
      if (seg.start + seg.length > traj.size()) {
        throw InvalidArgument("segment does not resolve against the dataset");
      }
      for (std::size_t l = 0; l < seg.length; ++l) {
        std::size_t row = (2 * b + side) * batch.max_length + l;
        auto s = normalizer.Apply(traj.states[seg.start + l]);
        const auto& a = traj.actions[seg.start + l];
        std::copy(s.begin(), s.end(), inputs.begin() + row * in);
        std::copy(a.begin(), a.end(), inputs.begin() + row * in + sd);
        mask[row] = 1.0;
      }
    }
    labels[2 * b] = 1.0 - p.y;
    labels[2 * b + 1] = p.y;
    batch.y.push_back(p.y);
  }
  batch.inputs = Tensor::FromVector({rows, in}, std::move(inputs));
  batch.mask = Tensor::FromVector({2 * batch.pairs, batch.max_length}, std::move(mask));
  batch.labels = Tensor::FromVector({batch.pairs, 2}, std::move(labels));
  return batch;
}

Tensor SegmentReturns(const RewardNet& net, const PreferenceBatch& batch) {
  Tensor r = net.Forward(batch.inputs);
  r = Mul(Reshape(r, {2 * batch.pairs, batch.max_length}), batch.mask);
  return Reshape(SumAxis(r, 1), {batch.pairs, 2});
}

Tensor PreferenceLogProbs(const RewardNet& net, const PreferenceBatch& batch) {
  return LogSoftmax(SegmentReturns(net, batch));
}

double PreferenceProbability(const RewardNet& net, const OfflineDataset& dataset,
                             const StateNormalizer& normalizer, const PreferencePair& pair) {
  NoGradScope no_grad;
  PreferenceBatch batch = MakePreferenceBatch(dataset, normalizer, {pair});
  return std::exp(PreferenceLogProbs(net, batch).at({0, 1}));
}

Tensor CrossEntropyLoss(const RewardNet& net, const PreferenceBatch& batch) {
  Tensor log_probs = PreferenceLogProbs(net, batch);
  return Scale(Sum(Mul(log_probs, batch.labels)), -1.0 / static_cast<double>(batch.pairs));
}

namespace {

// Counts (correct, counted) over a batch of log-probabilities.
std::pair<std::size_t, std::size_t> CountCorrect(const Tensor& log_probs,
                                                 const std::vector<double>& y) {
  std::size_t correct = 0, counted = 0;
  for (std::size_t b = 0; b < y.size(); ++b) {
    if (y[b] == 0.5) continue;
    ++counted;
    double p1 = std::exp(log_probs.at({b, 1}));
    if ((y[b] > 0.5 && p1 > 0.5) || (y[b] < 0.5 && p1 < 0.5)) ++correct;
  }
  return {correct, counted};
}

constexpr std::size_t kEvalChunk = 512;

}  // namespace

std::optional<double> PreferenceAccuracy(const RewardNet& net, const OfflineDataset& dataset,
                                         const StateNormalizer& normalizer,
                                         const PreferenceSet& prefs) {
  NoGradScope no_grad;
  std::size_t correct = 0, counted = 0;
  for (std::size_t begin = 0; begin < prefs.pairs.size(); begin += kEvalChunk) {
    std::size_t end = std::min(prefs.pairs.size(), begin + kEvalChunk);
    std::vector<PreferencePair> chunk(prefs.pairs.begin() + begin, prefs.pairs.begin() + end);
    PreferenceBatch batch = MakePreferenceBatch(dataset, normalizer, chunk);
    auto [c, n] = CountCorrect(PreferenceLogProbs(net, batch), batch.y);
    correct += c;
    counted += n;
  }
  if (counted == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(counted);
}

std::vector<double> NormalizeAndAverage(const std::vector<std::vector<double>>& raw,
                                        RewardNormalization mode, bool permissive,
                                        std::vector<MemberStats>* stats) {
  if (raw.empty()) throw InvalidArgument("ensemble has no members");
  std::size_t n = raw[0].size();
  std::vector<double> total(n, 0.0);
  if (stats) stats->clear();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    if (r.size() != n) throw ShapeError("ensemble members disagree on the number of steps");
    if (r.empty()) throw InvalidArgument("nothing to normalize");
    MemberStats st;
    auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    st.min = *lo;
    st.max = *hi;
    st.mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : r) ss += (v - st.mean) * (v - st.mean);
    st.std = std::sqrt(ss / static_cast<double>(n));
    if (stats) stats->push_back(st);
    bool degenerate = st.max == st.min;
    if (degenerate && !permissive) {
      throw DegenerateMemberError("reward member " + std::to_string(i) +
                                  " is constant over the dataset (" + std::to_string(st.min) +
                                  "); normalization is undefined");
    }
    if (degenerate) continue;  // contributes 0
    if (mode == RewardNormalization::kMinMax) {
      double range = st.max - st.min;
      for (std::size_t k = 0; k < n; ++k) total[k] += (r[k] - st.min) / range;
    } else {
      for (std::size_t k = 0; k < n; ++k) total[k] += (r[k] - st.mean) / st.std;
    }
  }
  double members = static_cast<double>(raw.size());
  for (double& v : total) v /= members;
  return total;
}

RewardEnsemble::RewardEnsemble(std::size_t state_dim, std::size_t action_dim,
                               const RewardConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  if (config.ensemble_size == 0) throw InvalidArgument("ensemble needs at least one member");
  for (std::size_t i = 0; i < config.ensemble_size; ++i) {
    Rng init(DeriveSeed(seed, 2 * i));
    members_.emplace_back(state_dim, action_dim, config, init);
  }
  traces_.resize(config.ensemble_size);
}

ParameterList RewardEnsemble::Parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < members_.size(); ++i) {
    auto p = members_[i].Parameters("member" + std::to_string(i) + ".");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void RewardEnsemble::Train(const OfflineDataset& dataset, const PreferenceSet& prefs) {
  if (prefs.pairs.empty()) throw InvalidArgument("cannot train on an empty preference set");
  normalizer_ = FitStateNormalizer(dataset);
  // Batches are assembled once; only their order changes between epochs.
  for (std::size_t i = 0; i < members_.size(); ++i) {
    RewardNet& net = members_[i];
    MemberTrace& trace = traces_[i];
    trace = MemberTrace{};
    AdamOptions options;
    options.learning_rate = config_.learning_rate;
    options.weight_decay = config_.weight_decay;
    options.schedule = LrSchedule::Constant();
    std::string prefix = "member" + std::to_string(i) + ".";
    Adam adam(net.Parameters(prefix), options);
    Rng shuffle(DeriveSeed(seed_, 2 * i + 1));
    std::vector<std::size_t> order(prefs.pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle);
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
        std::size_t end = std::min(order.size(), begin + config_.batch_size);
        std::vector<PreferencePair> pairs;
        for (std::size_t k = begin; k < end; ++k) pairs.push_back(prefs.pairs[order[k]]);
        PreferenceBatch batch = MakePreferenceBatch(dataset, normalizer_, pairs);
        ++step;
        try {
          Tape tape;
          TapeScope scope(tape);
          Tensor loss = CrossEntropyLoss(net, batch);
          loss_sum += loss.item();
          adam.Step(tape.Backward(loss));
        } catch (const NumericalError& e) {
          throw NumericalError("reward member " + std::to_string(i) + " diverged at step " +
                               std::to_string(step) + ": " + e.what());
        }
        ++batches;
      }
      trace.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
      auto acc = PreferenceAccuracy(net, dataset, normalizer_, prefs);
      trace.epoch_accuracy.push_back(acc.value_or(0.0));
      trace.epochs_run = epoch + 1;
      if (acc && *acc > config_.early_stop_accuracy) {
        trace.reached_threshold = true;
        break;
      }
    }
  }
}

std::vector<std::vector<double>> RewardEnsemble::RawOutputs(const OfflineDataset& dataset) const {
  NoGradScope no_grad;
  std::size_t sd = dataset.at(0).states[0].size();
  std::size_t ad = dataset.at(0).actions[0].size();
  std::size_t in = sd + ad;
  std::size_t n = dataset.num_steps();
  std::vector<double> inputs(n * in);
  std::size_t row = 0;
  for (const auto& t : dataset.trajectories()) {
    for (std::size_t k = 0; k < t.size(); ++k, ++row) {
      auto s = normalizer_.Apply(t.states[k]);
      std::copy(s.begin(), s.end(), inputs.begin() + row * in);
      std::copy(t.actions[k].begin(), t.actions[k].end(), inputs.begin() + row * in + sd);
    }
  }
  Tensor x = Tensor::FromVector({n, in}, std::move(inputs));
  std::vector<std::vector<double>> out;
  for (const auto& net : members_) out.push_back(net.Forward(x).values());
  return out;
}

OfflineDataset RewardEnsemble::Relabel(const OfflineDataset& dataset) {
  if (normalizer_.empty()) throw InvalidArgument("reward ensemble has not been trained");
  auto flat = NormalizeAndAverage(RawOutputs(dataset), config_.normalization,
                                  config_.permissive, &stats_);
  std::vector<std::vector<double>> rewards;
  std::size_t k = 0;
  for (const auto& t : dataset.trajectories()) {
    rewards.emplace_back(flat.begin() + k, flat.begin() + k + t.size());
    k += t.size();
  }
  return dataset.WithRewards(rewards, "relabeled");
}

double RewardEnsemble::NormalizedReward(const std::vector<double>& state,
                                        const std::vector<double>& action) const {
  if (stats_.size() != members_.size()) {
    throw InvalidArgument("reward ensemble has no normalization statistics; relabel first");
  }
  NoGradScope no_grad;
  std::vector<double> input = normalizer_.Apply(state);
  input.insert(input.end(), action.begin(), action.end());
  std::size_t width = input.size();
  Tensor x = Tensor::FromVector({1, width}, std::move(input));
  double total = 0.0;
  for (std::size_t i = 0; i < members_.size(); ++i) {
    double raw = members_[i].Forward(x).item();
    const MemberStats& st = stats_[i];
    if (st.max == st.min) continue;
    if (config_.normalization == RewardNormalization::kMinMax) {
      total += (raw - st.min) / (st.max - st.min);
    } else {
      total += (raw - st.mean) / st.std;
    }
  }
  return total / static_cast<double>(members_.size());
}

void RewardEnsemble::Save(const std::filesystem::path& path,
                          const std::string& config_hash) const {
  SaveCheckpoint(path, Parameters());
  nlohmann::json side;
  side["config_hash"] = config_hash;
  side["members"] = members_.size();
  side["seed"] = seed_;
  side["normalization"] =
      config_.normalization == RewardNormalization::kMinMax ? "minmax" : "zscore";
  side["state_mean"] = normalizer_.mean;
  side["state_std"] = normalizer_.std;
  for (std::size_t i = 0; i < members_.size(); ++i) {
    nlohmann::json m;
    m["epoch_loss"] = traces_[i].epoch_loss;
    m["epoch_accuracy"] = traces_[i].epoch_accuracy;
    m["reached_threshold"] = traces_[i].reached_threshold;
    m["epochs_run"] = traces_[i].epochs_run;
    if (i < stats_.size()) {
      m["min"] = stats_[i].min;
      m["max"] = stats_[i].max;
      m["mean"] = stats_[i].mean;
      m["std"] = stats_[i].std;
    }
    side["member_info"].push_back(m);
  }
  std::ofstream out(path.string() + ".json", std::ios::trunc);
  if (!out) throw ArtifactError("cannot write reward sidecar for " + path.string());
  out << side.dump(2) << '\n';
}

std::string RewardEnsemble::Load(const std::filesystem::path& path) {
  ParameterList params = Parameters();
  LoadCheckpoint(path, params);
  std::ifstream in(path.string() + ".json");
  if (!in) throw ArtifactError("missing reward sidecar for " + path.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
    if (side.at("members").get<std::size_t>() != members_.size()) {
      throw ArtifactError("reward checkpoint has a different ensemble size");
    }
    normalizer_.mean = side.at("state_mean").get<std::vector<double>>();
    normalizer_.std = side.at("state_std").get<std::vector<double>>();
    stats_.clear();
    for (std::size_t i = 0; i < members_.size(); ++i) {
      const auto& m = side.at("member_info").at(i);
      traces_[i].epoch_loss = m.at("epoch_loss").get<std::vector<double>>();
      traces_[i].epoch_accuracy = m.at("epoch_accuracy").get<std::vector<double>>();
      traces_[i].reached_threshold = m.at("reached_threshold").get<bool>();
      traces_[i].epochs_run = m.at("epochs_run").get<std::size_t>();
      if (m.contains("min")) {
        stats_.push_back({m.at("min").get<double>(), m.at("max").get<double>(),
                          m.at("mean").get<double>(), m.at("std").get<double>()});
      }
    }
    return side.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("reward sidecar " + path.string() + ".json: " + e.what(), 0);
  }
}

}  // namespace dtr
