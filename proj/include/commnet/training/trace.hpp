#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "commnet/envs/env.hpp"
#include "commnet/tensor.hpp"

namespace commnet {

/// One environment step as recorded during a rollout: everything the policy
/// gradient needs to rebuild the decision (observations, the sampled joint
/// action with its log-probabilities, baseline value, reward).
struct TraceStep {
  Tensor obs;                   // [J x obs_dim]; empty for lookup tasks
  std::vector<int> lookup_ids;
  std::vector<AgentId> live;
  std::vector<std::pair<int, int>> positions;  // for rebuilding local graphs
  std::vector<int> actions;                    // per live agent
  std::vector<double> logp;                    // recorded log p(a_j)
  std::vector<std::vector<int>> symbols;       // per comm step (discrete kind)
  std::vector<std::vector<double>> symbol_logp;
  double baseline = 0.0;  // recorded b(s_t): mean of the per-agent heads
  double reward = 0.0;
};

struct EpisodeTrace {
  int batch_index = 0;  // canonical position in the batch; fixes reduction order
  std::vector<TraceStep> steps;
  std::string outcome;

  double total_reward() const {
    double r = 0.0;
    for (const TraceStep& s : steps) r += s.reward;
    return r;
  }
};

/// Undiscounted suffix sums: out[t] = sum of rewards from t onward.
inline std::vector<double> returns_to_go(const std::vector<double>& rewards) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    out[i] = acc;
  }
  return out;
}

inline std::vector<double> returns_to_go(const EpisodeTrace& trace) {
  std::vector<double> rewards;
  rewards.reserve(trace.steps.size());
  for (const TraceStep& s : trace.steps) rewards.push_back(s.reward);
  return returns_to_go(rewards);
}

}  // namespace commnet
