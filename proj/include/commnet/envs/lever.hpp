#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <vector>

#include "commnet/envs/env.hpp"

namespace commnet {

struct LeverConfig {
  int levers = 5;  // m
  int pool = 500;  // N
  void validate() const {
    if (levers < 1 || levers > pool)
      throw std::invalid_argument("lever: need 1 <= m <= N");
  }
};

/// Reward for one round: distinct levers pulled over m, shared by everyone.
inline double lever_play(const LeverConfig& cfg, const std::vector<int>& agent_ids,
                         const std::vector<int>& choices) {
  if (agent_ids.size() != static_cast<std::size_t>(cfg.levers) ||
      choices.size() != agent_ids.size())
    throw std::invalid_argument("lever_play: need one choice per drawn agent");
  std::set<int> distinct_ids(agent_ids.begin(), agent_ids.end());
  if (distinct_ids.size() != agent_ids.size())
    throw std::invalid_argument("lever_play: duplicate agent ids in the draw");
  std::set<int> pulled;
  for (int c : choices) {
    if (c < 0 || c >= cfg.levers)
      throw std::invalid_argument("lever_play: lever choice out of range");
    pulled.insert(c);
  }
  return static_cast<double>(pulled.size()) / static_cast<double>(cfg.levers);
}

/// Supervised targets: the agent with rank k in ascending id order pulls
/// lever k. Always a permutation of {0..m-1}, and following it scores 1.
inline std::vector<int> lever_supervised_target(const std::vector<int>& agent_ids) {
  std::vector<int> order(agent_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return agent_ids[a] < agent_ids[b]; });
  std::vector<int> target(agent_ids.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    target[static_cast<std::size_t>(order[rank])] = static_cast<int>(rank);
  return target;
}

/// One-shot game: m agents drawn from a pool of N, each sees only its own
/// identity and must pull a lever distinct from everyone else's.
class LeverEnv : public Environment {
public:
  explicit LeverEnv(LeverConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  EnvStep reset(Rng rng) override {
    cfg_.validate();
    drawn_.clear();
    for (std::size_t id : sample_without_replacement(rng, static_cast<std::size_t>(cfg_.pool),
                                                     static_cast<std::size_t>(cfg_.levers)))
      drawn_.push_back(static_cast<int>(id));
    done_ = false;
    EnvStep s;
    s.lookup_ids = drawn_;
    for (int id : drawn_) s.live.push_back(AgentId{id, 0});
    return s;
  }

  EnvStep step(const std::vector<int>& actions) override {
    if (done_) throw std::logic_error("lever: episode already finished");
    EnvStep s;
    s.reward = lever_play(cfg_, drawn_, actions);
    s.done = true;
    done_ = true;
    return s;
  }

  const std::vector<int>& drawn() const { return drawn_; }

  int action_count() const override { return cfg_.levers; }
  int obs_dim() const override { return 0; }
  int lookup_rows() const override { return cfg_.pool; }
  int max_steps() const override { return 1; }
  bool done() const override { return done_; }

private:
  LeverConfig cfg_;
  std::vector<int> drawn_;
  bool done_ = true;
};

}  // namespace commnet
