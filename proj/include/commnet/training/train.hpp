#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "commnet/envs/env.hpp"
#include "commnet/envs/lever.hpp"
#include "commnet/model/controller.hpp"
#include "commnet/training/curriculum.hpp"
#include "commnet/training/optim.hpp"
#include "commnet/training/parallel.hpp"
#include "commnet/training/rollout.hpp"
#include "commnet/training/trace.hpp"
#include "commnet/training/update.hpp"

namespace commnet {

enum class TaskKind { Lever, Traffic, Combat };

/// Per-episode success measure: distinct-lever ratio, collision failure
/// indicator, or win indicator.
inline double episode_metric(TaskKind kind, const EpisodeTrace& trace) {
  switch (kind) {
    case TaskKind::Lever: return trace.total_reward();
    case TaskKind::Traffic: return trace.outcome == "failure" ? 1.0 : 0.0;
    case TaskKind::Combat: return trace.outcome == "win" ? 1.0 : 0.0;
  }
  return 0.0;
}

struct TrainConfig {
  bool supervised = false;  // lever only: cross-entropy against sorted-id targets
  double alpha = 0.03;      // baseline objective weight
  double lr = 0.003;
  int batch = 288;  // episodes per update
  int epochs = 300;
  int updates_per_epoch = 100;
  std::string optimizer = "rmsprop";
  double rmsprop_decay = 0.97;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double opt_eps = 1e-6;
  double clip_norm = 0.0;  // 0 disables clipping
  int eval_trials = 500;   // per-epoch evaluation episodes
  bool eval_greedy = false;
  int workers = 1;
  int chunk = 16;  // episodes per work unit; fixed so results ignore workers

  void validate() const {
    if (alpha < 0.0) throw std::invalid_argument("train: alpha must be >= 0");
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (epochs < 1 || updates_per_epoch < 1)
      throw std::invalid_argument("train: epochs and updates must be >= 1");
    if (chunk < 1) throw std::invalid_argument("train: chunk must be >= 1");
  }
};

/// Builds a fresh environment configured for the given epoch (curricula
/// applied; pass the final epoch for end-of-curriculum evaluation settings).
using EnvFactory = std::function<std::unique_ptr<Environment>(int epoch)>;

struct EvalResult {
  double metric_mean = 0.0;
  double metric_std = 0.0;
  double reward_mean = 0.0;
  int trials = 0;
};

struct EpochRow {
  int epoch = 0;
  EvalResult eval;
  double train_reward_mean = 0.0;
  double wall_seconds = 0.0;  // reporting only; never part of deterministic outputs
};

struct TrainHooks {
  std::function<void(int epoch, const EpochRow&)> on_epoch;
};

/// Rolls `trials` episodes under the current parameters and aggregates the
/// task metric. Trial i always consumes stream split(i) of `eval_root`, so
/// the result is independent of chunking and worker count.
inline EvalResult evaluate(const Controller& ctl, const EnvFactory& factory,
                           int at_epoch, TaskKind kind, int trials, Rng eval_root,
                           int workers = 1, int chunk = 16, bool greedy = false) {
  std::vector<double> metric(static_cast<std::size_t>(trials));
  std::vector<double> reward(static_cast<std::size_t>(trials));
  const int chunks = (trials + chunk - 1) / chunk;
  run_chunks(chunks, workers, [&](int c) {
    int lo = c * chunk;
    int hi = std::min(trials, lo + chunk);
    std::vector<std::unique_ptr<Environment>> envs;
    std::vector<Rng> rngs;
    for (int i = lo; i < hi; ++i) {
      envs.push_back(factory(at_epoch));
      rngs.push_back(eval_root.split(static_cast<std::uint64_t>(i)));
    }
    std::vector<EpisodeTrace> traces = rollout_chunk(ctl, envs, rngs, lo, greedy);
    for (int i = lo; i < hi; ++i) {
      metric[static_cast<std::size_t>(i)] =
          episode_metric(kind, traces[static_cast<std::size_t>(i - lo)]);
      reward[static_cast<std::size_t>(i)] =
          traces[static_cast<std::size_t>(i - lo)].total_reward();
    }
  });

  EvalResult res;
  res.trials = trials;
  for (double m : metric) res.metric_mean += m;
  for (double r : reward) res.reward_mean += r;
  res.metric_mean /= trials;
  res.reward_mean /= trials;
  double var = 0.0;
  for (double m : metric) var += (m - res.metric_mean) * (m - res.metric_mean);
  res.metric_std = trials > 1 ? std::sqrt(var / (trials - 1)) : 0.0;
  return res;
}

/// The training loop: epochs x updates, each update a batch of episodes
/// gathered in fixed-size chunks (parallelizable), one optimizer step after
/// a fixed-order gradient reduction. Per-epoch evaluation feeds the metrics
/// history (one row per epoch).
inline std::vector<EpochRow> train(Controller& ctl, TaskKind kind,
                                   const EnvFactory& factory, const TrainConfig& cfg,
                                   Rng root, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (cfg.supervised && kind != TaskKind::Lever)
    throw std::invalid_argument("train: supervised targets exist only for the lever task");

  std::unique_ptr<Optimizer> opt =
      make_optimizer(cfg.optimizer, cfg.lr, cfg.rmsprop_decay, cfg.adam_beta1,
                     cfg.adam_beta2, cfg.opt_eps);
  Rng train_root = root.split(1);
  Rng eval_root = root.split(2);

  const int chunks = (cfg.batch + cfg.chunk - 1) / cfg.chunk;
  std::vector<EpochRow> history;
  long long update_index = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto wall_start = std::chrono::steady_clock::now();
    double epoch_reward = 0.0;
    long long epoch_episodes = 0;

    for (int upd = 0; upd < cfg.updates_per_epoch; ++upd, ++update_index) {
      const std::uint64_t episode_base =
          static_cast<std::uint64_t>(update_index) *
          static_cast<std::uint64_t>(cfg.batch);
      std::vector<std::vector<Tensor>> chunk_grads(static_cast<std::size_t>(chunks));
      std::vector<double> chunk_reward(static_cast<std::size_t>(chunks), 0.0);

      run_chunks(chunks, cfg.workers, [&](int c) {
        int lo = c * cfg.chunk;
        int hi = std::min(cfg.batch, lo + cfg.chunk);
        if (cfg.supervised) {
          std::vector<SupervisedExample> examples;
          std::size_t agents = 0;
          for (int i = lo; i < hi; ++i) {
            auto env = factory(epoch);
            Rng ep = train_root.split(episode_base + static_cast<std::uint64_t>(i));
            EnvStep s = env->reset(ep.split(0));
            SupervisedExample ex;
            ex.lookup_ids = s.lookup_ids;
            ex.obs = s.obs;
            ex.targets = lever_supervised_target(s.lookup_ids);
            agents += ex.targets.size();
            examples.push_back(std::move(ex));
          }
          // scale by the batch-wide agent count (J is constant per task)
          double per_episode_agents =
              static_cast<double>(agents) / static_cast<double>(hi - lo);
          double scale = 1.0 / (per_episode_agents * cfg.batch);
          chunk_grads[static_cast<std::size_t>(c)] =
              supervised_chunk_grads(ctl, examples, scale);
        } else {
          std::vector<std::unique_ptr<Environment>> envs;
          std::vector<Rng> rngs;
          for (int i = lo; i < hi; ++i) {
            envs.push_back(factory(epoch));
            rngs.push_back(
                train_root.split(episode_base + static_cast<std::uint64_t>(i)));
          }
          std::vector<EpisodeTrace> traces = rollout_chunk(ctl, envs, rngs, lo);
          for (const EpisodeTrace& tr : traces)
            chunk_reward[static_cast<std::size_t>(c)] += tr.total_reward();
          std::vector<const EpisodeTrace*> ptrs;
          for (const EpisodeTrace& tr : traces) ptrs.push_back(&tr);
          chunk_grads[static_cast<std::size_t>(c)] =
              reinforce_chunk_grads(ctl, ptrs, cfg.alpha, 1.0 / cfg.batch);
        }
      });

      std::vector<Tensor> grads;
      for (int c = 0; c < chunks; ++c) {
        accumulate_grads(grads, chunk_grads[static_cast<std::size_t>(c)]);
        epoch_reward += chunk_reward[static_cast<std::size_t>(c)];
      }
      epoch_episodes += cfg.batch;
      clip_grad_norm(grads, cfg.clip_norm);
      opt->step(ctl.params(), grads);
    }

    EpochRow row;
    row.epoch = epoch;
    row.eval = evaluate(ctl, factory, cfg.epochs, kind, cfg.eval_trials,
                        eval_root.split(static_cast<std::uint64_t>(epoch)),
                        cfg.workers, cfg.chunk, cfg.eval_greedy);
    row.train_reward_mean =
        cfg.supervised ? 0.0
                       : epoch_reward / static_cast<double>(epoch_episodes);
    row.wall_seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - wall_start)
                           .count();
    if (hooks.on_epoch) hooks.on_epoch(epoch, row);
    history.push_back(row);
  }
  return history;
}

}  // namespace commnet
