#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "commnet/autodiff.hpp"
#include "commnet/envs/env.hpp"
#include "commnet/model/controller.hpp"
#include "commnet/training/trace.hpp"

namespace commnet {

namespace rollout_detail {

/// Builds the communication graph for one episode's live agents.
inline CommGraph episode_graph(const ControllerConfig& cfg, std::size_t j_count,
                               const std::vector<std::pair<int, int>>& positions) {
  if (cfg.kind == ControllerKind::Independent) return CommGraph::none(j_count);
  if (cfg.local_range) {
    if (positions.size() != j_count)
      throw std::logic_error("rollout: local mode needs agent positions");
    return CommGraph::local(positions, *cfg.local_range);
  }
  return CommGraph::broadcast(j_count);
}

/// Reselects carried-state rows when membership changes between steps:
/// surviving agents keep their row, new agents get the appended zero row.
inline Var regather(Tape& tape, Var prev, const std::vector<int>& row_or_fresh,
                    std::size_t width) {
  Var zero = tape.constant(Tensor({std::size_t(1), width}));
  Var base = tape.concat_rows(prev, zero);
  int fresh_row = static_cast<int>(tape.value(prev).rows());
  std::vector<int> idx;
  idx.reserve(row_or_fresh.size());
  for (int r : row_or_fresh) idx.push_back(r < 0 ? fresh_row : r);
  return tape.gather_rows(base, idx);
}

struct AgentKey {
  int episode;
  AgentId id;
  bool operator<(const AgentKey& o) const {
    if (episode != o.episode) return episode < o.episode;
    if (id.slot != o.id.slot) return id.slot < o.id.slot;
    return id.gen < o.id.gen;
  }
};

}  // namespace rollout_detail

/// Runs one episode per environment in lockstep, batching all live agents of
/// the chunk through a single forward per step. Each episode consumes only
/// its own random stream, so results do not depend on how episodes are
/// grouped into chunks or spread over workers.
inline std::vector<EpisodeTrace> rollout_chunk(
    const Controller& ctl, std::vector<std::unique_ptr<Environment>>& envs,
    const std::vector<Rng>& episode_rngs, int first_batch_index,
    bool greedy = false) {
  using rollout_detail::AgentKey;
  const ControllerConfig& cfg = ctl.config();
  const std::size_t n = envs.size();
  if (episode_rngs.size() != n)
    throw std::invalid_argument("rollout_chunk: one rng per environment required");

  std::vector<EpisodeTrace> traces(n);
  std::vector<EnvStep> cur(n);
  std::vector<Rng> act_rngs;
  act_rngs.reserve(n);
  for (std::size_t e = 0; e < n; ++e) {
    traces[e].batch_index = first_batch_index + static_cast<int>(e);
    cur[e] = envs[e]->reset(episode_rngs[e].split(0));
    act_rngs.push_back(episode_rngs[e].split(1));
  }

  Tape tape;
  Bound bound = ctl.bind(tape);
  std::map<AgentKey, int> carried_row;  // (episode, agent) -> union row of last step
  CarriedState carried;

  while (true) {
    std::vector<std::size_t> active;  // episodes with live agents this step
    for (std::size_t e = 0; e < n; ++e)
      if (!envs[e]->done() && !cur[e].live.empty()) active.push_back(e);

    bool all_done = true;
    for (std::size_t e = 0; e < n; ++e)
      if (!envs[e]->done()) all_done = false;
    if (all_done) break;

    std::vector<std::vector<int>> episode_actions(n);
    ForwardOutput out;
    std::vector<std::size_t> row_episode;  // union row -> episode

    if (!active.empty()) {
      // Assemble union inputs.
      std::vector<int> union_ids;
      Tensor union_obs;
      std::vector<const CommGraph*> graph_parts;
      std::vector<CommGraph> graphs;
      graphs.reserve(active.size());
      std::size_t total_rows = 0;
      for (std::size_t e : active) total_rows += cur[e].live.size();
      if (cfg.encoder == EncoderKind::OneHotLinear)
        union_obs = Tensor({total_rows, static_cast<std::size_t>(cfg.obs_dim)});

      std::size_t row = 0;
      for (std::size_t e : active) {
        const EnvStep& s = cur[e];
        auto positions = envs[e]->positions();
        graphs.push_back(
            rollout_detail::episode_graph(cfg, s.live.size(), positions));
        for (std::size_t j = 0; j < s.live.size(); ++j) {
          if (cfg.encoder == EncoderKind::Lookup)
            union_ids.push_back(s.lookup_ids[j]);
          else
            for (std::size_t c = 0; c < s.obs.cols(); ++c)
              union_obs.at(row, c) = s.obs.at(j, c);
          row_episode.push_back(e);
          ++row;
        }
      }
      for (const CommGraph& g : graphs) graph_parts.push_back(&g);
      CommGraph union_graph = CommGraph::stack(graph_parts);

      ForwardInput in;
      in.graph = &union_graph;
      if (cfg.encoder == EncoderKind::Lookup)
        in.lookup_ids = std::move(union_ids);
      else
        in.features = &union_obs;
      in.sampler = [&](int r, const double* w, int nw) {
        return static_cast<int>(act_rngs[row_episode[static_cast<std::size_t>(r)]]
                                    .categorical(w, static_cast<std::size_t>(nw)));
      };

      if (cfg.temporal) {
        std::vector<int> gather;
        gather.reserve(row);
        std::map<AgentKey, int> new_rows;
        int r2 = 0;
        for (std::size_t e : active)
          for (const AgentId& id : cur[e].live) {
            AgentKey key{static_cast<int>(e), id};
            auto it = carried_row.find(key);
            gather.push_back(it == carried_row.end() ? -1 : it->second);
            new_rows[key] = r2++;
          }
        if (carried.hidden.valid()) {
          const std::size_t d = static_cast<std::size_t>(cfg.hidden);
          in.carried.hidden = rollout_detail::regather(tape, carried.hidden, gather, d);
          if (cfg.cell == CellKind::LSTM)
            in.carried.memory = rollout_detail::regather(tape, carried.memory, gather, d);
        }
        carried_row = std::move(new_rows);
      }

      out = ctl.forward(tape, bound, in);
      if (cfg.temporal) carried = out.carried;

      // Sample actions per agent from its episode's stream, record the step.
      const Tensor& probs = tape.value(out.head_probs[0]);
      const Tensor& logp = tape.value(out.head_logprobs[0]);
      const Tensor& base = tape.value(out.baseline_rows);
      const std::size_t acts = probs.cols();

      row = 0;
      for (std::size_t e : active) {
        const EnvStep& s = cur[e];
        TraceStep step;
        step.obs = s.obs;
        step.lookup_ids = s.lookup_ids;
        step.live = s.live;
        step.positions = envs[e]->positions();
        double bsum = 0.0;
        for (std::size_t j = 0; j < s.live.size(); ++j, ++row) {
          int a;
          if (greedy) {
            a = 0;
            for (std::size_t k = 1; k < acts; ++k)
              if (probs.at(row, k) > probs.at(row, static_cast<std::size_t>(a)))
                a = static_cast<int>(k);
          } else {
            a = static_cast<int>(
                act_rngs[e].categorical(probs.data() + row * acts, acts));
          }
          step.actions.push_back(a);
          step.logp.push_back(logp.at(row, static_cast<std::size_t>(a)));
          bsum += base.at(row, 0);
        }
        step.baseline = bsum / static_cast<double>(s.live.size());
        episode_actions[e] = step.actions;
        traces[e].steps.push_back(std::move(step));
      }

      // Discrete symbols: slice the union rows back out per episode.
      if (!out.symbols.empty()) {
        std::size_t base_row = 0;
        for (std::size_t e : active) {
          const std::size_t jn = cur[e].live.size();
          TraceStep& step = traces[e].steps.back();
          for (std::size_t cs = 0; cs < out.symbols.size(); ++cs) {
            const Tensor& slp = tape.value(out.symbol_logprob_rows[cs]);
            std::vector<int> syms;
            std::vector<double> lps;
            for (std::size_t j = 0; j < jn; ++j) {
              syms.push_back(out.symbols[cs][base_row + j]);
              lps.push_back(slp.at(base_row + j, 0));
            }
            step.symbols.push_back(std::move(syms));
            step.symbol_logp.push_back(std::move(lps));
          }
          base_row += jn;
        }
      }
    }

    // Advance every unfinished environment (agentless ones step with no
    // actions; the reward still accrues to the most recent recorded step
    // sequence as its own empty step).
    for (std::size_t e = 0; e < n; ++e) {
      if (envs[e]->done()) continue;
      EnvStep next = envs[e]->step(episode_actions[e]);
      if (cur[e].live.empty()) {
        TraceStep blank;
        blank.reward = next.reward;
        traces[e].steps.push_back(std::move(blank));
      } else {
        traces[e].steps.back().reward = next.reward;
      }
      if (next.done) traces[e].outcome = next.outcome;
      cur[e] = std::move(next);
    }
  }
  return traces;
}

}  // namespace commnet
