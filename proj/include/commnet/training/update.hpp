#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "commnet/autodiff.hpp"
#include "commnet/model/controller.hpp"
#include "commnet/training/rollout.hpp"
#include "commnet/training/trace.hpp"

namespace commnet {

struct UpdateStats {
  double loss = 0.0;
  double replay_gap = 0.0;  // max |stored logp - recomputed logp|
};

/// Policy-gradient update with a learned state baseline over one chunk of
/// episodes. Replays the stored decisions through a live graph, then
/// accumulates the gradient of
///   sum_t [ -log p(a_t) * (R_t - b(s_t)) + alpha * (R_t - b(s_t))^2 ] * scale
/// with R_t the undiscounted return-to-go. The advantage factor of the score
/// term is treated as a constant: no gradient reaches the baseline through
/// it. Discrete symbol emissions contribute their log-probabilities as
/// internal actions with the same advantage.
///
/// Episodes are processed in batch_index order regardless of the order they
/// are handed in, so the accumulated gradient is invariant to shuffling.
inline std::vector<Tensor> reinforce_chunk_grads(
    const Controller& ctl, std::vector<const EpisodeTrace*> traces, double alpha,
    double scale, UpdateStats* stats = nullptr, bool baseline_only = false) {
  const ControllerConfig& cfg = ctl.config();
  std::sort(traces.begin(), traces.end(),
            [](const EpisodeTrace* a, const EpisodeTrace* b) {
              return a->batch_index < b->batch_index;
            });

  Tape tape;
  Bound bound = ctl.bind(tape);
  Var loss = tape.constant(Tensor::scalar(0.0));

  std::vector<std::vector<double>> rtg;
  std::size_t t_max = 0;
  for (const EpisodeTrace* tr : traces) {
    rtg.push_back(returns_to_go(*tr));
    t_max = std::max(t_max, tr->steps.size());
  }

  using rollout_detail::AgentKey;
  std::map<AgentKey, int> carried_row;
  CarriedState carried;
  double replay_gap = 0.0;

  for (std::size_t t = 0; t < t_max; ++t) {
    std::vector<std::size_t> active;
    for (std::size_t e = 0; e < traces.size(); ++e)
      if (t < traces[e]->steps.size() && !traces[e]->steps[t].live.empty())
        active.push_back(e);
    if (active.empty()) continue;

    std::size_t total_rows = 0;
    for (std::size_t e : active) total_rows += traces[e]->steps[t].live.size();

    std::vector<int> union_ids;
    Tensor union_obs;
    if (cfg.encoder == EncoderKind::OneHotLinear)
      union_obs = Tensor({total_rows, static_cast<std::size_t>(cfg.obs_dim)});
    std::vector<CommGraph> graphs;
    std::vector<const CommGraph*> graph_parts;
    std::vector<int> union_actions;
    std::vector<double> row_weight(total_rows, 0.0);
    const int comm_exchanges = cfg.temporal ? 1 : cfg.comm_steps;
    std::vector<std::vector<int>> union_symbols(
        cfg.kind == ControllerKind::DiscreteComm
            ? static_cast<std::size_t>(comm_exchanges)
            : 0);
    auto groups = std::make_shared<RowSets>();

    std::size_t row = 0;
    for (std::size_t e : active) {
      const TraceStep& step = traces[e]->steps[t];
      graphs.push_back(
          rollout_detail::episode_graph(cfg, step.live.size(), step.positions));
      std::vector<int> members;
      for (std::size_t j = 0; j < step.live.size(); ++j) {
        if (cfg.encoder == EncoderKind::Lookup)
          union_ids.push_back(step.lookup_ids[j]);
        else
          for (std::size_t c = 0; c < step.obs.cols(); ++c)
            union_obs.at(row, c) = step.obs.at(j, c);
        union_actions.push_back(step.actions[j]);
        members.push_back(static_cast<int>(row));
        ++row;
      }
      groups->lists.push_back(std::move(members));
      for (std::size_t cs = 0; cs < union_symbols.size(); ++cs)
        for (int s : step.symbols.at(cs)) union_symbols[cs].push_back(s);
    }
    for (const CommGraph& g : graphs) graph_parts.push_back(&g);
    CommGraph union_graph = CommGraph::stack(graph_parts);

    ForwardInput in;
    in.graph = &union_graph;
    if (cfg.encoder == EncoderKind::Lookup)
      in.lookup_ids = std::move(union_ids);
    else
      in.features = &union_obs;
    if (cfg.kind == ControllerKind::DiscreteComm) in.forced_symbols = &union_symbols;

    if (cfg.temporal) {
      std::vector<int> gather;
      std::map<AgentKey, int> new_rows;
      int r2 = 0;
      for (std::size_t e : active)
        for (const AgentId& id : traces[e]->steps[t].live) {
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

    ForwardOutput out = ctl.forward(tape, bound, in);
    if (cfg.temporal) carried = out.carried;

    // Baseline per episode: mean of its agents' scalar heads.
    Var b_group = tape.row_set_mean(out.baseline_rows, groups);
    const Tensor& b_vals = tape.value(b_group);

    Tensor returns({active.size(), std::size_t(1)});
    row = 0;
    std::size_t gi = 0;
    for (std::size_t e : active) {
      const double r_t = rtg[e][t];
      returns.at(gi, 0) = r_t;
      const double adv = r_t - b_vals.at(gi, 0);
      for (std::size_t j = 0; j < traces[e]->steps[t].live.size(); ++j, ++row)
        row_weight[row] = adv * scale;
      ++gi;
    }

    // Score term: -sum over rows of logp(action) * advantage.
    Var logp_sel = tape.select_cols(out.head_logprobs[0], union_actions);
    const Tensor& lp_vals = tape.value(logp_sel);
    {
      std::size_t r3 = 0;
      for (std::size_t e : active)
        for (std::size_t j = 0; j < traces[e]->steps[t].live.size(); ++j, ++r3)
          replay_gap = std::max(
              replay_gap, std::abs(lp_vals.at(r3, 0) - traces[e]->steps[t].logp[j]));
    }
    Var weights = tape.constant(Tensor({total_rows, std::size_t(1)},
                                       std::vector<double>(row_weight)));
    if (!baseline_only)
      loss = tape.sub(loss, tape.sum(tape.mul(logp_sel, weights)));
    for (std::size_t cs = 0; cs < out.symbol_logprob_rows.size(); ++cs) {
      const Tensor& slp = tape.value(out.symbol_logprob_rows[cs]);
      std::size_t r3 = 0;
      for (std::size_t e : active)
        for (std::size_t j = 0; j < traces[e]->steps[t].live.size(); ++j, ++r3)
          replay_gap = std::max(replay_gap,
                                std::abs(slp.at(r3, 0) -
                                         traces[e]->steps[t].symbol_logp[cs][j]));
      if (!baseline_only)
        loss = tape.sub(loss, tape.sum(tape.mul(out.symbol_logprob_rows[cs], weights)));
    }

    // Baseline regression: alpha * (R_t - b)^2 per episode.
    Var diff = tape.sub(tape.constant(std::move(returns)), b_group);
    loss = tape.add(loss, tape.scale(tape.sum(tape.mul(diff, diff)), alpha * scale));
  }

  if (stats) {
    stats->loss = tape.value(loss)[0];
    stats->replay_gap = replay_gap;
  }
  if (!std::isfinite(tape.value(loss)[0]))
    throw std::runtime_error("reinforce update: non-finite loss");

  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(bound.vars.size());
  for (Var v : bound.vars) grads.push_back(tape.grad(v));
  return grads;
}

/// One supervised example: a single decision with per-agent target actions.
struct SupervisedExample {
  std::vector<int> lookup_ids;
  Tensor obs;
  std::vector<int> targets;
};

/// Mean cross-entropy over agents and batch; `scale` is 1 / (total agent
/// count across the full batch) so per-chunk sums reduce to the batch mean.
inline std::vector<Tensor> supervised_chunk_grads(
    const Controller& ctl, const std::vector<SupervisedExample>& examples,
    double scale, UpdateStats* stats = nullptr) {
  const ControllerConfig& cfg = ctl.config();
  Tape tape;
  Bound bound = ctl.bind(tape);

  std::size_t total_rows = 0;
  for (const SupervisedExample& ex : examples)
    total_rows += ex.lookup_ids.empty() ? ex.obs.rows() : ex.lookup_ids.size();

  std::vector<int> union_ids;
  Tensor union_obs;
  if (cfg.encoder == EncoderKind::OneHotLinear)
    union_obs = Tensor({total_rows, static_cast<std::size_t>(cfg.obs_dim)});
  std::vector<int> union_targets;
  std::vector<CommGraph> graphs;
  std::vector<const CommGraph*> graph_parts;

  std::size_t row = 0;
  for (const SupervisedExample& ex : examples) {
    std::size_t jn = ex.lookup_ids.empty() ? ex.obs.rows() : ex.lookup_ids.size();
    if (ex.targets.size() != jn)
      throw std::invalid_argument("supervised update: one target per agent required");
    graphs.push_back(cfg.kind == ControllerKind::Independent
                         ? CommGraph::none(jn)
                         : CommGraph::broadcast(jn));
    for (std::size_t j = 0; j < jn; ++j) {
      if (cfg.encoder == EncoderKind::Lookup)
        union_ids.push_back(ex.lookup_ids[j]);
      else
        for (std::size_t c = 0; c < ex.obs.cols(); ++c)
          union_obs.at(row, c) = ex.obs.at(j, c);
      union_targets.push_back(ex.targets[j]);
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

  ForwardOutput out = ctl.forward(tape, bound, in);
  Var picked = tape.select_cols(out.head_logprobs[0], union_targets);
  Var loss = tape.scale(tape.sum(picked), -scale);

  if (stats) stats->loss = tape.value(loss)[0];
  if (!std::isfinite(tape.value(loss)[0]))
    throw std::runtime_error("supervised update: non-finite loss");

  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(bound.vars.size());
  for (Var v : bound.vars) grads.push_back(tape.grad(v));
  return grads;
}

/// out += in, elementwise across the parameter list.
inline void accumulate_grads(std::vector<Tensor>& out, const std::vector<Tensor>& in) {
  if (out.empty()) {
    out = in;
    return;
  }
  for (std::size_t p = 0; p < out.size(); ++p)
    for (std::size_t i = 0; i < out[p].size(); ++i) out[p][i] += in[p][i];
}

}  // namespace commnet
