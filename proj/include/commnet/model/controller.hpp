#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "commnet/autodiff.hpp"
#include "commnet/checkpoint.hpp"
#include "commnet/model/comm_graph.hpp"
#include "commnet/model/config.hpp"
#include "commnet/rng.hpp"
#include "commnet/tensor.hpp"

namespace commnet {

/// Hidden state threaded across environment steps in the temporal regime.
/// Invalid Vars mean "fresh agent": the forward pass substitutes zeros.
struct CarriedState {
  Var hidden;
  Var memory;  // LSTM cell memory
};

/// Receives per-communication-step activations when recording is enabled.
/// Values only; hooking a recorder never touches the computation graph.
struct RecordSink {
  virtual ~RecordSink() = default;
  /// h_rows: agent hiddens entering the step; ctilde_rows: each agent's
  /// communication contribution (the comm weight slab applied to its hidden).
  virtual void on_comm_step(int comm_step, const Tensor& h_rows,
                            const Tensor& ctilde_rows) = 0;
};

/// Per-row categorical sampler; lets a batched forward draw each agent's
/// symbols from that agent's own episode stream.
using RowSampler = std::function<int(int row, const double* weights, int n)>;

struct ForwardInput {
  std::vector<int> lookup_ids;            // Lookup encoder input
  const Tensor* features = nullptr;       // OneHotLinear input [J x obs_dim]
  const CommGraph* graph = nullptr;       // required for commnet / discrete
  CarriedState carried;                   // temporal regime only
  RowSampler sampler;                     // discrete symbol sampling
  const std::vector<std::vector<int>>* forced_symbols = nullptr;  // replay
  RecordSink* recorder = nullptr;
};

struct ForwardOutput {
  std::vector<Var> head_probs;      // per head: [J x A] action probabilities
  std::vector<Var> head_logprobs;   // per head: [J x A] log probabilities
  Var baseline_rows;                // [J x 1] per-agent baseline scalars
  CarriedState carried;             // updated state (temporal regime)
  std::vector<std::vector<int>> symbols;  // per comm step, per agent
  std::vector<Var> symbol_logprob_rows;   // per comm step: [J x 1]
};

/// Parameter leaves for one tape. Workers hold their own; the controller
/// itself stays read-only during rollouts.
struct Bound {
  std::vector<Var> vars;  // aligned with ParamSet order
};

/// Bag of symbols each agent receives: elementwise OR of the one-hot
/// vectors of its neighbors' emitted symbols.
inline Tensor symbol_bags(const std::vector<int>& symbols, const CommGraph& graph,
                          int vocab) {
  Tensor bag({symbols.size(), static_cast<std::size_t>(vocab)});
  for (std::size_t j = 0; j < symbols.size(); ++j)
    for (int o : graph.neighbors[j]) {
      int s = symbols[static_cast<std::size_t>(o)];
      if (s < 0 || s >= vocab)
        throw std::out_of_range("symbol_bags: symbol outside vocabulary");
      bag.at(j, static_cast<std::size_t>(s)) = 1.0;
    }
  return bag;
}

struct DiscreteCommResult {
  std::vector<int> symbols;  // emitted symbol index per agent
  Tensor bags;               // [J x V] incoming bags
};

/// One discrete communication exchange: each agent samples a symbol from
/// Softmax(D^T h_j) and receives the OR-bag of its neighbors' symbols.
inline DiscreteCommResult discrete_comm_step(const Tensor& h, const Tensor& d_matrix,
                                             const CommGraph& graph, Rng& rng) {
  const std::size_t j_count = h.rows();
  const int vocab = static_cast<int>(d_matrix.cols());
  Tensor logits = matmul(h, d_matrix);
  DiscreteCommResult res;
  res.symbols.resize(j_count);
  std::vector<double> w(static_cast<std::size_t>(vocab));
  for (std::size_t j = 0; j < j_count; ++j) {
    double mx = logits.at(j, 0);
    for (int v = 1; v < vocab; ++v) mx = std::max(mx, logits.at(j, static_cast<std::size_t>(v)));
    for (int v = 0; v < vocab; ++v)
      w[static_cast<std::size_t>(v)] = std::exp(logits.at(j, static_cast<std::size_t>(v)) - mx);
    res.symbols[j] = static_cast<int>(rng.categorical(w));
  }
  res.bags = symbol_bags(res.symbols, graph, vocab);
  return res;
}

/// The controller: maps all live agents' state-views to per-agent action
/// distributions plus a baseline head. One parameter set shared by every
/// agent; the number of agents may change between calls (except for the
/// fully-connected baseline, which pins it).
class Controller {
public:
  Controller(ControllerConfig cfg, Rng init_rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_params(init_rng);
  }

  const ControllerConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  Bound bind(Tape& tape) const {
    Bound b;
    b.vars.reserve(params_.count());
    for (std::size_t i = 0; i < params_.count(); ++i)
      b.vars.push_back(tape.leaf(&params_.value(i)));
    return b;
  }

  /// One decision: encoder, K communication steps (or a single recurrent
  /// step in the temporal regime), decoder heads and baseline head.
  ForwardOutput forward(Tape& tape, const Bound& b, const ForwardInput& in) const {
    if (cfg_.kind == ControllerKind::FullyConnected) return forward_fc(tape, b, in);
    return forward_cells(tape, b, in);
  }

  /// Block matrix realizing one linear communication step on the stacked
  /// column vector of all J agent hiddens: the cell weight slab H on the
  /// diagonal and C/(J-1) off-diagonal.
  Tensor build_block_T(int step, std::size_t j_count) const {
    if (j_count < 2) throw std::invalid_argument("build_block_T: need J >= 2");
    if (cfg_.cell == CellKind::LSTM || cfg_.cell_depth != 1)
      throw std::invalid_argument("build_block_T: depth-1 mlp/rnn cells only");
    if (cfg_.kind == ControllerKind::DiscreteComm)
      throw std::invalid_argument("build_block_T: continuous communication only");
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden);
    const Tensor& w = params_.value(step_weight_index(step));
    // Row convention h' = x W maps to column convention via transposed slabs.
    Tensor t({j_count * d, j_count * d});
    const double cbar = 1.0 / static_cast<double>(j_count - 1);
    for (std::size_t bi = 0; bi < j_count; ++bi)
      for (std::size_t bj = 0; bj < j_count; ++bj) {
        const bool diag = bi == bj;
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < d; ++c)
            t.at(bi * d + r, bj * d + c) =
                diag ? w.at(c, r) : cbar * w.at(d + c, r);
      }
    return t;
  }

  /// Communication weight slab of a step: maps an agent's hidden to its
  /// contribution in others' inputs. [d x d] for depth-1 cells, the
  /// first-layer slab for depth-2, the four gate slabs stacked for LSTM.
  Tensor comm_slab(int step) const {
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden);
    const Tensor& w = params_.value(step_weight_index(step));
    Tensor slab({d, w.cols()});
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) slab.at(r, c) = w.at(d + r, c);
    return slab;
  }

  /// Hidden width that approximately parameter-matches the two-hidden-layer
  /// fully-connected controller to the equivalent communicating controller.
  static int matched_fc_width(const ControllerConfig& fc_cfg) {
    ControllerConfig ref = fc_cfg;
    ref.kind = ControllerKind::CommNet;
    ref.fixed_agents = 0;
    ref.fc_width = 0;
    Controller reference(ref, Rng(0));
    const std::size_t target = reference.parameter_count();

    auto fc_count = [&](std::size_t w) {
      const std::size_t jd = static_cast<std::size_t>(fc_cfg.fixed_agents) *
                             static_cast<std::size_t>(fc_cfg.hidden);
      std::size_t n = encoder_param_count(fc_cfg);
      n += jd * w + w;  // first hidden layer
      n += w * w + w;   // second hidden layer
      for (int a : fc_cfg.action_dims)
        n += static_cast<std::size_t>(fc_cfg.fixed_agents) *
             (w * static_cast<std::size_t>(a) + static_cast<std::size_t>(a));
      n += w + 1;  // baseline head
      return n;
    };

    std::size_t best_w = 1;
    std::size_t best_diff = static_cast<std::size_t>(-1);
    for (std::size_t w = 1; w < 100000; ++w) {
      std::size_t n = fc_count(w);
      std::size_t diff = n > target ? n - target : target - n;
      if (diff < best_diff) {
        best_diff = diff;
        best_w = w;
      }
      if (n > target) break;
    }
    return static_cast<int>(best_w);
  }

private:
  struct StepIdx {
    int w = -1, b = -1;    // depth-1 cell
    int w2 = -1, b2 = -1;  // second layer of depth-2 cell
  };
  struct Idx {
    int enc_table = -1, enc_w = -1, enc_b = -1;
    std::vector<StepIdx> steps;
    int disc_d = -1;
    std::vector<std::pair<int, int>> dec;  // (W, b) per head
    int base_w = -1, base_b = -1;
    int fc_w1 = -1, fc_b1 = -1, fc_w2 = -1, fc_b2 = -1;
    std::vector<std::vector<std::pair<int, int>>> fc_dec;  // [agent][head]
    int fc_base_w = -1, fc_base_b = -1;
  };

  ControllerConfig cfg_;
  ParamSet params_;
  Idx idx_;

  static std::size_t encoder_param_count(const ControllerConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.hidden);
    if (cfg.encoder == EncoderKind::Lookup)
      return static_cast<std::size_t>(cfg.lookup_rows) * d;
    return static_cast<std::size_t>(cfg.obs_dim) * d + d;
  }

  bool shared_step_params() const { return cfg_.cell != CellKind::MLP; }
  int step_slot(int step) const { return shared_step_params() ? 0 : step; }

  std::size_t step_weight_index(int step) const {
    return static_cast<std::size_t>(idx_.steps.at(step_slot(step)).w);
  }

  void build_params(Rng& rng) {
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden);

    auto gaussian = [&](std::vector<std::size_t> shape) {
      Tensor t(std::move(shape));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian(0.0, 0.2);
      return t;
    };
    auto add = [&](std::string name, Tensor t) {
      params_.add(std::move(name), std::move(t));
      return static_cast<int>(params_.count() - 1);
    };

    if (cfg_.encoder == EncoderKind::Lookup) {
      idx_.enc_table =
          add("enc.table", gaussian({static_cast<std::size_t>(cfg_.lookup_rows), d}));
    } else {
      idx_.enc_w = add("enc.W", gaussian({static_cast<std::size_t>(cfg_.obs_dim), d}));
      idx_.enc_b = add("enc.b", Tensor({d}));
    }

    if (cfg_.kind == ControllerKind::FullyConnected) {
      if (cfg_.fc_width == 0) cfg_.fc_width = matched_fc_width(cfg_);
      const std::size_t w = static_cast<std::size_t>(cfg_.fc_width);
      const std::size_t jd = static_cast<std::size_t>(cfg_.fixed_agents) * d;
      idx_.fc_w1 = add("fc.W1", gaussian({jd, w}));
      idx_.fc_b1 = add("fc.b1", Tensor({w}));
      idx_.fc_w2 = add("fc.W2", gaussian({w, w}));
      idx_.fc_b2 = add("fc.b2", Tensor({w}));
      idx_.fc_dec.resize(static_cast<std::size_t>(cfg_.fixed_agents));
      for (int j = 0; j < cfg_.fixed_agents; ++j)
        for (std::size_t h = 0; h < cfg_.action_dims.size(); ++h) {
          std::string p = "fc.a" + std::to_string(j) + ".dec" + std::to_string(h);
          const std::size_t a = static_cast<std::size_t>(cfg_.action_dims[h]);
          int wi = add(p + ".W", gaussian({w, a}));
          int bi = add(p + ".b", Tensor({a}));
          idx_.fc_dec[static_cast<std::size_t>(j)].emplace_back(wi, bi);
        }
      idx_.fc_base_w = add("fc.base.W", gaussian({w, std::size_t(1)}));
      idx_.fc_base_b = add("fc.base.b", Tensor({std::size_t(1)}));
      return;
    }

    const std::size_t in = static_cast<std::size_t>(cfg_.cell_input_dim());
    const int step_count = shared_step_params() ? 1 : cfg_.comm_steps;
    for (int s = 0; s < step_count; ++s) {
      std::string p =
          shared_step_params() ? std::string("step.") : "step" + std::to_string(s) + ".";
      StepIdx si;
      if (cfg_.cell == CellKind::LSTM) {
        si.w = add(p + "Wg", gaussian({in, 4 * d}));
        si.b = add(p + "bg", Tensor({4 * d}));
      } else if (cfg_.cell_depth == 2) {
        si.w = add(p + "W1", gaussian({in, d}));
        si.b = add(p + "b1", Tensor({d}));
        si.w2 = add(p + "W2", gaussian({d, d}));
        si.b2 = add(p + "b2", Tensor({d}));
      } else {
        si.w = add(p + "W", gaussian({in, d}));
        si.b = add(p + "b", Tensor({d}));
      }
      idx_.steps.push_back(si);
    }

    if (cfg_.kind == ControllerKind::DiscreteComm)
      idx_.disc_d =
          add("disc.D", gaussian({d, static_cast<std::size_t>(cfg_.symbol_vocab())}));

    for (std::size_t h = 0; h < cfg_.action_dims.size(); ++h) {
      const std::size_t a = static_cast<std::size_t>(cfg_.action_dims[h]);
      int wi = add("dec" + std::to_string(h) + ".W", gaussian({d, a}));
      int bi = add("dec" + std::to_string(h) + ".b", Tensor({a}));
      idx_.dec.emplace_back(wi, bi);
    }
    idx_.base_w = add("base.W", gaussian({d, std::size_t(1)}));
    idx_.base_b = add("base.b", Tensor({std::size_t(1)}));
  }

  static Var pv(const Bound& b, int index) {
    return b.vars.at(static_cast<std::size_t>(index));
  }

  std::size_t agent_count(const ForwardInput& in) const {
    if (cfg_.encoder == EncoderKind::Lookup) {
      if (in.lookup_ids.empty())
        throw std::invalid_argument("forward: lookup encoder needs agent ids");
      return in.lookup_ids.size();
    }
    if (!in.features) throw std::invalid_argument("forward: missing feature matrix");
    if (in.features->rank() != 2 ||
        in.features->cols() != static_cast<std::size_t>(cfg_.obs_dim))
      throw std::invalid_argument("forward: observation layout mismatch: got " +
                                  in.features->shape_string());
    return in.features->rows();
  }

  Var encode(Tape& tape, const Bound& b, const ForwardInput& in) const {
    if (cfg_.encoder == EncoderKind::Lookup)
      return tape.gather_rows(pv(b, idx_.enc_table), in.lookup_ids);
    Var x = tape.constant(*in.features);
    return tape.add_bias(tape.matmul(x, pv(b, idx_.enc_w)), pv(b, idx_.enc_b));
  }

  Var nonlin(Tape& tape, Var x) const { return cfg_.linear_cells ? x : tape.relu(x); }

  /// One cell application: h' = f(h, c [, enc]).
  std::pair<Var, Var> apply_cell(Tape& tape, const Bound& b, int step, Var h, Var c,
                                 Var enc, Var memory) const {
    const StepIdx& si = idx_.steps[static_cast<std::size_t>(step_slot(step))];
    Var x = tape.concat_cols(h, c);
    if (cfg_.feeds_encoding_to_cells()) x = tape.concat_cols(x, enc);

    if (cfg_.cell == CellKind::LSTM) {
      const std::size_t d = static_cast<std::size_t>(cfg_.hidden);
      Var z = tape.add_bias(tape.matmul(x, pv(b, si.w)), pv(b, si.b));
      Var gi = tape.sigmoid(tape.slice_cols(z, 0, d));
      Var gf = tape.sigmoid(tape.slice_cols(z, d, d));
      Var go = tape.sigmoid(tape.slice_cols(z, 2 * d, d));
      Var gu = tape.tanh_(tape.slice_cols(z, 3 * d, d));
      Var mem = tape.add(tape.mul(gf, memory), tape.mul(gi, gu));
      Var out = tape.mul(go, tape.tanh_(mem));
      return {out, mem};
    }

    Var h1 = nonlin(tape, tape.add_bias(tape.matmul(x, pv(b, si.w)), pv(b, si.b)));
    if (cfg_.cell_depth == 2)
      h1 = nonlin(tape, tape.add_bias(tape.matmul(h1, pv(b, si.w2)), pv(b, si.b2)));
    return {h1, memory};
  }

  /// Communication input for one step. Continuous kinds average neighbor
  /// hiddens; the discrete kind samples symbols and ORs the neighbors'
  /// one-hot vectors into a bag (a constant: gradients reach the symbols
  /// only through their recorded log-probabilities).
  Var comm_input(Tape& tape, const Bound& b, Var h, std::size_t j_count,
                 const ForwardInput& in, int step, ForwardOutput& out) const {
    const std::size_t cd = static_cast<std::size_t>(cfg_.comm_dim());
    if (cfg_.kind == ControllerKind::Independent)
      return tape.constant(Tensor({j_count, cd}));

    if (!in.graph || in.graph->agent_count() != j_count)
      throw std::invalid_argument(
          "forward: communication graph must cover the live agents");

    if (cfg_.kind == ControllerKind::CommNet)
      return tape.row_set_mean(h, in.graph->row_sets());

    // Discrete communication.
    Var logits = tape.matmul(h, pv(b, idx_.disc_d));
    Var logp = tape.log_softmax_rows(logits);
    Var probs = tape.softmax_rows(logits);
    const Tensor& pvals = tape.value(probs);

    std::vector<int> symbols(j_count);
    if (in.forced_symbols) {
      symbols = in.forced_symbols->at(static_cast<std::size_t>(step));
      if (symbols.size() != j_count)
        throw std::invalid_argument("forward: forced symbol count mismatch");
    } else {
      if (!in.sampler)
        throw std::invalid_argument("forward: discrete comm needs a sampler");
      for (std::size_t j = 0; j < j_count; ++j)
        symbols[j] = in.sampler(static_cast<int>(j), pvals.data() + j * cd,
                                static_cast<int>(cd));
    }
    out.symbol_logprob_rows.push_back(tape.select_cols(logp, symbols));
    Tensor bag = symbol_bags(symbols, *in.graph, static_cast<int>(cd));
    out.symbols.push_back(std::move(symbols));
    return tape.constant(std::move(bag));
  }

  void record_step(Tape& tape, const ForwardInput& in, int step, Var h) const {
    if (!in.recorder) return;
    if (cfg_.kind != ControllerKind::CommNet)
      throw std::invalid_argument("recording requires the commnet controller");
    const Tensor& hv = tape.value(h);
    Tensor slab = comm_slab(step);
    Tensor ct({hv.rows(), slab.cols()});
    matmul_accumulate(hv, slab, ct);
    in.recorder->on_comm_step(step, hv, ct);
  }

  ForwardOutput forward_cells(Tape& tape, const Bound& b, const ForwardInput& in) const {
    const std::size_t j_count = agent_count(in);
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden);
    ForwardOutput out;

    Var enc = encode(tape, b, in);
    Var h, memory;
    int iterations;
    if (cfg_.temporal) {
      h = in.carried.hidden.valid() ? in.carried.hidden
                                    : tape.constant(Tensor({j_count, d}));
      if (cfg_.cell == CellKind::LSTM) {
        if (in.carried.hidden.valid() && !in.carried.memory.valid())
          throw std::invalid_argument("forward: carried LSTM memory state missing");
        memory = in.carried.memory.valid() ? in.carried.memory
                                           : tape.constant(Tensor({j_count, d}));
      }
      iterations = 1;
    } else {
      h = enc;
      if (cfg_.cell == CellKind::LSTM) memory = tape.constant(Tensor({j_count, d}));
      iterations = cfg_.comm_steps;
    }

    for (int s = 0; s < iterations; ++s) {
      record_step(tape, in, s, h);
      Var c = comm_input(tape, b, h, j_count, in, s, out);
      auto [hn, mn] = apply_cell(tape, b, s, h, c, enc, memory);
      h = hn;
      memory = mn;
    }

    for (std::size_t head = 0; head < cfg_.action_dims.size(); ++head) {
      auto [wi, bi] = idx_.dec[head];
      Var logits = tape.add_bias(tape.matmul(h, pv(b, wi)), pv(b, bi));
      out.head_probs.push_back(tape.softmax_rows(logits));
      out.head_logprobs.push_back(tape.log_softmax_rows(logits));
    }
    out.baseline_rows =
        tape.add_bias(tape.matmul(h, pv(b, idx_.base_w)), pv(b, idx_.base_b));
    out.carried = CarriedState{h, memory};
    return out;
  }

  /// The fixed-size baseline: concatenated encodings through two hidden
  /// layers with per-agent heads. Accepts batched input as long as each
  /// episode contributes exactly fixed_agents contiguous rows.
  ForwardOutput forward_fc(Tape& tape, const Bound& b, const ForwardInput& in) const {
    const std::size_t j_count = agent_count(in);
    const std::size_t j_fixed = static_cast<std::size_t>(cfg_.fixed_agents);
    if (j_count % j_fixed != 0)
      throw std::invalid_argument("fully_connected: built for exactly " +
                                  std::to_string(j_fixed) + " agents, got " +
                                  std::to_string(j_count));
    const std::size_t episodes = j_count / j_fixed;
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden);

    Var enc = encode(tape, b, in);
    Var flat = tape.reshape(enc, {episodes, j_fixed * d});
    Var t1 = tape.relu(
        tape.add_bias(tape.matmul(flat, pv(b, idx_.fc_w1)), pv(b, idx_.fc_b1)));
    Var t2 = tape.relu(
        tape.add_bias(tape.matmul(t1, pv(b, idx_.fc_w2)), pv(b, idx_.fc_b2)));

    // Agent-major head blocks are interleaved back to episode-major rows.
    std::vector<int> interleave(j_count);
    for (std::size_t e = 0; e < episodes; ++e)
      for (std::size_t j = 0; j < j_fixed; ++j)
        interleave[e * j_fixed + j] = static_cast<int>(j * episodes + e);

    ForwardOutput out;
    for (std::size_t head = 0; head < cfg_.action_dims.size(); ++head) {
      Var block;
      for (std::size_t j = 0; j < j_fixed; ++j) {
        auto [wi, bi] = idx_.fc_dec[j][head];
        Var logits = tape.add_bias(tape.matmul(t2, pv(b, wi)), pv(b, bi));
        block = j == 0 ? logits : tape.concat_rows(block, logits);
      }
      Var per_agent = tape.gather_rows(block, interleave);
      out.head_probs.push_back(tape.softmax_rows(per_agent));
      out.head_logprobs.push_back(tape.log_softmax_rows(per_agent));
    }

    Var eb = tape.add_bias(tape.matmul(t2, pv(b, idx_.fc_base_w)),
                           pv(b, idx_.fc_base_b));  // [episodes x 1]
    std::vector<int> repeat(j_count);
    for (std::size_t r = 0; r < j_count; ++r) repeat[r] = static_cast<int>(r / j_fixed);
    out.baseline_rows = tape.gather_rows(eb, repeat);
    return out;
  }
};

}  // namespace commnet
