#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "commnet/rng.hpp"
#include "commnet/tensor.hpp"

namespace commnet {

/// Stable identity of an agent within an episode. Slots may be reused after
/// an agent leaves; the generation counter tells a new occupant from the old
/// one (fresh carried state, fresh identity).
struct AgentId {
  int slot = 0;
  int gen = 0;
  bool operator==(const AgentId&) const = default;
};

/// What an environment hands back after reset or one step. Observations are
/// row-aligned with `live` (ascending slot order).
struct EnvStep {
  Tensor obs;                    // [J x obs_dim] one-hot blocks; empty for lookup envs
  std::vector<int> lookup_ids;   // identity observations for lookup encoders
  std::vector<AgentId> live;
  double reward = 0.0;
  bool done = false;
  std::string outcome;           // set when done: success/failure, win/loss/draw
};

/// Episode contract shared by all tasks: reset, then step until done.
/// Stepping a finished episode is an error. Identical seed and action
/// sequence reproduce the episode bit for bit.
class Environment {
public:
  virtual ~Environment() = default;

  virtual EnvStep reset(Rng rng) = 0;
  /// `actions` holds one entry per live agent, in `live` order.
  virtual EnvStep step(const std::vector<int>& actions) = 0;

  virtual int action_count() const = 0;
  virtual int obs_dim() const = 0;        // 0 when the encoder is a lookup
  virtual int lookup_rows() const { return 0; }
  virtual int max_steps() const = 0;
  virtual bool done() const = 0;

  /// Grid position per live agent; empty for non-spatial tasks.
  virtual std::vector<std::pair<int, int>> positions() const { return {}; }
};

/// One-hot block writer: each block holds at most one active bit.
struct ObsRow {
  Tensor* t;
  std::size_t row;
  std::size_t cursor = 0;

  void block(int active, int size) {
    if (active >= 0) {
      if (active >= size) throw std::logic_error("ObsRow: one-hot index out of block");
      t->at(row, cursor + static_cast<std::size_t>(active)) = 1.0;
    }
    cursor += static_cast<std::size_t>(size);
  }
  void skip(int size) { cursor += static_cast<std::size_t>(size); }
};

}  // namespace commnet
