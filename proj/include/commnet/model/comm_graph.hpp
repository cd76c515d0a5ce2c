#pragma once

#include <cstdlib>
#include <memory>
#include <utility>
#include <vector>

#include "commnet/autodiff.hpp"

namespace commnet {

/// Communication topology over the currently live agents: neighbors[j] lists
/// the agents whose hidden states are averaged into agent j's input. Self is
/// never a neighbor. Rebuilt whenever agents move, join or leave.
struct CommGraph {
  std::vector<std::vector<int>> neighbors;

  std::size_t agent_count() const { return neighbors.size(); }

  /// Everyone hears everyone else.
  static CommGraph broadcast(std::size_t j_count) {
    CommGraph g;
    g.neighbors.resize(j_count);
    for (std::size_t j = 0; j < j_count; ++j)
      for (std::size_t o = 0; o < j_count; ++o)
        if (o != j) g.neighbors[j].push_back(static_cast<int>(o));
    return g;
  }

  /// No edges at all (the independent controller's view of the world).
  static CommGraph none(std::size_t j_count) {
    CommGraph g;
    g.neighbors.resize(j_count);
    return g;
  }

  /// Agents within Manhattan distance `range` of each other on the grid.
  static CommGraph local(const std::vector<std::pair<int, int>>& positions, int range) {
    CommGraph g;
    g.neighbors.resize(positions.size());
    for (std::size_t j = 0; j < positions.size(); ++j)
      for (std::size_t o = 0; o < positions.size(); ++o) {
        if (o == j) continue;
        int dist = std::abs(positions[j].first - positions[o].first) +
                   std::abs(positions[j].second - positions[o].second);
        if (dist <= range) g.neighbors[j].push_back(static_cast<int>(o));
      }
    return g;
  }

  /// Stacks per-episode graphs into one block graph over concatenated agent
  /// rows, preserving episode order.
  static CommGraph stack(const std::vector<const CommGraph*>& parts) {
    CommGraph g;
    int offset = 0;
    for (const CommGraph* p : parts) {
      for (const auto& list : p->neighbors) {
        std::vector<int> shifted;
        shifted.reserve(list.size());
        for (int v : list) shifted.push_back(v + offset);
        g.neighbors.push_back(std::move(shifted));
      }
      offset += static_cast<int>(p->neighbors.size());
    }
    return g;
  }

  std::shared_ptr<const RowSets> row_sets() const {
    auto sets = std::make_shared<RowSets>();
    sets->lists = neighbors;
    return sets;
  }
};

}  // namespace commnet
