#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "commnet/envs/env.hpp"

namespace commnet {

enum class TrafficVariant { Easy, Medium, Hard };

inline TrafficVariant traffic_variant_from(const std::string& s) {
  if (s == "easy") return TrafficVariant::Easy;
  if (s == "medium") return TrafficVariant::Medium;
  if (s == "hard") return TrafficVariant::Hard;
  throw std::invalid_argument("unknown traffic variant: " + s);
}

struct TrafficConfig {
  TrafficVariant variant = TrafficVariant::Medium;
  double p_arrive = 0.2;
  int n_max = 10;      // id slot count; sizes the one-hot block
  int live_cap = 0;    // live-car cap; 0 means n_max (curriculum lowers it)
  double r_coll = -10.0;
  double r_time = -0.01;
  int max_steps = 40;
  int vision = 1;           // radius; 0 = the car sees only itself
  bool count_swaps = true;  // two cars exchanging cells also collide

  int cap() const { return live_cap > 0 ? live_cap : n_max; }
  void validate() const {
    if (p_arrive < 0.0 || p_arrive > 1.0)
      throw std::invalid_argument("traffic: p_arrive must be in [0, 1]");
    if (n_max < 1) throw std::invalid_argument("traffic: n_max must be >= 1");
    if (cap() > n_max)
      throw std::invalid_argument("traffic: live cap cannot exceed id slots");
    if (vision < 0) throw std::invalid_argument("traffic: vision must be >= 0");
  }
};

/// Grid, arrival points and route tables for one junction variant. Routes
/// are connected cell paths from an arrival cell to an exit cell at the
/// grid edge, following one-way lanes with right-hand driving.
struct Junction {
  int height = 0, width = 0;
  std::vector<std::vector<std::pair<int, int>>> routes;
  std::vector<std::pair<int, int>> arrivals;        // arrival cells
  std::vector<std::vector<int>> routes_by_arrival;  // arrival -> route indices
};

namespace traffic_detail {

// One directed lane: E/W lanes fix a row, S/N lanes fix a column.
struct Lane {
  char dir;   // 'E', 'W', 'S', 'N'
  int fixed;  // row for E/W, column for S/N
  int road;   // lanes of the same road never connect (no U-turns)
};

inline std::vector<std::pair<int, int>> lane_cells(const Lane& l, int h, int w) {
  std::vector<std::pair<int, int>> cells;
  switch (l.dir) {
    case 'E': for (int c = 0; c < w; ++c) cells.emplace_back(l.fixed, c); break;
    case 'W': for (int c = w - 1; c >= 0; --c) cells.emplace_back(l.fixed, c); break;
    case 'S': for (int r = 0; r < h; ++r) cells.emplace_back(r, l.fixed); break;
    case 'N': for (int r = h - 1; r >= 0; --r) cells.emplace_back(r, l.fixed); break;
    default: throw std::logic_error("lane_cells: bad direction");
  }
  return cells;
}

inline bool horizontal(const Lane& l) { return l.dir == 'E' || l.dir == 'W'; }

inline std::pair<int, int> crossing(const Lane& a, const Lane& b) {
  return horizontal(a) ? std::make_pair(a.fixed, b.fixed)
                       : std::make_pair(b.fixed, a.fixed);
}

inline int index_of(const std::vector<std::pair<int, int>>& cells,
                    std::pair<int, int> cell) {
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i] == cell) return static_cast<int>(i);
  return -1;
}

/// Path from lane A's arrival to lane B's exit with zero, one or two turns.
inline std::vector<std::pair<int, int>> route_between(
    const std::vector<Lane>& lanes, std::size_t ai, std::size_t bi, int h, int w) {
  const Lane& a = lanes[ai];
  const Lane& b = lanes[bi];
  auto acells = lane_cells(a, h, w);
  if (ai == bi) return acells;

  auto bcells = lane_cells(b, h, w);
  if (horizontal(a) != horizontal(b)) {
    auto pivot = crossing(a, b);
    int pa = index_of(acells, pivot);
    int pb = index_of(bcells, pivot);
    std::vector<std::pair<int, int>> path(acells.begin(), acells.begin() + pa + 1);
    path.insert(path.end(), bcells.begin() + pb + 1, bcells.end());
    return path;
  }

  // Parallel lanes: ride the first perpendicular connector headed the right
  // way, then turn again onto B.
  std::optional<std::size_t> best;
  int best_pos = 0;
  for (std::size_t ci = 0; ci < lanes.size(); ++ci) {
    const Lane& c = lanes[ci];
    if (horizontal(c) == horizontal(a)) continue;
    auto ccells = lane_cells(c, h, w);
    int p1 = index_of(ccells, crossing(a, c));
    int p2 = index_of(ccells, crossing(b, c));
    if (p1 < 0 || p2 < 0 || p1 >= p2) continue;  // connector must flow A -> B
    int pos = index_of(acells, crossing(a, c));  // how soon A meets it
    if (!best || pos < best_pos) {
      best = ci;
      best_pos = pos;
    }
  }
  if (!best) throw std::logic_error("route_between: no connector between lanes");
  const Lane& c = lanes[*best];
  auto ccells = lane_cells(c, h, w);
  auto pivot1 = crossing(a, c);
  auto pivot2 = crossing(b, c);
  int pa = index_of(acells, pivot1);
  int pc1 = index_of(ccells, pivot1);
  int pc2 = index_of(ccells, pivot2);
  int pb = index_of(bcells, pivot2);
  std::vector<std::pair<int, int>> path(acells.begin(), acells.begin() + pa + 1);
  path.insert(path.end(), ccells.begin() + pc1 + 1, ccells.begin() + pc2 + 1);
  path.insert(path.end(), bcells.begin() + pb + 1, bcells.end());
  return path;
}

inline Junction build(const std::vector<Lane>& lanes, int h, int w) {
  Junction j;
  j.height = h;
  j.width = w;
  for (std::size_t ai = 0; ai < lanes.size(); ++ai) {
    j.arrivals.push_back(lane_cells(lanes[ai], h, w).front());
    std::vector<int> mine;
    for (std::size_t bi = 0; bi < lanes.size(); ++bi) {
      if (bi != ai && lanes[bi].road == lanes[ai].road) continue;  // no U-turns
      mine.push_back(static_cast<int>(j.routes.size()));
      j.routes.push_back(route_between(lanes, ai, bi, h, w));
    }
    j.routes_by_arrival.push_back(std::move(mine));
  }
  return j;
}

}  // namespace traffic_detail

/// Easy: two one-way roads crossing on 7x7. Medium: a 4-way junction of
/// two-way roads on 14x14 (right-hand lanes). Hard: four connected junctions
/// of two-way roads on 18x18.
inline Junction build_junction(TrafficVariant variant) {
  using traffic_detail::Lane;
  switch (variant) {
    case TrafficVariant::Easy:
      return traffic_detail::build({Lane{'E', 3, 0}, Lane{'S', 3, 1}}, 7, 7);
    case TrafficVariant::Medium:
      // Road 0: rows 6 (westbound) / 7 (eastbound); road 1: cols 6/7.
      return traffic_detail::build(
          {Lane{'E', 7, 0}, Lane{'W', 6, 0}, Lane{'S', 6, 1}, Lane{'N', 7, 1}}, 14, 14);
    case TrafficVariant::Hard:
      return traffic_detail::build(
          {Lane{'E', 6, 0}, Lane{'W', 5, 0}, Lane{'E', 12, 1}, Lane{'W', 11, 1},
           Lane{'S', 5, 2}, Lane{'N', 6, 2}, Lane{'S', 11, 3}, Lane{'N', 12, 3}},
          18, 18);
  }
  throw std::invalid_argument("build_junction: unknown variant");
}

/// Global reward for one step: collision penalties plus the per-car waiting
/// cost, tau being the steps since each present car arrived.
inline double traffic_reward(int collisions, const std::vector<int>& taus,
                             const TrafficConfig& cfg) {
  double r = collisions * cfg.r_coll;
  for (int tau : taus) r += static_cast<double>(tau) * cfg.r_time;
  return r;
}

/// Everything the reward formula and the analysis tools need, per step.
struct TrafficCarRecord {
  int slot, gen, route, row, col, tau, action;  // action -1 on the spawn step
};
struct TrafficStepRecord {
  int step = 0;
  int collisions = 0;
  double reward = 0.0;
  std::vector<TrafficCarRecord> cars;
};

/// Cars follow assigned routes through a junction; gas advances one cell,
/// brake holds position. Collisions are counted (overlaps, optionally
/// swap-throughs) but never block movement. The episode always runs
/// max_steps steps; it fails if any collision ever happened.
class TrafficEnv : public Environment {
public:
  explicit TrafficEnv(TrafficConfig cfg)
      : cfg_(cfg), junction_(build_junction(cfg.variant)) {
    cfg_.validate();
    per_cell_ = cfg_.n_max + junction_.height * junction_.width +
                static_cast<int>(junction_.routes.size());
    int window = 2 * cfg_.vision + 1;
    obs_dim_ = window * window * per_cell_;
  }

  const Junction& junction() const { return junction_; }
  const TrafficConfig& config() const { return cfg_; }

  EnvStep reset(Rng rng) override {
    rng_ = rng;
    cars_.clear();
    next_gen_.assign(static_cast<std::size_t>(cfg_.n_max), 0);
    step_count_ = 0;
    collided_ever_ = false;
    done_ = false;
    log_.clear();

    TrafficStepRecord rec;
    rec.step = 0;
    for (const Car& c : spawn_cars()) rec.cars.push_back(record_of(c, -1));
    log_.push_back(std::move(rec));
    return snapshot(0.0);
  }

  EnvStep step(const std::vector<int>& actions) override {
    if (done_) throw std::logic_error("traffic: episode already finished");
    if (actions.size() != cars_.size())
      throw std::invalid_argument("traffic: one action per live car required");
    ++step_count_;

    for (Car& c : cars_) ++c.tau;

    // All gas moves land simultaneously; collisions never block.
    std::vector<std::pair<int, int>> before;
    for (const Car& c : cars_) before.push_back(cell_of(c));
    for (std::size_t i = 0; i < cars_.size(); ++i) {
      if (actions[i] == kGas) ++cars_[i].pos;
      else if (actions[i] != kBrake)
        throw std::invalid_argument("traffic: unknown action");
    }

    int collisions = 0;
    if (cfg_.count_swaps) {
      for (std::size_t i = 0; i < cars_.size(); ++i)
        for (std::size_t j = i + 1; j < cars_.size(); ++j)
          if (cell_of(cars_[i]) == before[j] && cell_of(cars_[j]) == before[i] &&
              cell_of(cars_[i]) != before[i])
            ++collisions;
    }

    TrafficStepRecord rec;
    rec.step = step_count_;
    std::vector<Car> survivors;
    for (std::size_t i = 0; i < cars_.size(); ++i) {
      rec.cars.push_back(record_of(cars_[i], actions[i]));
      const auto& route = junction_.routes[static_cast<std::size_t>(cars_[i].route)];
      if (cars_[i].pos + 1 < static_cast<int>(route.size()))
        survivors.push_back(cars_[i]);  // cars on the last cell have arrived
    }
    cars_ = std::move(survivors);

    for (const Car& c : spawn_cars()) rec.cars.push_back(record_of(c, -1));

    // Overlap pairs among everyone present now (arrivals included).
    for (std::size_t i = 0; i < cars_.size(); ++i)
      for (std::size_t j = i + 1; j < cars_.size(); ++j)
        if (cell_of(cars_[i]) == cell_of(cars_[j])) ++collisions;

    std::vector<int> taus;
    for (const Car& c : cars_) taus.push_back(c.tau);
    double reward = traffic_reward(collisions, taus, cfg_);
    if (collisions > 0) collided_ever_ = true;

    rec.collisions = collisions;
    rec.reward = reward;
    log_.push_back(std::move(rec));

    done_ = step_count_ >= cfg_.max_steps;
    EnvStep out = snapshot(reward);
    if (done_) out.outcome = collided_ever_ ? "failure" : "success";
    return out;
  }

  int action_count() const override { return 2; }  // gas, brake
  int obs_dim() const override { return obs_dim_; }
  int max_steps() const override { return cfg_.max_steps; }
  bool done() const override { return done_; }

  std::vector<std::pair<int, int>> positions() const override {
    std::vector<std::pair<int, int>> out;
    for (const Car& c : cars_) out.push_back(cell_of(c));
    return out;
  }

  const std::vector<TrafficStepRecord>& log() const { return log_; }
  bool collided() const { return collided_ever_; }
  std::size_t live_count() const { return cars_.size(); }

  static constexpr int kGas = 0;
  static constexpr int kBrake = 1;

private:
  struct Car {
    int slot, gen, route, pos, tau;
  };

  TrafficConfig cfg_;
  Junction junction_;
  Rng rng_{0};
  std::vector<Car> cars_;  // ascending slot order
  std::vector<int> next_gen_;
  int step_count_ = 0;
  int per_cell_ = 0;
  int obs_dim_ = 0;
  bool collided_ever_ = false;
  bool done_ = true;
  std::vector<TrafficStepRecord> log_;

  std::pair<int, int> cell_of(const Car& c) const {
    return junction_.routes[static_cast<std::size_t>(c.route)]
                           [static_cast<std::size_t>(c.pos)];
  }

  TrafficCarRecord record_of(const Car& c, int action) const {
    auto [r, col] = cell_of(c);
    return TrafficCarRecord{c.slot, c.gen, c.route, r, col, c.tau, action};
  }

  std::vector<Car> spawn_cars() {
    std::vector<Car> spawned;
    for (std::size_t a = 0; a < junction_.arrivals.size(); ++a) {
      bool wants = rng_.bernoulli(cfg_.p_arrive);
      if (!wants || static_cast<int>(cars_.size()) >= cfg_.cap()) continue;
      int slot = free_slot();
      const auto& choices = junction_.routes_by_arrival[a];
      int route = choices[rng_.below(choices.size())];
      Car c{slot, next_gen_[static_cast<std::size_t>(slot)]++, route, 0, 0};
      cars_.insert(std::upper_bound(cars_.begin(), cars_.end(), c,
                                    [](const Car& x, const Car& y) { return x.slot < y.slot; }),
                   c);
      spawned.push_back(c);
    }
    return spawned;
  }

  int free_slot() const {
    std::vector<bool> used(static_cast<std::size_t>(cfg_.n_max), false);
    for (const Car& c : cars_) used[static_cast<std::size_t>(c.slot)] = true;
    for (int s = 0; s < cfg_.n_max; ++s)
      if (!used[static_cast<std::size_t>(s)]) return s;
    throw std::logic_error("traffic: no free slot under the live cap");
  }

  EnvStep snapshot(double reward) {
    EnvStep s;
    s.reward = reward;
    s.done = done_;
    for (const Car& c : cars_) s.live.push_back(AgentId{c.slot, c.gen});
    s.obs = Tensor({cars_.size(), static_cast<std::size_t>(obs_dim_)});
    for (std::size_t i = 0; i < cars_.size(); ++i) observe(i, s.obs);
    return s;
  }

  /// For each cell of the vision window: {id, location, route} blocks of the
  /// car standing there (lowest slot wins if cars overlap), zeros otherwise.
  void observe(std::size_t car_index, Tensor& obs) const {
    const Car& me = cars_[car_index];
    auto [mr, mc] = cell_of(me);
    ObsRow row{&obs, car_index};
    const int v = cfg_.vision;
    for (int dr = -v; dr <= v; ++dr)
      for (int dc = -v; dc <= v; ++dc) {
        int r = mr + dr, c = mc + dc;
        const Car* occupant = nullptr;
        if (r >= 0 && r < junction_.height && c >= 0 && c < junction_.width)
          for (const Car& other : cars_)
            if (cell_of(other) == std::make_pair(r, c)) {
              occupant = &other;
              break;
            }
        if (occupant) {
          auto [orow, ocol] = cell_of(*occupant);
          row.block(occupant->slot, cfg_.n_max);
          row.block(orow * junction_.width + ocol, junction_.height * junction_.width);
          row.block(occupant->route, static_cast<int>(junction_.routes.size()));
        } else {
          row.skip(per_cell_);
        }
      }
  }
};

}  // namespace commnet
