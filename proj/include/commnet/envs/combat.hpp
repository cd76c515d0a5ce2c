#pragma once

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "commnet/envs/env.hpp"

namespace commnet {

struct CombatConfig {
  int grid = 15;
  int team_size = 5;  // m per team
  int max_health = 3;
  int cooldown_steps = 1;  // steps locked out after an attack
  int fire_range = 1;      // Chebyshev radius: 3x3
  int vision = 1;          // model agents' visual radius
  int bot_vision = 1;      // bots' shared-vision radius
  int spawn_half = 2;      // team square is (2*spawn_half+1)^2
  int max_steps = 40;
  double loss_reward = -1.0;
  double enemy_health_weight = -0.1;

  void validate() const {
    if (team_size < 1) throw std::invalid_argument("combat: team size must be >= 1");
    if (fire_range < 0 || vision < 0 || bot_vision < 0)
      throw std::invalid_argument("combat: radii must be >= 0");
    if (grid < 2 * spawn_half + 1)
      throw std::invalid_argument("combat: grid too small for the spawn square");
    int square = (2 * spawn_half + 1) * (2 * spawn_half + 1);
    if (2 * team_size > square)
      throw std::invalid_argument("combat: overlapping squares cannot hold both teams");
  }
};

struct CombatFighterRecord {
  int slot, team, row, col, health, cooling, action;  // action -1 for dead/bot
};
struct CombatStepRecord {
  int step = 0;
  double reward = 0.0;
  std::vector<CombatFighterRecord> fighters;  // both teams, ascending slot
  std::vector<std::pair<int, int>> damage;    // (attacker slot, target slot)
};

/// Two teams of m on a grid; the model drives team 0, hard-coded bots drive
/// team 1. Move one cell, attack an enemy by slot (lands only within the
/// 3x3 firing range, one-step lockout afterwards), or idle. A team wins when
/// the other is wiped out; 40 steps without a winner is a draw.
///
/// Actions: 0..3 move N/S/W/E, 4..4+m-1 attack enemy by index, 4+m idle.
class CombatEnv : public Environment {
public:
  explicit CombatEnv(CombatConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    per_cell_ = 2 * cfg_.team_size + 2 + cfg_.grid * cfg_.grid + cfg_.max_health + 2;
    int window = 2 * cfg_.vision + 1;
    obs_dim_ = window * window * per_cell_;
  }

  const CombatConfig& config() const { return cfg_; }

  EnvStep reset(Rng rng) override {
    rng_ = rng;
    step_count_ = 0;
    done_ = false;
    outcome_.clear();
    log_.clear();
    fighters_.assign(static_cast<std::size_t>(2 * cfg_.team_size), Fighter{});

    for (int team = 0; team < 2; ++team) {
      int lo = cfg_.spawn_half, hi = cfg_.grid - 1 - cfg_.spawn_half;
      int cr = lo + static_cast<int>(rng_.below(static_cast<std::size_t>(hi - lo + 1)));
      int cc = lo + static_cast<int>(rng_.below(static_cast<std::size_t>(hi - lo + 1)));
      for (int j = 0; j < cfg_.team_size; ++j) {
        int slot = team * cfg_.team_size + j;
        std::vector<std::pair<int, int>> open;
        for (int dr = -cfg_.spawn_half; dr <= cfg_.spawn_half; ++dr)
          for (int dc = -cfg_.spawn_half; dc <= cfg_.spawn_half; ++dc)
            if (!occupied(cr + dr, cc + dc)) open.emplace_back(cr + dr, cc + dc);
        auto cell = open[rng_.below(open.size())];
        Fighter& f = fighters_[static_cast<std::size_t>(slot)];
        f = Fighter{slot, team, cell.first, cell.second, cfg_.max_health, 0, true};
      }
    }

    CombatStepRecord rec;
    rec.step = 0;
    for (const Fighter& f : fighters_)
      rec.fighters.push_back({f.slot, f.team, f.row, f.col, f.health,
                              f.block > 0 ? 1 : 0, -1});
    log_.push_back(std::move(rec));
    return snapshot(0.0);
  }

  EnvStep step(const std::vector<int>& model_actions) override {
    if (done_) throw std::logic_error("combat: episode already finished");
    std::vector<int> live_model;
    for (const Fighter& f : fighters_)
      if (f.alive && f.team == 0) live_model.push_back(f.slot);
    if (model_actions.size() != live_model.size())
      throw std::invalid_argument("combat: one action per live model agent required");
    ++step_count_;

    std::vector<int> action(fighters_.size(), idle_action());
    for (std::size_t i = 0; i < live_model.size(); ++i)
      action[static_cast<std::size_t>(live_model[i])] = model_actions[i];
    for (const Fighter& f : fighters_)
      if (f.alive && f.team == 1)
        action[static_cast<std::size_t>(f.slot)] = bot_policy(f.slot);

    // Moves resolve in ascending slot order on live occupancy: a vacated
    // cell is immediately enterable, a contested cell goes to the lower slot.
    for (Fighter& f : fighters_) {
      if (!f.alive) continue;
      int a = action[static_cast<std::size_t>(f.slot)];
      if (a < 0 || a >= action_count())
        throw std::invalid_argument("combat: unknown action");
      if (a >= 4) continue;
      static constexpr int dr[4] = {-1, 1, 0, 0};
      static constexpr int dc[4] = {0, 0, -1, 1};
      int nr = f.row + dr[a], nc = f.col + dc[a];
      if (nr < 0 || nr >= cfg_.grid || nc < 0 || nc >= cfg_.grid) continue;
      if (occupied(nr, nc)) continue;
      f.row = nr;
      f.col = nc;
    }

    // Attacks are simultaneous on post-move positions. Attacking a dead or
    // out-of-range target is a no-op (no damage, no lockout).
    std::vector<int> damage(fighters_.size(), 0);
    std::vector<bool> was_blocked(fighters_.size());
    std::vector<bool> fired(fighters_.size(), false);
    for (const Fighter& f : fighters_) was_blocked[static_cast<std::size_t>(f.slot)] = f.block > 0;
    CombatStepRecord rec;
    rec.step = step_count_;
    for (Fighter& f : fighters_) {
      if (!f.alive) continue;
      int a = action[static_cast<std::size_t>(f.slot)];
      if (a < 4 || a >= 4 + cfg_.team_size) continue;
      if (was_blocked[static_cast<std::size_t>(f.slot)]) continue;
      int target = (1 - f.team) * cfg_.team_size + (a - 4);
      const Fighter& t = fighters_[static_cast<std::size_t>(target)];
      if (!t.alive) continue;
      if (std::max(std::abs(t.row - f.row), std::abs(t.col - f.col)) > cfg_.fire_range)
        continue;
      ++damage[static_cast<std::size_t>(target)];
      fired[static_cast<std::size_t>(f.slot)] = true;
      rec.damage.emplace_back(f.slot, target);
    }
    for (Fighter& f : fighters_) {
      std::size_t s = static_cast<std::size_t>(f.slot);
      if (was_blocked[s] && f.block > 0) --f.block;
      if (fired[s]) f.block = cfg_.cooldown_steps;
      if (damage[s] > 0) {
        f.health = std::max(0, f.health - damage[s]);
        if (f.health == 0) f.alive = false;
      }
    }

    bool model_alive = false, bots_alive = false;
    for (const Fighter& f : fighters_) {
      if (f.alive && f.team == 0) model_alive = true;
      if (f.alive && f.team == 1) bots_alive = true;
    }

    double reward = 0.0;
    if (!bots_alive && model_alive) {
      done_ = true;
      outcome_ = "win";
    } else if (!model_alive) {
      done_ = true;
      outcome_ = bots_alive ? "loss" : "draw";  // mutual wipe counts as a draw
    } else if (step_count_ >= cfg_.max_steps) {
      done_ = true;
      outcome_ = "draw";
    }
    if (done_) {
      if (outcome_ != "win") reward += cfg_.loss_reward;
      int enemy_health = 0;
      for (const Fighter& f : fighters_)
        if (f.team == 1 && f.alive) enemy_health += f.health;
      reward += cfg_.enemy_health_weight * enemy_health;
    }

    for (const Fighter& f : fighters_)
      rec.fighters.push_back({f.slot, f.team, f.row, f.col, f.health,
                              f.block > 0 ? 1 : 0,
                              f.alive ? action[static_cast<std::size_t>(f.slot)] : -1});
    rec.reward = reward;
    log_.push_back(std::move(rec));

    EnvStep out = snapshot(reward);
    out.outcome = outcome_;
    return out;
  }

  int action_count() const override { return 5 + cfg_.team_size; }
  int idle_action() const { return 4 + cfg_.team_size; }
  int obs_dim() const override { return obs_dim_; }
  int max_steps() const override { return cfg_.max_steps; }
  bool done() const override { return done_; }
  const std::string& outcome() const { return outcome_; }

  std::vector<std::pair<int, int>> positions() const override {
    std::vector<std::pair<int, int>> out;
    for (const Fighter& f : fighters_)
      if (f.alive && f.team == 0) out.emplace_back(f.row, f.col);
    return out;
  }

  const std::vector<CombatStepRecord>& log() const { return log_; }

  struct Fighter {
    int slot = 0, team = 0, row = 0, col = 0, health = 0, block = 0;
    bool alive = false;
  };

  /// Scenario loader for behavioral tests: replaces the board mid-episode.
  /// Slots must be complete (2m fighters, dead ones flagged).
  EnvStep load_scenario(const std::vector<Fighter>& fighters, Rng rng) {
    if (fighters.size() != static_cast<std::size_t>(2 * cfg_.team_size))
      throw std::invalid_argument("combat scenario: need one entry per slot");
    rng_ = rng;
    fighters_ = fighters;
    step_count_ = 0;
    done_ = false;
    outcome_.clear();
    log_.clear();
    CombatStepRecord rec;
    for (const Fighter& f : fighters_)
      rec.fighters.push_back({f.slot, f.team, f.row, f.col, f.health,
                              f.block > 0 ? 1 : 0, -1});
    log_.push_back(std::move(rec));
    return snapshot(0.0);
  }

  /// Exposed for direct behavioral checks of the hard-coded opponent.
  int bot_action(int slot) const { return bot_policy(slot); }

private:

  CombatConfig cfg_;
  Rng rng_{0};
  std::vector<Fighter> fighters_;  // fixed slots: 0..m-1 team 0, m..2m-1 team 1
  int step_count_ = 0;
  int per_cell_ = 0;
  int obs_dim_ = 0;
  bool done_ = true;
  std::string outcome_;
  std::vector<CombatStepRecord> log_;

  bool occupied(int r, int c) const {
    if (r < 0 || r >= cfg_.grid || c < 0 || c >= cfg_.grid) return true;
    for (const Fighter& f : fighters_)
      if (f.alive && f.row == r && f.col == c) return true;
    return false;
  }

  /// Attack the nearest enemy in firing range; otherwise step toward the
  /// nearest enemy visible to any teammate (shared vision); otherwise idle.
  /// Nearest is Manhattan distance, ties to the lower slot.
  int bot_policy(int slot) const {
    const Fighter& me = fighters_[static_cast<std::size_t>(slot)];
    int best = -1, best_dist = 0;
    for (const Fighter& e : fighters_) {
      if (!e.alive || e.team != 0) continue;
      bool visible = false;
      for (const Fighter& mate : fighters_)
        if (mate.alive && mate.team == 1 &&
            std::max(std::abs(e.row - mate.row), std::abs(e.col - mate.col)) <=
                cfg_.bot_vision) {
          visible = true;
          break;
        }
      if (!visible) continue;
      int dist = std::abs(e.row - me.row) + std::abs(e.col - me.col);
      if (best < 0 || dist < best_dist) {
        best = e.slot;
        best_dist = dist;
      }
    }
    if (best < 0) return idle_action();

    const Fighter& enemy = fighters_[static_cast<std::size_t>(best)];
    bool in_range =
        std::max(std::abs(enemy.row - me.row), std::abs(enemy.col - me.col)) <=
        cfg_.fire_range;
    if (in_range && me.block == 0) return 4 + best;  // enemy slots are 0..m-1

    static constexpr int dr[4] = {-1, 1, 0, 0};
    static constexpr int dc[4] = {0, 0, -1, 1};
    for (int a = 0; a < 4; ++a) {
      int nr = me.row + dr[a], nc = me.col + dc[a];
      int now = std::abs(enemy.row - me.row) + std::abs(enemy.col - me.col);
      int then = std::abs(enemy.row - nr) + std::abs(enemy.col - nc);
      if (then < now && !occupied(nr, nc)) return a;
    }
    return idle_action();
  }

  EnvStep snapshot(double reward) {
    EnvStep s;
    s.reward = reward;
    s.done = done_;
    std::vector<int> live;
    for (const Fighter& f : fighters_)
      if (f.alive && f.team == 0) live.push_back(f.slot);
    for (int slot : live) s.live.push_back(AgentId{slot, 0});
    s.obs = Tensor({live.size(), static_cast<std::size_t>(obs_dim_)});
    for (std::size_t i = 0; i < live.size(); ++i) observe(live[i], i, s.obs);
    return s;
  }

  /// Window cells in row-major order; per cell the blocks {id, team,
  /// location, health, cooldown} of the live agent standing there.
  void observe(int slot, std::size_t row_index, Tensor& obs) const {
    const Fighter& me = fighters_[static_cast<std::size_t>(slot)];
    ObsRow row{&obs, row_index};
    for (int dr = -cfg_.vision; dr <= cfg_.vision; ++dr)
      for (int dc = -cfg_.vision; dc <= cfg_.vision; ++dc) {
        int r = me.row + dr, c = me.col + dc;
        const Fighter* who = nullptr;
        if (r >= 0 && r < cfg_.grid && c >= 0 && c < cfg_.grid)
          for (const Fighter& f : fighters_)
            if (f.alive && f.row == r && f.col == c) {
              who = &f;
              break;
            }
        if (who) {
          row.block(who->slot, 2 * cfg_.team_size);
          row.block(who->team, 2);
          row.block(who->row * cfg_.grid + who->col, cfg_.grid * cfg_.grid);
          row.block(who->health - 1, cfg_.max_health);
          row.block(who->block > 0 ? 1 : 0, 2);
        } else {
          row.skip(per_cell_);
        }
      }
  }
};

}  // namespace commnet
