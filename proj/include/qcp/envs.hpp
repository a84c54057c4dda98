#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>

#include "qcp/game.hpp"

namespace qcp {

/// Shared action encoding for the grid scenarios.
enum GridAction : int { kStay = 0, kUp = 1, kDown = 2, kRight = 3, kLeft = 4 };

namespace detail {

inline std::pair<int, int> grid_delta(int action) {
    switch (action) {
        case kUp: return {0, 1};
        case kDown: return {0, -1};
        case kRight: return {1, 0};
        case kLeft: return {-1, 0};
        default: return {0, 0};
    }
}

/// Simultaneous-move resolution on a grid. A robot's move is cancelled when
/// it leaves the board, enters a blocked cell, enters a cell occupied by any
/// robot at the start of the step (which also covers swaps), or contests the
/// same destination as another robot.
template <typename Blocked>
inline std::vector<std::pair<int, int>> resolve_grid_moves(
    const std::vector<std::pair<int, int>>& positions, const std::vector<int>& actions, int width,
    int height, Blocked blocked) {
    const std::size_t n = positions.size();
    std::vector<std::pair<int, int>> dest(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto [dx, dy] = grid_delta(actions[i]);
        std::pair<int, int> d{positions[i].first + dx, positions[i].second + dy};
        if (d.first < 0 || d.first >= width || d.second < 0 || d.second >= height || blocked(d)) {
            d = positions[i];
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && positions[j] == d) {
                d = positions[i];
                break;
            }
        }
        dest[i] = d;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dest[i] == dest[j]) {
                dest[i] = positions[i];
                dest[j] = positions[j];
            }
        }
    }
    return dest;
}

inline int manhattan(std::pair<int, int> a, std::pair<int, int> b) {
    return std::abs(a.first - b.first) + std::abs(a.second - b.second);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cooperative navigation
// ---------------------------------------------------------------------------

struct NavConfig {
    int width = 4;
    int height = 4;
    int robots = 3;
    // Fixed per-robot target cells; when empty, targets are resampled with
    // every initial state instead of defining a persistent task instance.
    std::vector<std::pair<int, int>> targets;
};

/// Robots on a small grid, each assigned its own target cell. The team is
/// rewarded by joint proximity and the episode ends when every robot stands
/// on its target. Features: robot coordinates, then target coordinates.
class NavGame : public Game {
public:
    explicit NavGame(NavConfig cfg = {}) : cfg_(cfg) {
        require(cfg_.width >= 2 && cfg_.height >= 2, "NavGame: grid too small");
        require(cfg_.robots >= 1 && cfg_.robots <= cfg_.width * cfg_.height / 2,
                "NavGame: robot count does not fit the grid");
        if (!cfg_.targets.empty()) {
            require(static_cast<int>(cfg_.targets.size()) == cfg_.robots,
                    "NavGame: one target per robot required");
            for (std::size_t i = 0; i < cfg_.targets.size(); ++i) {
                const auto [x, y] = cfg_.targets[i];
                require(x >= 0 && x < cfg_.width && y >= 0 && y < cfg_.height,
                        "NavGame: target outside the grid");
                for (std::size_t k = 0; k < i; ++k) {
                    require(cfg_.targets[k] != cfg_.targets[i], "NavGame: duplicate target cell");
                }
            }
        }
    }

    std::string name() const override { return "nav"; }
    int agent_count() const override { return cfg_.robots; }
    int action_count(int) const override { return 5; }
    int feature_count() const override { return 4 * cfg_.robots; }
    std::vector<double> tolerance() const override {
        return std::vector<double>(static_cast<std::size_t>(feature_count()), 0.5);
    }
    bool integral_grid() const override { return true; }

    GameState sample_initial_state(Rng& rng) const override {
        GameState s;
        s.features.resize(static_cast<std::size_t>(feature_count()));
        do {
            const auto robots = sample_distinct_cells(cfg_.robots, rng);
            const auto targets = cfg_.targets.empty() ? sample_distinct_cells(cfg_.robots, rng)
                                                      : cfg_.targets;
            for (int i = 0; i < cfg_.robots; ++i) {
                s.features[static_cast<std::size_t>(4 * i)] = robots[static_cast<std::size_t>(i)].first;
                s.features[static_cast<std::size_t>(4 * i + 1)] = robots[static_cast<std::size_t>(i)].second;
                s.features[static_cast<std::size_t>(4 * i + 2)] = targets[static_cast<std::size_t>(i)].first;
                s.features[static_cast<std::size_t>(4 * i + 3)] = targets[static_cast<std::size_t>(i)].second;
            }
            s.terminal = all_on_targets(s);
        } while (s.terminal);
        return s;
    }

    StepOutcome resolve(const GameState& state, const JointAction& joint) const override {
        std::vector<std::pair<int, int>> positions(static_cast<std::size_t>(cfg_.robots));
        for (int i = 0; i < cfg_.robots; ++i) positions[static_cast<std::size_t>(i)] = robot_at(state, i);
        const auto moved = detail::resolve_grid_moves(positions, joint.action_ids, cfg_.width,
                                                      cfg_.height, [](std::pair<int, int>) { return false; });
        StepOutcome out;
        out.next_state = state;
        for (int i = 0; i < cfg_.robots; ++i) {
            out.next_state.features[static_cast<std::size_t>(4 * i)] = moved[static_cast<std::size_t>(i)].first;
            out.next_state.features[static_cast<std::size_t>(4 * i + 1)] =
                moved[static_cast<std::size_t>(i)].second;
        }
        out.next_state.terminal = all_on_targets(out.next_state);
        out.reward = 1.0 / (1.0 + distance_sum(out.next_state));
        return out;
    }

    std::string render(const GameState& state) const override {
        std::string out;
        for (int y = cfg_.height - 1; y >= 0; --y) {
            for (int x = 0; x < cfg_.width; ++x) {
                char c = '.';
                for (int i = 0; i < cfg_.robots; ++i) {
                    if (target_at(state, i) == std::make_pair(x, y)) c = static_cast<char>('a' + i);
                }
                for (int i = 0; i < cfg_.robots; ++i) {
                    if (robot_at(state, i) == std::make_pair(x, y)) {
                        c = robot_at(state, i) == target_at(state, i) ? static_cast<char>('A' + i)
                                                                      : static_cast<char>('0' + i);
                    }
                }
                out += c;
            }
            out += '\n';
        }
        return out;
    }

    std::pair<int, int> robot_at(const GameState& s, int i) const {
        return {static_cast<int>(s.features[static_cast<std::size_t>(4 * i)]),
                static_cast<int>(s.features[static_cast<std::size_t>(4 * i + 1)])};
    }
    std::pair<int, int> target_at(const GameState& s, int i) const {
        return {static_cast<int>(s.features[static_cast<std::size_t>(4 * i + 2)]),
                static_cast<int>(s.features[static_cast<std::size_t>(4 * i + 3)])};
    }

private:
    std::vector<std::pair<int, int>> sample_distinct_cells(int count, Rng& rng) const {
        std::vector<std::pair<int, int>> cells;
        while (static_cast<int>(cells.size()) < count) {
            const int x = uniform_index(rng, cfg_.width);
            const int y = uniform_index(rng, cfg_.height);
            bool taken = false;
            for (const auto& c : cells) taken = taken || c == std::make_pair(x, y);
            if (!taken) cells.emplace_back(x, y);
        }
        return cells;
    }

    int distance_sum(const GameState& s) const {
        int total = 0;
        for (int i = 0; i < cfg_.robots; ++i) total += detail::manhattan(robot_at(s, i), target_at(s, i));
        return total;
    }

    bool all_on_targets(const GameState& s) const { return distance_sum(s) == 0; }

    NavConfig cfg_;
};

// ---------------------------------------------------------------------------
// Door passing
// ---------------------------------------------------------------------------

struct DoorConfig {
    int width = 7;
    int height = 5;
    int wall_x = 3;
    int door_y = 2;
    // Target cells for robot 0 (which starts left of the wall) and robot 1
    // (which starts right of it). Each robot's goal lies on the far side, so
    // the two must pass through the single door in opposite directions.
    std::pair<int, int> target0{6, 2};
    std::pair<int, int> target1{0, 2};
};

/// Two robots on opposite sides of a wall must swap sides through the single
/// door cell, each heading for a target behind the other robot's starting
/// area. The reward mixes target proximity with shaping terms for keeping
/// clear of the wall and of each other. Features: robot coordinates, then
/// target coordinates.
class DoorGame : public Game {
public:
    explicit DoorGame(DoorConfig cfg = {}) : cfg_(cfg) {
        require(cfg_.wall_x > 0 && cfg_.wall_x < cfg_.width - 1, "DoorGame: wall must be interior");
        require(cfg_.door_y >= 0 && cfg_.door_y < cfg_.height, "DoorGame: door outside the grid");
        require(cfg_.target0.first > cfg_.wall_x && valid_cell(cfg_.target0),
                "DoorGame: robot 0's target must lie right of the wall");
        require(cfg_.target1.first < cfg_.wall_x && valid_cell(cfg_.target1),
                "DoorGame: robot 1's target must lie left of the wall");
    }

    std::string name() const override { return "door"; }
    int agent_count() const override { return 2; }
    int action_count(int) const override { return 5; }
    int feature_count() const override { return 8; }
    std::vector<double> tolerance() const override { return std::vector<double>(8, 0.5); }
    bool integral_grid() const override { return true; }

    bool is_wall(std::pair<int, int> cell) const {
        return cell.first == cfg_.wall_x && cell.second != cfg_.door_y;
    }

    bool valid_cell(std::pair<int, int> cell) const {
        return cell.first >= 0 && cell.first < cfg_.width && cell.second >= 0 &&
               cell.second < cfg_.height && !is_wall(cell);
    }

    GameState sample_initial_state(Rng& rng) const override {
        GameState s;
        s.features.resize(8);
        const auto left = sample_side(1, 0, cfg_.wall_x, rng);
        const auto right = sample_side(1, cfg_.wall_x + 1, cfg_.width, rng);
        const std::pair<int, int> robots[2] = {left.front(), right.front()};
        const std::pair<int, int> targets[2] = {cfg_.target0, cfg_.target1};
        for (int i = 0; i < 2; ++i) {
            s.features[static_cast<std::size_t>(4 * i)] = robots[i].first;
            s.features[static_cast<std::size_t>(4 * i + 1)] = robots[i].second;
            s.features[static_cast<std::size_t>(4 * i + 2)] = targets[i].first;
            s.features[static_cast<std::size_t>(4 * i + 3)] = targets[i].second;
        }
        s.terminal = false;
        return s;
    }

    StepOutcome resolve(const GameState& state, const JointAction& joint) const override {
        std::vector<std::pair<int, int>> positions{robot_at(state, 0), robot_at(state, 1)};
        const auto moved =
            detail::resolve_grid_moves(positions, joint.action_ids, cfg_.width, cfg_.height,
                                       [this](std::pair<int, int> c) { return is_wall(c); });
        StepOutcome out;
        out.next_state = state;
        for (int i = 0; i < 2; ++i) {
            out.next_state.features[static_cast<std::size_t>(4 * i)] = moved[static_cast<std::size_t>(i)].first;
            out.next_state.features[static_cast<std::size_t>(4 * i + 1)] =
                moved[static_cast<std::size_t>(i)].second;
        }
        out.next_state.terminal = distance_sum(out.next_state) == 0;
        out.reward = reward_of(out.next_state);
        return out;
    }

    double reward_of(const GameState& s) const {
        const double proximity = 0.6 / (1.0 + distance_sum(s));
        double clearance = 0.0;
        for (int i = 0; i < 2; ++i) clearance += wall_clearance(robot_at(s, i));
        clearance /= 2.0;
        const double spacing = detail::manhattan(robot_at(s, 0), robot_at(s, 1));
        return proximity + 0.2 * std::min(1.0, clearance / 2.0) + 0.2 * std::min(1.0, spacing / 3.0);
    }

    std::string render(const GameState& state) const override {
        std::string out;
        for (int y = cfg_.height - 1; y >= 0; --y) {
            for (int x = 0; x < cfg_.width; ++x) {
                char c = is_wall({x, y}) ? '#' : '.';
                for (int i = 0; i < 2; ++i) {
                    if (target_at(state, i) == std::make_pair(x, y)) c = static_cast<char>('a' + i);
                }
                for (int i = 0; i < 2; ++i) {
                    if (robot_at(state, i) == std::make_pair(x, y)) {
                        c = robot_at(state, i) == target_at(state, i) ? static_cast<char>('A' + i)
                                                                      : static_cast<char>('0' + i);
                    }
                }
                out += c;
            }
            out += '\n';
        }
        return out;
    }

    std::pair<int, int> robot_at(const GameState& s, int i) const {
        return {static_cast<int>(s.features[static_cast<std::size_t>(4 * i)]),
                static_cast<int>(s.features[static_cast<std::size_t>(4 * i + 1)])};
    }
    std::pair<int, int> target_at(const GameState& s, int i) const {
        return {static_cast<int>(s.features[static_cast<std::size_t>(4 * i + 2)]),
                static_cast<int>(s.features[static_cast<std::size_t>(4 * i + 3)])};
    }

private:
    std::vector<std::pair<int, int>> sample_side(int count, int x_begin, int x_end, Rng& rng) const {
        std::vector<std::pair<int, int>> cells;
        while (static_cast<int>(cells.size()) < count) {
            const int x = x_begin + uniform_index(rng, x_end - x_begin);
            const int y = uniform_index(rng, cfg_.height);
            bool taken = false;
            for (const auto& c : cells) taken = taken || c == std::make_pair(x, y);
            if (!taken) cells.emplace_back(x, y);
        }
        return cells;
    }

    int wall_clearance(std::pair<int, int> cell) const {
        int best = cfg_.width + cfg_.height;
        for (int y = 0; y < cfg_.height; ++y) {
            if (y == cfg_.door_y) continue;
            best = std::min(best, detail::manhattan(cell, {cfg_.wall_x, y}));
        }
        return best;
    }

    int distance_sum(const GameState& s) const {
        return detail::manhattan(robot_at(s, 0), target_at(s, 0)) +
               detail::manhattan(robot_at(s, 1), target_at(s, 1));
    }

    DoorConfig cfg_;
};

// ---------------------------------------------------------------------------
// Object hand-over
// ---------------------------------------------------------------------------

struct HandoverConfig {
    double base_step = 0.1;
    double arm_step = 0.05;
    double reach = 1.0;              // per-axis bound on rel_ee_xy - rel_base_xy
    double z_range = 0.5;            // bound on |rel_ee_z|
    double meeting_distance = 1.0;   // desired base separation
    double success_threshold = 0.05;
    double tolerance_xi = 0.025;
};

/// Two mobile manipulators exchanging an object. The state is fully relative:
/// planar offset between the two bases and 3-D offset between the two
/// end-effectors. Each agent drives its base (four planar directions) or its
/// arm (six Cartesian directions); there is no idle action. Success requires
/// the bases about a meeting distance apart with the end-effectors touching.
class HandoverGame : public Game {
public:
    explicit HandoverGame(HandoverConfig cfg = {}) : cfg_(cfg) {
        require(cfg_.base_step > 0.0 && cfg_.arm_step > 0.0, "HandoverGame: steps must be positive");
        require(cfg_.success_threshold > 0.0, "HandoverGame: threshold must be positive");
    }

    std::string name() const override { return "handover"; }
    int agent_count() const override { return 2; }
    int action_count(int) const override { return 10; }
    int feature_count() const override { return 5; }
    std::vector<double> tolerance() const override { return std::vector<double>(5, cfg_.tolerance_xi); }

    GameState sample_initial_state(Rng& rng) const override {
        GameState s;
        s.features.resize(5);
        do {
            // Lattice-aligned start so every reachable state stays on the
            // step lattice.
            for (int i = 0; i < 2; ++i) {
                s.features[static_cast<std::size_t>(i)] = cfg_.base_step * (uniform_index(rng, 41) - 20);
            }
            for (int i = 2; i < 4; ++i) {
                s.features[static_cast<std::size_t>(i)] =
                    s.features[static_cast<std::size_t>(i - 2)] +
                    cfg_.arm_step * (uniform_index(rng, 2 * reach_cells() + 1) - reach_cells());
            }
            s.features[4] = cfg_.arm_step * (uniform_index(rng, 2 * z_cells() + 1) - z_cells());
            s.terminal = success(s);
        } while (s.terminal || base_distance(s) < 1.2);
        return s;
    }

    StepOutcome resolve(const GameState& state, const JointAction& joint) const override {
        StepOutcome out;
        out.next_state = state;
        auto& f = out.next_state.features;
        for (int agent = 0; agent < 2; ++agent) {
            // Features are offsets of agent 1 relative to agent 0.
            const double sign = agent == 0 ? -1.0 : 1.0;
            const int a = joint[agent];
            if (a < 4) {
                const int axis = a / 2;
                const double dir = (a % 2 == 0) ? 1.0 : -1.0;
                f[static_cast<std::size_t>(axis)] += sign * dir * cfg_.base_step;
                f[static_cast<std::size_t>(2 + axis)] += sign * dir * cfg_.base_step;
            } else {
                const int axis = (a - 4) / 2;
                const double dir = (a % 2 == 0) ? 1.0 : -1.0;
                f[static_cast<std::size_t>(2 + axis)] += sign * dir * cfg_.arm_step;
            }
        }
        // Keep the combined arm extension inside the reachable box.
        for (int axis = 0; axis < 2; ++axis) {
            const double base = f[static_cast<std::size_t>(axis)];
            double& ee = f[static_cast<std::size_t>(2 + axis)];
            ee = std::clamp(ee, base - cfg_.reach, base + cfg_.reach);
        }
        f[4] = std::clamp(f[4], -cfg_.z_range, cfg_.z_range);

        out.next_state.terminal = success(out.next_state);
        out.reward = 0.5 / (1.0 + std::abs(base_distance(out.next_state) - cfg_.meeting_distance)) +
                     0.5 / (1.0 + ee_distance(out.next_state));
        return out;
    }

    std::string render(const GameState& s) const override {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "bases d=%.2f (%.2f, %.2f)  grippers d=%.3f (%.2f, %.2f, %.2f)%s",
                      base_distance(s), s.features[0], s.features[1], ee_distance(s), s.features[2],
                      s.features[3], s.features[4], s.terminal ? "  [joined]" : "");
        return buf;
    }

    double base_distance(const GameState& s) const {
        return std::hypot(s.features[0], s.features[1]);
    }
    double ee_distance(const GameState& s) const {
        return std::sqrt(s.features[2] * s.features[2] + s.features[3] * s.features[3] +
                         s.features[4] * s.features[4]);
    }
    bool success(const GameState& s) const {
        return std::abs(base_distance(s) - cfg_.meeting_distance) < cfg_.success_threshold &&
               ee_distance(s) < cfg_.success_threshold;
    }

private:
    int reach_cells() const { return static_cast<int>(std::lround(cfg_.reach / cfg_.arm_step)); }
    int z_cells() const { return static_cast<int>(std::lround(cfg_.z_range / cfg_.arm_step)); }

    HandoverConfig cfg_;
};

}  // namespace qcp
