#include <catch2/catch_amalgamated.hpp>

#include "qcp/game.hpp"
#include "test_games.hpp"

using namespace qcp;
using namespace qcp::testing;

TEST_CASE("step keeps a noop fixed point and reaches the maximal-reward goal") {
    NavGame game{NavConfig{}};
    game.set_action_noise(0.0);
    Rng rng(1);

    // Robots away from their targets, everyone holds still: nothing moves.
    const GameState parked = nav_state(game, {{0, 0}, {3, 0}, {0, 3}}, {{1, 1}, {2, 2}, {3, 3}});
    const JointAction noop({kStay, kStay, kStay});
    const StepOutcome held = step(game, parked, noop, rng);
    CHECK(held.next_state.features == parked.features);
    CHECK_FALSE(held.next_state.terminal);

    // One step short of the goal: the final moves produce the terminal
    // all-on-target state with the maximal reward 1.
    const GameState almost = nav_state(game, {{1, 0}, {2, 2}, {3, 2}}, {{1, 1}, {2, 3}, {3, 3}});
    const StepOutcome done = step(game, almost, JointAction({kUp, kUp, kUp}), rng);
    CHECK(done.next_state.terminal);
    CHECK(done.reward == 1.0);
    // Stepping the terminal state is a contract violation.
    CHECK_THROWS_AS(step(game, done.next_state, noop, rng), std::invalid_argument);
}

TEST_CASE("step is deterministic under a fixed seed") {
    NavGame game{NavConfig{}};
    const GameState s = nav_state(game, {{0, 0}, {3, 0}, {0, 3}}, {{1, 1}, {2, 2}, {3, 3}});
    const JointAction joint({kUp, kLeft, kRight});
    Rng a(42), b(42);
    const StepOutcome first = step(game, s, joint, a);
    const StepOutcome second = step(game, s, joint, b);
    CHECK(first.next_state.features == second.next_state.features);
    CHECK(first.reward == second.reward);
}

TEST_CASE("action randomization hits the documented 4% deviation rate") {
    NavGame game = single_robot_nav(5, 5);
    GameState s;
    s.features = {2, 2, 0, 0};
    Rng rng(7);
    const GameState expected = game.resolve(s, JointAction({kUp})).next_state;
    int deviations = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        const StepOutcome out = step(game, s, JointAction({kUp}), rng);
        if (out.next_state.features != expected.features) ++deviations;
    }
    // P(deviate) = 0.05 * 4/5: randomization may re-draw the commanded action.
    const double fraction = static_cast<double>(deviations) / trials;
    CHECK(fraction == Catch::Approx(0.04).margin(0.01));
}

TEST_CASE("states_equal compares feature-wise within tolerance") {
    GameState a, b;
    a.features = {1.0, 2.0, 3.0};
    b = a;
    const std::vector<double> xi = {0.5, 0.5, 0.5};
    CHECK(states_equal(a, b, xi));

    b.features[1] += 2.0 * xi[1];
    CHECK_FALSE(states_equal(a, b, xi));
    CHECK_FALSE(states_equal(b, a, xi));  // symmetric

    for (std::size_t f = 0; f < b.features.size(); ++f) b.features[f] = a.features[f] + 0.5 * xi[f];
    CHECK(states_equal(a, b, xi));

    GameState shorter;
    shorter.features = {1.0, 2.0};
    CHECK_THROWS_AS(states_equal(a, shorter, xi), std::invalid_argument);
}

TEST_CASE("run_episode length contract") {
    NavGame game{NavConfig{}};
    game.set_action_noise(0.0);
    const GameState start = nav_state(game, {{0, 0}, {3, 0}, {0, 3}}, {{1, 1}, {2, 2}, {3, 3}});
    const std::vector<Policy> noop(3, [](const GameState&, Rng&) { return static_cast<int>(kStay); });
    Rng rng(3);

    CHECK_THROWS_AS(run_episode(game, noop, start, 0, rng), std::invalid_argument);

    const auto one = run_episode(game, noop, start, 1, rng);
    REQUIRE(one.size() == 1);

    const auto many = run_episode(game, noop, start, 6, rng);
    REQUIRE(many.size() == 6);
    for (const Transition& tr : many) CHECK(tr.state.features == start.features);
}

TEST_CASE("greedy policy solves a two-step instance at the exhaustive optimum") {
    NavGame game = single_robot_nav(3, 2);
    game.set_action_noise(0.0);
    GameState start;
    start.features = {0, 0, 2, 0};

    // Exhaustive breadth-first search over all six robot cells gives the
    // reference optimum number of steps.
    int optimum = -1;
    {
        auto index = [](int x, int y) { return static_cast<std::size_t>(y * 3 + x); };
        std::vector<int> dist(6, -1);
        std::vector<std::pair<int, int>> frontier{{0, 0}};
        dist[index(0, 0)] = 0;
        while (!frontier.empty()) {
            std::vector<std::pair<int, int>> next_frontier;
            for (const auto& [x, y] : frontier) {
                if (x == 2 && y == 0) continue;
                GameState s;
                s.features = {static_cast<double>(x), static_cast<double>(y), 2, 0};
                for (int a = 0; a < 5; ++a) {
                    const GameState next = game.resolve(s, JointAction({a})).next_state;
                    const int nx = static_cast<int>(next.features[0]);
                    const int ny = static_cast<int>(next.features[1]);
                    if (dist[index(nx, ny)] < 0) {
                        dist[index(nx, ny)] = dist[index(x, y)] + 1;
                        next_frontier.emplace_back(nx, ny);
                    }
                }
            }
            frontier = std::move(next_frontier);
        }
        optimum = dist[index(2, 0)];
    }
    REQUIRE(optimum == 2);

    const Policy toward_target = [](const GameState& s, Rng&) {
        if (s.features[2] > s.features[0]) return static_cast<int>(kRight);
        if (s.features[2] < s.features[0]) return static_cast<int>(kLeft);
        if (s.features[3] > s.features[1]) return static_cast<int>(kUp);
        if (s.features[3] < s.features[1]) return static_cast<int>(kDown);
        return static_cast<int>(kStay);
    };
    Rng rng(5);
    const auto trajectory = run_episode(game, {toward_target}, start, 10, rng);
    CHECK(static_cast<int>(trajectory.size()) == optimum);
}
