#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "qcp/envs.hpp"
#include "test_games.hpp"

using namespace qcp;
using namespace qcp::testing;

namespace {

JointAction joint(std::initializer_list<int> ids) { return JointAction(std::vector<int>(ids)); }

bool near_multiple(double value, double step) {
    const double cells = value / step;
    return std::abs(cells - std::lround(cells)) < 1e-9;
}

}  // namespace

// ---------------------------------------------------------------------------
// Cooperative navigation
// ---------------------------------------------------------------------------

TEST_CASE("navigation geometry and metadata") {
    NavGame game{NavConfig{}};
    CHECK(game.agent_count() == 3);
    CHECK(game.action_count(0) == 5);
    CHECK(game.feature_count() == 12);
    CHECK(game.tolerance() == std::vector<double>(12, 0.5));
    CHECK(game.integral_grid());
    CHECK(game.action_noise() == 0.05);

    CHECK_THROWS_AS(NavGame(NavConfig{1, 4, 1}), std::invalid_argument);
    CHECK_THROWS_AS(NavGame(NavConfig{4, 4, 9}), std::invalid_argument);
}

TEST_CASE("navigation reward follows joint proximity") {
    NavGame game = single_robot_nav(4, 4);

    SECTION("distance four scores one fifth") {
        const GameState s = nav_state(game, {{0, 0}}, {{2, 2}});
        const StepOutcome out = game.resolve(s, joint({kStay}));
        CHECK(out.reward == Catch::Approx(0.2).margin(1e-15));
        CHECK_FALSE(out.next_state.terminal);
    }

    SECTION("reaching the target saturates the reward and terminates") {
        const GameState s = nav_state(game, {{2, 1}}, {{2, 2}});
        const StepOutcome out = game.resolve(s, joint({kUp}));
        CHECK(out.reward == 1.0);
        CHECK(out.next_state.terminal);
    }

    SECTION("reward strictly decreases with distance") {
        double previous = 2.0;
        for (int d = 0; d <= 5; ++d) {
            const GameState s = nav_state(game, {{0, 0}}, {{d <= 3 ? d : 3, d <= 3 ? 0 : d - 3}});
            const StepOutcome out = game.resolve(s, joint({kStay}));
            CHECK(out.reward == Catch::Approx(1.0 / (1.0 + d)).margin(1e-12));
            CHECK(out.reward < previous);
            previous = out.reward;
        }
    }
}

TEST_CASE("navigation movement rules") {
    SECTION("board edges cancel moves") {
        NavGame game = single_robot_nav(3, 3);
        const GameState s = nav_state(game, {{0, 0}}, {{2, 2}});
        for (int action : {kLeft, kDown}) {
            const StepOutcome out = game.resolve(s, joint({action}));
            CHECK(out.next_state.features == s.features);
        }
    }

    NavGame game{NavConfig{4, 4, 2}};

    SECTION("swaps cancel both moves") {
        const GameState s = nav_state(game, {{0, 0}, {1, 0}}, {{3, 3}, {2, 3}});
        const StepOutcome out = game.resolve(s, joint({kRight, kLeft}));
        CHECK(out.next_state.features == s.features);
    }

    SECTION("contested destinations cancel both moves") {
        const GameState s = nav_state(game, {{0, 0}, {2, 0}}, {{3, 3}, {2, 3}});
        const StepOutcome out = game.resolve(s, joint({kRight, kLeft}));
        CHECK(out.next_state.features == s.features);
    }

    SECTION("a cell occupied at the start of the step stays blocked") {
        const GameState s = nav_state(game, {{0, 0}, {1, 0}}, {{3, 3}, {2, 3}});
        const StepOutcome out = game.resolve(s, joint({kRight, kRight}));
        CHECK(out.next_state.features[0] == 0.0);  // follower cancelled
        CHECK(out.next_state.features[1] == 0.0);
        CHECK(out.next_state.features[4] == 2.0);  // leader moved on
        CHECK(out.next_state.features[5] == 0.0);
    }

    SECTION("moving onto a staying robot is cancelled") {
        const GameState s = nav_state(game, {{0, 0}, {1, 0}}, {{3, 3}, {2, 3}});
        const StepOutcome out = game.resolve(s, joint({kRight, kStay}));
        CHECK(out.next_state.features == s.features);
    }

    SECTION("moves only touch robot coordinates, never targets") {
        const GameState s = nav_state(game, {{0, 0}, {1, 2}}, {{3, 3}, {2, 3}});
        const StepOutcome out = game.resolve(s, joint({kUp, kRight}));
        CHECK(out.next_state.features[0] == 0.0);
        CHECK(out.next_state.features[1] == 1.0);
        CHECK(out.next_state.features[4] == 2.0);
        CHECK(out.next_state.features[5] == 2.0);
        for (const std::size_t i : {2u, 3u, 6u, 7u}) {
            CHECK(out.next_state.features[i] == s.features[i]);
        }
    }
}

TEST_CASE("navigation render marks robots, targets and arrivals") {
    NavGame game{NavConfig{2, 2, 1}};
    CHECK(game.render(nav_state(game, {{0, 0}}, {{1, 1}})) == ".a\n0.\n");
    const GameState home = nav_state(game, {{1, 1}}, {{1, 1}});
    CHECK(game.render(home) == ".A\n..\n");
}

TEST_CASE("navigation initial states are valid and non-terminal") {
    NavGame game{NavConfig{}};
    Rng rng(71);
    for (int trial = 0; trial < 100; ++trial) {
        const GameState s = game.sample_initial_state(rng);
        REQUIRE(s.features.size() == 12);
        CHECK_FALSE(s.terminal);
        std::vector<std::pair<int, int>> robots, targets;
        for (int i = 0; i < 3; ++i) {
            robots.push_back(game.robot_at(s, i));
            targets.push_back(game.target_at(s, i));
            for (const auto& cell : {robots.back(), targets.back()}) {
                CHECK(cell.first >= 0);
                CHECK(cell.first < 4);
                CHECK(cell.second >= 0);
                CHECK(cell.second < 4);
            }
        }
        std::sort(robots.begin(), robots.end());
        std::sort(targets.begin(), targets.end());
        CHECK(std::adjacent_find(robots.begin(), robots.end()) == robots.end());
        CHECK(std::adjacent_find(targets.begin(), targets.end()) == targets.end());
    }
}

// ---------------------------------------------------------------------------
// Door passing
// ---------------------------------------------------------------------------

namespace {

GameState door_state(const std::vector<std::pair<int, int>>& robots,
                     const std::vector<std::pair<int, int>>& targets) {
    GameState s;
    bool all_home = true;
    for (std::size_t i = 0; i < robots.size(); ++i) {
        s.features.push_back(robots[i].first);
        s.features.push_back(robots[i].second);
        s.features.push_back(targets[i].first);
        s.features.push_back(targets[i].second);
        all_home = all_home && robots[i] == targets[i];
    }
    s.terminal = all_home;
    return s;
}

}  // namespace

TEST_CASE("door-passing wall layout") {
    DoorGame game;
    CHECK(game.agent_count() == 2);
    CHECK(game.action_count(0) == 5);
    CHECK(game.feature_count() == 8);
    CHECK(game.tolerance() == std::vector<double>(8, 0.5));
    CHECK(game.integral_grid());

    for (int y : {0, 1, 3, 4}) CHECK(game.is_wall({3, y}));
    CHECK_FALSE(game.is_wall({3, 2}));  // the doorway
    for (int y = 0; y < 5; ++y) {
        CHECK_FALSE(game.is_wall({2, y}));
        CHECK_FALSE(game.is_wall({4, y}));
    }

    CHECK_THROWS_AS(DoorGame(DoorConfig{7, 5, 0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(DoorGame(DoorConfig{7, 5, 3, 7}), std::invalid_argument);
}

TEST_CASE("door-passing movement respects the wall") {
    DoorGame game;

    SECTION("wall cells cancel moves on every non-door row") {
        for (int y : {0, 1, 3, 4}) {
            const GameState s = door_state({{2, y}, {0, 2}}, {{5, 2}, {6, 3}});
            const StepOutcome out = game.resolve(s, joint({kRight, kStay}));
            CHECK(out.next_state.features[0] == 2.0);
            CHECK(out.next_state.features[1] == static_cast<double>(y));
        }
    }

    SECTION("the doorway admits passage in both directions") {
        const GameState enter = door_state({{2, 2}, {0, 0}}, {{5, 2}, {6, 3}});
        CHECK(game.resolve(enter, joint({kRight, kStay})).next_state.features[0] == 3.0);

        const GameState leave = door_state({{3, 2}, {0, 0}}, {{5, 2}, {6, 3}});
        CHECK(game.resolve(leave, joint({kRight, kStay})).next_state.features[0] == 4.0);
    }

    SECTION("robots queue through the door one at a time") {
        const GameState s = door_state({{2, 2}, {3, 2}}, {{5, 2}, {6, 3}});
        const StepOutcome out = game.resolve(s, joint({kRight, kRight}));
        CHECK(out.next_state.features[0] == 2.0);  // blocked by the occupant
        CHECK(out.next_state.features[4] == 4.0);  // occupant moved on
    }
}

TEST_CASE("door-passing reward decomposition") {
    DoorGame game;

    SECTION("on-target, clear of the wall and spread out saturates at one") {
        const GameState s = door_state({{5, 0}, {6, 4}}, {{5, 0}, {6, 4}});
        CHECK(game.reward_of(s) == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("adjacent robots earn a third of the spacing term") {
        const GameState s = door_state({{0, 0}, {0, 1}}, {{4, 0}, {4, 1}});
        CHECK(game.reward_of(s) == Catch::Approx(0.6 / 9.0 + 0.2 + 0.2 / 3.0).margin(1e-12));
    }

    SECTION("hugging the wall halves the clearance term") {
        // Clearances 1 and 2 average to 1.5 of the 2.0 cap.
        const GameState s = door_state({{2, 1}, {4, 2}}, {{5, 2}, {6, 3}});
        CHECK(game.reward_of(s) == Catch::Approx(0.6 / 8.0 + 0.2 * 0.75 + 0.2).margin(1e-12));
    }

    SECTION("both robots on targets terminates the episode") {
        const GameState s = door_state({{4, 2}, {6, 3}}, {{5, 2}, {6, 3}});
        const StepOutcome out = game.resolve(s, joint({kRight, kStay}));
        CHECK(out.next_state.terminal);
        CHECK(out.reward == Catch::Approx(0.6 + 0.2 + 0.2 * (2.0 / 3.0)).margin(1e-12));
    }
}

TEST_CASE("door-passing initial states place the robots on opposite sides") {
    DoorGame game;
    Rng rng(73);
    for (int trial = 0; trial < 200; ++trial) {
        const GameState s = game.sample_initial_state(rng);
        REQUIRE(s.features.size() == 8);
        CHECK_FALSE(s.terminal);
        // Robot 0 starts left heading right; robot 1 starts right heading
        // left. Both goals lie across the wall, so each robot must use the
        // single door cell, in opposite directions.
        CHECK(game.robot_at(s, 0).first < 3);
        CHECK(game.robot_at(s, 1).first > 3);
        CHECK(game.target_at(s, 0) == std::make_pair(6, 2));
        CHECK(game.target_at(s, 1) == std::make_pair(0, 2));
        for (int i = 0; i < 2; ++i) {
            CHECK(game.robot_at(s, i).second >= 0);
            CHECK(game.robot_at(s, i).second < 5);
        }
        const double r = game.reward_of(s);
        CHECK(r > 0.0);
        CHECK(r <= 1.0);
    }
}

TEST_CASE("door-passing render shows the wall around the doorway") {
    DoorGame game;
    const std::string view = game.render(door_state({{0, 0}, {1, 1}}, {{4, 0}, {5, 1}}));
    CHECK(std::count(view.begin(), view.end(), '#') == 4);
    CHECK(std::count(view.begin(), view.end(), '\n') == 5);
}

// ---------------------------------------------------------------------------
// Object hand-over
// ---------------------------------------------------------------------------

namespace {

GameState hand_state(const HandoverGame& game, std::vector<double> features) {
    GameState s;
    s.features = std::move(features);
    s.terminal = game.success(s);
    return s;
}

}  // namespace

TEST_CASE("hand-over metadata and relative-feature layout") {
    HandoverGame game;
    CHECK(game.agent_count() == 2);
    CHECK(game.action_count(0) == 10);
    CHECK(game.feature_count() == 5);
    CHECK(game.tolerance() == std::vector<double>(5, 0.025));
    CHECK_FALSE(game.integral_grid());
    CHECK(game.action_noise() == 0.05);

    const GameState s = hand_state(game, {2.0, 0.0, 0.6, 0.8, 0.0});
    CHECK(game.base_distance(s) == Catch::Approx(2.0).margin(1e-15));
    CHECK(game.ee_distance(s) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("hand-over base moves carry the held arm") {
    HandoverGame game;
    const GameState s = hand_state(game, {1.5, 0.0, 0.5, 0.0, 0.2});
    REQUIRE_FALSE(s.terminal);
    // Agent 0 drives its base along +x (shrinking the relative offsets);
    // agent 1 lowers its arm.
    const StepOutcome out = game.resolve(s, joint({0, 9}));
    const auto& f = out.next_state.features;
    CHECK(f[0] == Catch::Approx(1.4).margin(1e-12));
    CHECK(f[1] == 0.0);
    CHECK(f[2] == Catch::Approx(0.4).margin(1e-12));
    CHECK(f[3] == 0.0);
    CHECK(f[4] == Catch::Approx(0.15).margin(1e-12));
    const double expected = 0.5 / (1.0 + 0.4) + 0.5 / (1.0 + std::sqrt(0.4 * 0.4 + 0.15 * 0.15));
    CHECK(out.reward == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("hand-over reward at unit offsets is one half") {
    HandoverGame game;
    // Both z moves cancel the 0.1 offset, landing exactly on base distance 2
    // and gripper distance 1.
    const GameState s = hand_state(game, {2.0, 0.0, 1.0, 0.0, 0.1});
    const StepOutcome out = game.resolve(s, joint({8, 9}));
    CHECK(out.next_state.features == std::vector<double>{2.0, 0.0, 1.0, 0.0, 0.0});
    CHECK(out.reward == Catch::Approx(0.5).margin(1e-15));
    CHECK_FALSE(out.next_state.terminal);
}

TEST_CASE("hand-over success requires meeting distance and touching grippers") {
    HandoverGame game;
    const GameState s = hand_state(game, {1.0, 0.0, -0.05, 0.0, 0.05});
    REQUIRE_FALSE(s.terminal);
    const StepOutcome out = game.resolve(s, joint({8, 4}));
    CHECK(out.next_state.features == std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0});
    CHECK(out.next_state.terminal);
    CHECK(out.reward == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("hand-over arm extension is clamped to the reach box") {
    HandoverGame game;

    SECTION("planar reach limit") {
        const GameState s = hand_state(game, {0.5, 0.0, 1.5, 0.0, 0.0});
        const StepOutcome out = game.resolve(s, joint({8, 4}));  // push past the box
        CHECK(out.next_state.features[2] == Catch::Approx(1.5).margin(1e-12));
        CHECK(out.next_state.features[4] == Catch::Approx(-0.05).margin(1e-12));
    }

    SECTION("vertical range limit") {
        const GameState s = hand_state(game, {0.5, 0.0, 0.5, 0.0, 0.5});
        const StepOutcome out = game.resolve(s, joint({5, 8}));
        CHECK(out.next_state.features[4] == Catch::Approx(0.5).margin(1e-12));
        CHECK(out.next_state.features[2] == Catch::Approx(0.55).margin(1e-12));
    }

    SECTION("base moves preserve the arm offset instead of clamping it") {
        const GameState s = hand_state(game, {1.5, 0.0, 1.0, 0.0, 0.0});
        const StepOutcome out = game.resolve(s, joint({1, 0}));  // both bases retreat
        CHECK(out.next_state.features[0] == Catch::Approx(1.7).margin(1e-12));
        CHECK(out.next_state.features[2] == Catch::Approx(1.2).margin(1e-12));
    }
}

TEST_CASE("hand-over initial states sit on the step lattice, apart and solvable") {
    HandoverGame game;
    Rng rng(79);
    for (int trial = 0; trial < 200; ++trial) {
        const GameState s = game.sample_initial_state(rng);
        REQUIRE(s.features.size() == 5);
        CHECK_FALSE(s.terminal);
        CHECK(game.base_distance(s) >= 1.2);
        CHECK(near_multiple(s.features[0], 0.1));
        CHECK(near_multiple(s.features[1], 0.1));
        CHECK(near_multiple(s.features[2] - s.features[0], 0.05));
        CHECK(near_multiple(s.features[3] - s.features[1], 0.05));
        CHECK(near_multiple(s.features[4], 0.05));
        CHECK(std::abs(s.features[2] - s.features[0]) <= 1.0 + 1e-9);
        CHECK(std::abs(s.features[3] - s.features[1]) <= 1.0 + 1e-9);
        CHECK(std::abs(s.features[4]) <= 0.5 + 1e-9);
    }
}

TEST_CASE("hand-over terminal states refuse further steps") {
    HandoverGame game;
    const GameState done = hand_state(game, {1.0, 0.0, 0.0, 0.0, 0.0});
    REQUIRE(done.terminal);
    Rng rng(83);
    CHECK_THROWS_AS(step(game, done, joint({0, 0}), rng), std::invalid_argument);
}
