#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "mexit/errors.hpp"
#include "mexit/ops.hpp"
#include "mexit/policy.hpp"
#include "mexit/rng.hpp"

using namespace mexit;

TEST_CASE("msp") {
  const std::vector<double> uniform16(16, 1.0 / 16.0);
  CHECK(msp(uniform16) == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK(msp(std::vector<double>{0, 0, 1, 0}) == 1.0);
  CHECK(msp(softmax(std::vector<double>{2, 0, 0})) == doctest::Approx(0.78699).epsilon(1e-4));
  CHECK_THROWS_AS(msp(std::vector<double>{}), invalid_input);
}

TEST_CASE("decide follows the first-hit rule") {
  const std::vector<double> costs{0.2, 0.6, 1.0};
  const std::vector<std::size_t> preds{3, 7};

  SUBCASE("global threshold") {
    const auto d = decide(ExitPolicy::global(0.9), std::vector<double>{0.6, 0.95}, preds, 1, 0.5,
                          costs);
    CHECK_FALSE(d.is_final);
    CHECK(d.exit_index == 1);
    CHECK(d.predicted_class == 7);
    CHECK(d.confidence == 0.95);
    CHECK(d.cost_fraction == 0.6);
  }

  SUBCASE("nothing fires") {
    const auto d = decide(ExitPolicy::global(0.99), std::vector<double>{0.6, 0.95}, preds, 1,
                          0.5, costs);
    CHECK(d.is_final);
    CHECK(d.exit_index == 2);
    CHECK(d.predicted_class == 1);
    CHECK(d.cost_fraction == 1.0);
  }

  SUBCASE("earliest hit wins") {
    const auto d = decide(ExitPolicy::multi({0.99, 0.99}), std::vector<double>{1.0, 1.0}, preds,
                          1, 0.5, costs);
    CHECK(d.exit_index == 0);
  }

  SUBCASE("length mismatches are rejected") {
    CHECK_THROWS_AS(
        decide(ExitPolicy::multi({0.5}), std::vector<double>{0.6, 0.95}, preds, 1, 0.5, costs),
        invalid_input);
    CHECK_THROWS_AS(decide(ExitPolicy::global(0.5), std::vector<double>{0.6, 0.95}, preds, 1,
                           0.5, std::vector<double>{0.2, 1.0}),
                    invalid_input);
  }
}

TEST_CASE("decide is monotone in thresholds") {
  Rng rng(61);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t exits = 1 + rng.below(6);
    std::vector<double> conf(exits), tau(exits), tau_up(exits), costs(exits + 1);
    std::vector<std::size_t> preds(exits);
    for (std::size_t b = 0; b < exits; ++b) {
      conf[b] = rng.uniform();
      tau[b] = rng.uniform(0.01, 0.99);
      tau_up[b] = std::min(0.999, tau[b] + rng.uniform(0.0, 0.3));
      preds[b] = rng.below(4);
      costs[b] = (static_cast<double>(b) + 1.0) / (static_cast<double>(exits) + 1.0);
    }
    costs[exits] = 1.0;
    const auto lo = decide(ExitPolicy::multi(tau), conf, preds, 0, 0.5, costs);
    const auto hi = decide(ExitPolicy::multi(tau_up), conf, preds, 0, 0.5, costs);
    CHECK(hi.exit_index >= lo.exit_index);
  }
}

TEST_CASE("policy thresholds must sit strictly inside (0,1)") {
  CHECK_THROWS_AS(ExitPolicy::global(0.0), invalid_input);
  CHECK_THROWS_AS(ExitPolicy::global(1.0), invalid_input);
  CHECK_THROWS_AS(ExitPolicy::multi({0.5, 1.0}), invalid_input);
  CHECK_NOTHROW(ExitPolicy::global(0.001));
}

TEST_CASE("heuristic thresholds") {
  SUBCASE("worked two-exit example") {
    // ACC=[0.8,0.9], ECE=[0.1,0.05]: raw=[-7,-17]; eps=0.05 pads to
    // [-17.05,-6.95] so tau = [10.05/10.1, 0.05/10.1]
    const std::vector<double> acc{0.8, 0.9};
    const std::vector<double> err{0.1, 0.05};
    const auto h = heuristic_thresholds(acc, err, 0.05);
    CHECK(h.raw[0] == doctest::Approx(-7.0).epsilon(1e-12));
    CHECK(h.raw[1] == doctest::Approx(-17.0).epsilon(1e-12));
    CHECK(h.thresholds[0] == doctest::Approx(10.05 / 10.1).epsilon(1e-12));
    CHECK(h.thresholds[1] == doctest::Approx(0.05 / 10.1).epsilon(1e-12));
    CHECK(h.thresholds[0] == doctest::Approx(0.99505).epsilon(1e-4));
    CHECK(h.thresholds[1] == doctest::Approx(0.00495).epsilon(1e-2));
  }

  SUBCASE("raw endpoints match the prose semantics") {
    // ACC == ECE means perfect balance: raw 0. ACC == 0 means useless: raw 1.
    const std::vector<double> acc{0.3, 0.0};
    const std::vector<double> err{0.3, 0.2};
    const auto h = heuristic_thresholds(acc, err, 0.05);
    CHECK(h.raw[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(h.raw[1] == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("ece floor guards the division") {
    const std::vector<double> acc{0.5, 0.5};
    const std::vector<double> err{0.0, 0.1};
    const auto h = heuristic_thresholds(acc, err, 0.05);
    CHECK(h.ece_floored);
    for (double t : h.thresholds) CHECK(std::isfinite(t));
  }

  SUBCASE("single exit degenerates to one half") {
    const std::vector<double> acc{0.7};
    const std::vector<double> err{0.1};
    const auto h = heuristic_thresholds(acc, err, 0.05);
    CHECK(h.degenerate);
    CHECK(h.thresholds == std::vector<double>{0.5});
  }

  SUBCASE("normalization preserves order, stays inside (0,1), ignores translation") {
    Rng rng(71);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t exits = 2 + rng.below(12);
      std::vector<double> acc(exits), err(exits);
      for (std::size_t b = 0; b < exits; ++b) {
        acc[b] = rng.uniform(0.0, 1.0);
        err[b] = rng.uniform(0.01, 0.5);
      }
      const double eps = rng.uniform(0.001, 0.5);
      const auto h = heuristic_thresholds(acc, err, eps);
      for (std::size_t b = 0; b < exits; ++b) {
        CHECK(h.thresholds[b] > 0.0);
        CHECK(h.thresholds[b] < 1.0);
        for (std::size_t c = 0; c < exits; ++c) {
          if (h.raw[b] < h.raw[c]) CHECK(h.thresholds[b] < h.thresholds[c]);
        }
      }

      // shifting every raw value by the same constant leaves tau unchanged:
      // with ECE pinned to 1, raw = 1 - ACC, so shift ACC instead
      std::vector<double> ones(exits, 1.0), shifted(exits);
      std::vector<double> acc_small(exits);
      for (std::size_t b = 0; b < exits; ++b) {
        acc_small[b] = acc[b] * 0.25;
        shifted[b] = acc_small[b] + 0.3;
      }
      const auto base = heuristic_thresholds(acc_small, ones, eps);
      const auto moved = heuristic_thresholds(shifted, ones, eps);
      for (std::size_t b = 0; b < exits; ++b) {
        CHECK(moved.thresholds[b] == doctest::Approx(base.thresholds[b]).epsilon(1e-9));
      }
    }
  }

  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(heuristic_thresholds(std::vector<double>{0.5}, std::vector<double>{}, 0.05),
                    invalid_input);
    CHECK_THROWS_AS(
        heuristic_thresholds(std::vector<double>{0.5}, std::vector<double>{0.1}, 0.0),
        invalid_input);
  }
}

TEST_CASE("percentile candidates") {
  SUBCASE("constant confidence collapses to a single candidate") {
    const auto c = percentile_candidates({std::vector<double>(20, 0.8)});
    REQUIRE(c.per_exit.size() == 1);
    CHECK(c.per_exit[0] == std::vector<double>{0.8});
    CHECK_FALSE(c.coarse);
  }

  SUBCASE("deciles of an explicit grid") {
    const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    const auto c = percentile_candidates({grid});
    CHECK(c.per_exit[0] == grid);  // nearest-rank deciles of the grid are the grid
  }

  SUBCASE("candidates are sorted ascending") {
    Rng rng(91);
    std::vector<double> msps(57);
    for (double& v : msps) v = rng.uniform(0.05, 1.0);
    const auto c = percentile_candidates({msps});
    CHECK(std::is_sorted(c.per_exit[0].begin(), c.per_exit[0].end()));
    for (double v : c.per_exit[0]) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  SUBCASE("small samples fall back to a coarse grid with a warning") {
    const auto c = percentile_candidates({std::vector<double>{0.3, 0.9, 0.5}});
    CHECK(c.coarse);
    CHECK(c.per_exit[0] == std::vector<double>{0.3, 0.5, 0.9});
  }

  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(percentile_candidates({}), invalid_input);
    CHECK_THROWS_AS(percentile_candidates({std::vector<double>{}}), invalid_input);
  }
}

namespace {

ThresholdEvaluator toy_evaluator() {
  return [](std::span<const double> taus) {
    double mean = 0.0;
    for (double t : taus) mean += t;
    mean /= static_cast<double>(taus.size());
    return std::pair<double, double>{mean, 1.0 - mean};
  };
}

}  // namespace

TEST_CASE("random multi search") {
  const std::vector<std::vector<double>> grid3x3{{0.1, 0.5, 0.9}, {0.2, 0.4, 0.8}};

  SUBCASE("budget one evaluates exactly one combination") {
    const auto pts = random_multi_search(grid3x3, 1, toy_evaluator(), 5);
    CHECK(pts.size() == 1);
  }

  SUBCASE("small grids are enumerated exhaustively") {
    const auto pts = random_multi_search(grid3x3, 100, toy_evaluator(), 5);
    CHECK(pts.size() == 9);
    std::set<std::vector<double>> distinct;
    for (const auto& p : pts) distinct.insert(p.thresholds);
    CHECK(distinct.size() == 9);
  }

  SUBCASE("sampling without replacement is deterministic in the seed") {
    std::vector<std::vector<double>> grid;
    for (int b = 0; b < 5; ++b) {
      std::vector<double> c;
      for (int i = 1; i <= 9; ++i) c.push_back(static_cast<double>(i) / 10.0);
      grid.push_back(c);
    }
    const auto a = random_multi_search(grid, 500, toy_evaluator(), 42);
    const auto b = random_multi_search(grid, 500, toy_evaluator(), 42);
    const auto c = random_multi_search(grid, 500, toy_evaluator(), 43);
    REQUIRE(a.size() == 500);
    std::set<std::vector<double>> distinct;
    for (const auto& p : a) distinct.insert(p.thresholds);
    CHECK(distinct.size() == 500);
    bool identical = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].thresholds != b[i].thresholds) identical = false;
    }
    CHECK(identical);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].thresholds != c[i].thresholds) differs = true;
    }
    CHECK(differs);
  }

  SUBCASE("every returned vector comes from the candidate grids") {
    const auto pts = random_multi_search(grid3x3, 4, toy_evaluator(), 9);
    for (const auto& p : pts) {
      REQUIRE(p.thresholds.size() == 2);
      CHECK(std::count(grid3x3[0].begin(), grid3x3[0].end(), p.thresholds[0]) == 1);
      CHECK(std::count(grid3x3[1].begin(), grid3x3[1].end(), p.thresholds[1]) == 1);
    }
  }

  SUBCASE("pareto flags mark exactly the nondominated points") {
    const auto pts = random_multi_search(grid3x3, 100, toy_evaluator(), 5);
    // with acc = mean(tau), lat = 1 - mean(tau), every distinct mean is
    // incomparable with the others except ties, which dedup to one flag
    std::size_t flagged = 0;
    for (const auto& p : pts) flagged += p.pareto ? 1 : 0;
    CHECK(flagged > 0);
    std::set<double> distinct_means;
    for (const auto& p : pts) {
      distinct_means.insert(p.accuracy);
    }
    CHECK(flagged == distinct_means.size());
  }

  SUBCASE("invalid inputs") {
    CHECK_THROWS_AS(random_multi_search({}, 10, toy_evaluator(), 0), invalid_input);
    CHECK_THROWS_AS(random_multi_search({{}}, 10, toy_evaluator(), 0), invalid_input);
    CHECK_THROWS_AS(random_multi_search(grid3x3, 0, toy_evaluator(), 0), invalid_input);
  }
}

TEST_CASE("global sweep") {
  std::vector<double> seen;
  GlobalEvaluator ev = [&seen](double tau) {
    seen.push_back(tau);
    return std::pair<double, double>{tau, 1.0 - tau};
  };

  SUBCASE("default step yields 21 points with clamped endpoints") {
    const auto pts = global_sweep(0.05, ev);
    CHECK(pts.size() == 21);
    CHECK(pts.front().tau == 0.001);
    CHECK(pts.back().tau == 0.999);
    CHECK(pts[1].tau == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(pts[19].tau == doctest::Approx(0.95).epsilon(1e-9));
  }

  SUBCASE("coarse step") {
    seen.clear();
    const auto pts = global_sweep(0.3, ev);
    REQUIRE(pts.size() == 4);
    CHECK(pts[1].tau == doctest::Approx(0.3));
    CHECK(pts[2].tau == doctest::Approx(0.6));
  }

  SUBCASE("step outside (0,1) is rejected") {
    CHECK_THROWS_AS(global_sweep(1.0, ev), invalid_input);
    CHECK_THROWS_AS(global_sweep(0.0, ev), invalid_input);
    CHECK_THROWS_AS(global_sweep(-0.2, ev), invalid_input);
  }
}

TEST_CASE("policy json round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "mexit_policy_test";
  std::filesystem::create_directories(dir);

  const ExitPolicy g = ExitPolicy::global(0.65);
  save_policy(g, dir / "g.json");
  const ExitPolicy g2 = load_policy(dir / "g.json");
  CHECK(g2.kind == ExitPolicy::Kind::Global);
  CHECK(g2.global_tau == 0.65);

  const ExitPolicy h = ExitPolicy::heuristic(0.05, {0.25, 0.75});
  save_policy(h, dir / "h.json");
  const ExitPolicy h2 = load_policy(dir / "h.json");
  CHECK(h2.kind == ExitPolicy::Kind::Heuristic);
  CHECK(h2.epsilon == 0.05);
  CHECK(h2.thresholds == std::vector<double>{0.25, 0.75});
}
