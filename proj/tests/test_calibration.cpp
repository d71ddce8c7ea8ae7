#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "mexit/calibration.hpp"
#include "mexit/errors.hpp"
#include "mexit/model.hpp"
#include "mexit/ops.hpp"
#include "mexit/rng.hpp"

using namespace mexit;

namespace {

// Draws logits with known sampling distribution: labels ~ Cat(softmax(z)).
// Scaling the stored logits by `scale` makes `scale` the NLL-optimal
// temperature, which is the oracle fit_temperature is checked against.
struct ScaledLogitSet {
  std::vector<std::vector<double>> logits;
  std::vector<std::size_t> labels;
};

ScaledLogitSet sample_scaled_logits(std::size_t n, std::size_t k, double scale,
                                    std::uint64_t seed) {
  Rng rng(seed);
  ScaledLogitSet out;
  out.logits.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(k);
    for (double& v : z) v = rng.uniform(-2.0, 2.0);
    const std::vector<double> p = softmax(z);
    double u = rng.uniform();
    std::size_t label = k - 1;
    for (std::size_t c = 0; c < k; ++c) {
      if (u < p[c]) {
        label = c;
        break;
      }
      u -= p[c];
    }
    for (double& v : z) v *= scale;
    out.logits.push_back(std::move(z));
    out.labels.push_back(label);
  }
  return out;
}

}  // namespace

TEST_CASE("apply_temperature") {
  const std::vector<double> z{2.0, 0.0};
  CHECK(apply_temperature(z, 1.0) == softmax(z));
  const auto halved = apply_temperature(z, 2.0);
  CHECK(halved[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(halved[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
  const auto flat = apply_temperature(z, 1e6);
  CHECK(flat[0] == doctest::Approx(0.5).epsilon(1e-4));
  CHECK_THROWS_AS(apply_temperature(z, 0.0), invalid_input);
  CHECK_THROWS_AS(apply_temperature(z, -1.0), invalid_input);
}

TEST_CASE("apply_temperature preserves the argmax") {
  Rng rng(55);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 2 + rng.below(15);
    std::vector<double> z(k);
    for (double& v : z) v = rng.uniform(-5.0, 5.0);
    const std::size_t base = argmax(softmax(z));
    for (double t : {0.1, 0.5, 2.0, 5.0}) {
      CHECK(argmax(apply_temperature(z, t)) == base);
    }
  }
}

TEST_CASE("ece worked examples") {
  SUBCASE("hand-binned J=2 case") {
    const std::vector<double> conf{0.9, 0.8, 0.3, 0.4};
    const std::vector<std::uint8_t> correct{1, 0, 0, 1};
    // bin [0,0.5): conf .35, acc .5 ; bin [0.5,1]: conf .85, acc .5
    CHECK(std::abs(ece(conf, correct, 2) - 0.25) <= 1e-12);
  }
  SUBCASE("perfect calibration scores zero") {
    std::vector<double> conf(10, 0.7);
    std::vector<std::uint8_t> correct(10, 0);
    for (int i = 0; i < 7; ++i) correct[i] = 1;
    CHECK(ece(conf, correct, 10) <= 1e-12);
  }
  SUBCASE("all correct at full confidence") {
    const std::vector<double> conf{1.0, 1.0, 1.0};
    const std::vector<std::uint8_t> correct{1, 1, 1};
    CHECK(ece(conf, correct, 10) == 0.0);
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(ece(std::vector<double>{1.2}, std::vector<std::uint8_t>{1}, 10),
                    invalid_input);
    CHECK_THROWS_AS(ece(std::vector<double>{-0.1}, std::vector<std::uint8_t>{1}, 10),
                    invalid_input);
    CHECK_THROWS_AS(ece(std::vector<double>{0.5}, std::vector<std::uint8_t>{}, 10),
                    invalid_input);
    CHECK_THROWS_AS(ece(std::vector<double>{}, std::vector<std::uint8_t>{}, 10), invalid_input);
  }
}

TEST_CASE("ece is permutation and duplication invariant") {
  Rng rng(81);
  std::vector<double> conf(64);
  std::vector<std::uint8_t> correct(64);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf[i] = rng.uniform();
    correct[i] = rng.below(2) ? 1 : 0;
  }
  const double base = ece(conf, correct, 10);

  std::vector<std::size_t> perm(conf.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<double> conf_p(conf.size());
  std::vector<std::uint8_t> correct_p(conf.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    conf_p[i] = conf[perm[i]];
    correct_p[i] = correct[perm[i]];
  }
  CHECK(ece(conf_p, correct_p, 10) == base);

  std::vector<double> conf2 = conf;
  conf2.insert(conf2.end(), conf.begin(), conf.end());
  std::vector<std::uint8_t> correct2 = correct;
  correct2.insert(correct2.end(), correct.begin(), correct.end());
  CHECK(std::abs(ece(conf2, correct2, 10) - base) <= 1e-12);
}

TEST_CASE("bin edges: interior edges go up, 1.0 goes to the last bin") {
  const std::vector<double> conf{0.5, 1.0};
  const std::vector<std::uint8_t> correct{1, 1};
  const auto rb = reliability_bins(conf, correct, 2);
  CHECK(rb.bins[0].count == 0);
  CHECK(rb.bins[1].count == 2);
}

TEST_CASE("fit_temperature recovers the identity on well-calibrated logits") {
  const auto set = sample_scaled_logits(20000, 8, 1.0, 301);
  const auto fit = fit_temperature(set.logits, set.labels);
  CHECK_FALSE(fit.skipped);
  CHECK(fit.temperature == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("fit_temperature recovers a 3x logit scale") {
  const auto set = sample_scaled_logits(5000, 8, 3.0, 302);
  const auto fit = fit_temperature(set.logits, set.labels);
  CHECK(fit.temperature >= 2.8);
  CHECK(fit.temperature <= 3.2);
  CHECK(fit.nll_calibrated <= fit.nll_uncalibrated + 1e-9);
}

TEST_CASE("fit_temperature stays inside the search bracket and never hurts NLL") {
  Rng rng(303);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<double>> logits;
    std::vector<std::size_t> labels;
    for (int i = 0; i < 50; ++i) {
      std::vector<double> z(4);
      for (double& v : z) v = rng.uniform(-30.0, 30.0);
      logits.push_back(z);
      labels.push_back(rng.below(4));
    }
    const auto fit = fit_temperature(logits, labels);
    CHECK(fit.temperature >= TEMPERATURE_MIN);
    CHECK(fit.temperature <= TEMPERATURE_MAX);
    CHECK(fit.nll_calibrated <= fit.nll_uncalibrated + 1e-9);
  }
}

TEST_CASE("fit_temperature skips degenerate single-class sets") {
  std::vector<std::vector<double>> logits{{1.0, 0.0}, {2.0, 0.0}};
  std::vector<std::size_t> labels{0, 0};
  const auto fit = fit_temperature(logits, labels);
  CHECK(fit.skipped);
  CHECK(fit.temperature == 1.0);
}

TEST_CASE("recalibrating already-calibrated logits is a fixed point") {
  const auto set = sample_scaled_logits(5000, 8, 3.0, 304);
  const auto first = fit_temperature(set.logits, set.labels);
  std::vector<std::vector<double>> rescaled = set.logits;
  for (auto& z : rescaled) {
    for (double& v : z) v /= first.temperature;
  }
  const auto second = fit_temperature(rescaled, set.labels);
  CHECK(second.temperature == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("binary temperature fitting") {
  Rng rng(305);
  std::vector<double> logits;
  std::vector<int> targets;
  for (int i = 0; i < 4000; ++i) {
    const double z = rng.uniform(-3.0, 3.0);
    targets.push_back(rng.uniform() < sigmoid(z) ? 1 : 0);
    logits.push_back(3.0 * z);  // stored logits run hot by 3x
  }
  const auto fit = fit_temperature_binary(logits, targets);
  CHECK(fit.temperature >= 2.5);
  CHECK(fit.temperature <= 3.5);

  const std::vector<double> one_sided{1.0, 2.0};
  const std::vector<int> ones{1, 1};
  CHECK(fit_temperature_binary(one_sided, ones).skipped);
  const std::vector<int> bad{1, 2};
  CHECK_THROWS_AS(fit_temperature_binary(one_sided, bad), invalid_input);
}

TEST_CASE("per_exit_calibrate produces one entry per exit") {
  BackboneConfig cfg;
  cfg.text_dim = 4;
  cfg.vision_dim = 4;
  cfg.stem_width = 6;
  cfg.fused_width = 6;
  cfg.encoder_layers = 3;
  cfg.classes = 4;

  DatasetSpec spec;
  spec.classes = 4;
  spec.text_dim = 4;
  spec.vision_dim = 4;
  spec.train_size = 16;
  spec.val_size = 64;
  spec.test_size = 16;
  spec.seed = 9;
  const Dataset data = generate_synthetic(spec);

  for (ExitHeadKind head : {ExitHeadKind::Ramp, ExitHeadKind::Gate}) {
    const auto net = MultiExitNetwork::build(
        cfg, ExitPlacement::custom({AnchorPoint::post_fusion(), AnchorPoint::encoder(3)}), head,
        13);
    const CalibrationTable table = per_exit_calibrate(net, data.val);
    REQUIRE(table.exits.size() == net.exit_count());
    CHECK(table.bins == DEFAULT_ECE_BINS);
    CHECK(table.final_entry.has_value());
    for (const CalibrationEntry& e : table.exits) {
      CHECK(e.temperature > 0.0);
      CHECK(e.accuracy >= 0.0);
      CHECK(e.accuracy <= 1.0);
      CHECK(e.ece >= 0.0);
      CHECK(e.ece <= 1.0);
    }
    // deterministic
    const CalibrationTable again = per_exit_calibrate(net, data.val);
    for (std::size_t b = 0; b < table.exits.size(); ++b) {
      CHECK(table.exits[b].temperature == again.exits[b].temperature);
      CHECK(table.exits[b].ece == again.exits[b].ece);
    }
  }
}

TEST_CASE("calibration table json round trip") {
  CalibrationTable table;
  table.bins = 10;
  table.exits.push_back({"PostFusion", 1.5, 1.25, 0.75, 0.0625, false});
  table.exits.push_back({"Encoder(4)", 0.8, 0.8, 0.5, 0.125, false});
  CalibrationEntry fin;
  fin.anchor = "FinalClassifier";
  fin.temperature = 1.1;
  fin.head_temperature = 1.1;
  fin.accuracy = 0.875;
  fin.ece = 0.03125;
  table.final_entry = fin;

  const auto dir = std::filesystem::temp_directory_path() / "mexit_calib_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "table.json";
  save_calibration(table, path);
  const CalibrationTable loaded = load_calibration(path);
  REQUIRE(loaded.exits.size() == 2);
  CHECK(loaded.bins == 10);
  CHECK(loaded.exits[0].anchor == "PostFusion");
  CHECK(loaded.exits[0].temperature == 1.5);
  CHECK(loaded.exits[1].ece == 0.125);
  CHECK(loaded.final_entry.has_value());
  CHECK(loaded.final_entry->temperature == 1.1);
}
