#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mexit/data.hpp"
#include "mexit/errors.hpp"
#include "mexit/rng.hpp"

using namespace mexit;

namespace {

DatasetSpec tiny_spec() {
  DatasetSpec spec;
  spec.classes = 8;
  spec.text_dim = 6;
  spec.vision_dim = 6;
  spec.train_size = 64;
  spec.val_size = 32;
  spec.test_size = 32;
  spec.seed = 17;
  return spec;
}

// Ridge-regression probe on a single modality, fit on `fit` and scored on
// `eval`: balanced accuracy (mean of true-positive and true-negative rates)
// with the threshold chosen on the fit split. The test-side oracle for tier
// separability.
double linear_probe_balanced_accuracy(const std::vector<MultimodalSample>& fit,
                                      const std::vector<MultimodalSample>& eval_split,
                                      std::size_t positive_class, bool use_vision) {
  const std::vector<MultimodalSample>& samples = fit;
  const std::size_t dim =
      use_vision ? samples.front().vision.size() : samples.front().text.size();
  const std::size_t d = dim + 1;  // bias column
  std::vector<double> xtx(d * d, 0.0), xty(d, 0.0);
  auto feature = [&](const MultimodalSample& s, std::size_t j) {
    if (j == dim) return 1.0;
    return use_vision ? s.vision[j] : s.text[j];
  };
  for (const MultimodalSample& s : samples) {
    const double y = s.label == positive_class ? 1.0 : -1.0;
    for (std::size_t i = 0; i < d; ++i) {
      xty[i] += feature(s, i) * y;
      for (std::size_t j = 0; j < d; ++j) xtx[i * d + j] += feature(s, i) * feature(s, j);
    }
  }
  for (std::size_t i = 0; i < d; ++i) xtx[i * d + i] += 1e-3;  // ridge

  // Gauss-Jordan solve (tiny system)
  std::vector<double> w = xty;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r) {
      if (std::abs(xtx[r * d + col]) > std::abs(xtx[pivot * d + col])) pivot = r;
    }
    for (std::size_t j = 0; j < d; ++j) std::swap(xtx[col * d + j], xtx[pivot * d + j]);
    std::swap(w[col], w[pivot]);
    const double diag = xtx[col * d + col];
    for (std::size_t j = 0; j < d; ++j) xtx[col * d + j] /= diag;
    w[col] /= diag;
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double f = xtx[r * d + col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) xtx[r * d + j] -= f * xtx[col * d + j];
      w[r] -= f * w[col];
    }
  }

  auto score_all = [&](const std::vector<MultimodalSample>& split) {
    std::vector<std::pair<double, bool>> scored;  // (score, is_positive)
    for (const MultimodalSample& s : split) {
      double score = w[dim];
      for (std::size_t j = 0; j < dim; ++j) score += w[j] * feature(s, j);
      scored.emplace_back(score, s.label == positive_class);
    }
    std::sort(scored.begin(), scored.end());
    return scored;
  };
  auto balanced = [](const std::vector<std::pair<double, bool>>& scored, double threshold) {
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (const auto& [score, positive] : scored) {
      const bool flagged = score > threshold;
      if (positive) {
        flagged ? ++tp : ++fn;
      } else {
        flagged ? ++fp : ++tn;
      }
    }
    const double tpr = static_cast<double>(tp) / std::max<std::size_t>(1, tp + fn);
    const double tnr = static_cast<double>(tn) / std::max<std::size_t>(1, tn + fp);
    return 0.5 * (tpr + tnr);
  };

  // pick the threshold on the fit split, between consecutive scores
  const auto fit_scored = score_all(fit);
  double best_threshold = 0.0, best = -1.0;
  for (std::size_t i = 0; i + 1 < fit_scored.size(); ++i) {
    const double mid = 0.5 * (fit_scored[i].first + fit_scored[i + 1].first);
    const double acc = balanced(fit_scored, mid);
    if (acc > best) {
      best = acc;
      best_threshold = mid;
    }
  }
  return balanced(score_all(eval_split), best_threshold);
}

std::vector<MultimodalSample> filter_labels(const std::vector<MultimodalSample>& samples,
                                            std::size_t a, std::size_t b) {
  std::vector<MultimodalSample> out;
  for (const MultimodalSample& s : samples) {
    if (s.label == a || s.label == b) out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("default spec dimensions and balance") {
  DatasetSpec spec;
  spec.seed = 3;
  const Dataset data = generate_synthetic(spec);
  CHECK(data.train.size() == 800);
  CHECK(data.val.size() == 400);
  CHECK(data.test.size() == 400);

  for (const auto* split : {&data.train, &data.val, &data.test}) {
    std::vector<std::size_t> counts(spec.classes, 0);
    for (const MultimodalSample& s : *split) counts[s.label] += 1;
    for (std::size_t c = 0; c < spec.classes; ++c) {
      CHECK(counts[c] == split->size() / spec.classes);
    }
  }

  std::set<std::uint64_t> ids;
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const MultimodalSample& s : *split) CHECK(ids.insert(s.id).second);
  }
  CHECK(ids.size() == 1600);
}

TEST_CASE("generation is deterministic and validates sizes") {
  const auto spec = tiny_spec();
  const Dataset a = generate_synthetic(spec);
  const Dataset b = generate_synthetic(spec);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].text == b.train[i].text);
    CHECK(a.train[i].vision == b.train[i].vision);
  }

  DatasetSpec bad = spec;
  bad.train_size = 63;
  CHECK_THROWS_AS(generate_synthetic(bad), invalid_input);
  DatasetSpec bad_tiers = spec;
  bad_tiers.tiers.assign(3, DifficultyTier::VisionEasy);
  CHECK_THROWS_AS(generate_synthetic(bad_tiers), invalid_input);
}

TEST_CASE("tier separability under a linear probe") {
  DatasetSpec spec;  // default 16-class layout, tiers cycle V/T/F/D
  spec.seed = 5;
  const Dataset data = generate_synthetic(spec);
  const auto tiers = spec.resolved_tiers();

  std::vector<std::size_t> deep_classes;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    if (tiers[c] == DifficultyTier::DeepOnly) deep_classes.push_back(c);
  }

  for (std::size_t c = 0; c < spec.classes; ++c) {
    if (tiers[c] == DifficultyTier::VisionEasy) {
      CHECK(linear_probe_balanced_accuracy(data.train, data.test, c, true) > 0.9);
    }
    if (tiers[c] == DifficultyTier::TextEasy) {
      CHECK(linear_probe_balanced_accuracy(data.train, data.test, c, false) > 0.9);
    }
  }

  // Deep-only classes hide the label in the cross-modal sign product: within
  // a partner pair the per-modality marginals coincide, so no affine probe
  // beats chance on either modality alone.
  for (std::size_t i = 0; i + 1 < deep_classes.size(); i += 2) {
    const std::size_t a = deep_classes[i];
    const std::size_t b = deep_classes[i + 1];
    const auto fit = filter_labels(data.train, a, b);
    const auto eval_split = filter_labels(data.test, a, b);
    CHECK(linear_probe_balanced_accuracy(fit, eval_split, a, true) < 0.65);
    CHECK(linear_probe_balanced_accuracy(fit, eval_split, a, false) < 0.65);
  }
}

TEST_CASE("generator means are recoverable from a large sample") {
  DatasetSpec spec;
  spec.classes = 8;
  spec.train_size = 4800;  // 600 per class
  spec.val_size = 8;
  spec.test_size = 8;
  spec.seed = 12;
  const Dataset data = generate_synthetic(spec);
  const auto tiers = spec.resolved_tiers();
  const std::size_t n = spec.train_size / spec.classes;

  for (std::size_t c = 0; c < spec.classes; ++c) {
    const ClassMeans expected = expected_class_means(spec, c);
    std::vector<double> text_mean(spec.text_dim, 0.0), vision_mean(spec.vision_dim, 0.0);
    for (const MultimodalSample& s : data.train) {
      if (s.label != c) continue;
      for (std::size_t j = 0; j < spec.text_dim; ++j) text_mean[j] += s.text[j];
      for (std::size_t j = 0; j < spec.vision_dim; ++j) vision_mean[j] += s.vision[j];
    }
    for (double& v : text_mean) v /= static_cast<double>(n);
    for (double& v : vision_mean) v /= static_cast<double>(n);

    // 3x the standard deviation of the mean-estimator norm; deep-only classes
    // add signature variance from the per-sample sign flips.
    auto bound = [&](double noise, double scale, std::size_t dim) {
      return 3.0 * std::sqrt((static_cast<double>(dim) * noise * noise + scale * scale) /
                             static_cast<double>(n));
    };
    double noise = spec.easy_noise, extra = 0.0;
    if (tiers[c] == DifficultyTier::FusionEasy) noise = spec.fusion_noise;
    if (tiers[c] == DifficultyTier::DeepOnly) {
      noise = spec.deep_noise;
      extra = spec.deep_scale;
    }
    double text_err = 0.0, vision_err = 0.0;
    for (std::size_t j = 0; j < spec.text_dim; ++j) {
      text_err += (text_mean[j] - expected.text[j]) * (text_mean[j] - expected.text[j]);
    }
    for (std::size_t j = 0; j < spec.vision_dim; ++j) {
      vision_err += (vision_mean[j] - expected.vision[j]) * (vision_mean[j] - expected.vision[j]);
    }
    CHECK(std::sqrt(text_err) <= bound(noise, extra, spec.text_dim));
    CHECK(std::sqrt(vision_err) <= bound(noise, extra, spec.vision_dim));
  }
}

TEST_CASE("dataset save/load round trip") {
  const auto spec = tiny_spec();
  const Dataset data = generate_synthetic(spec);
  const auto dir = std::filesystem::temp_directory_path() / "mexit_data_test";
  save_dataset(data, dir);
  const Dataset loaded = load_dataset(dir);
  REQUIRE(loaded.train.size() == data.train.size());
  REQUIRE(loaded.val.size() == data.val.size());
  REQUIRE(loaded.test.size() == data.test.size());
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    CHECK(loaded.train[i].id == data.train[i].id);
    CHECK(loaded.train[i].label == data.train[i].label);
    CHECK(loaded.train[i].text == data.train[i].text);      // exact double round trip
    CHECK(loaded.train[i].vision == data.train[i].vision);
  }

  SUBCASE("truncated split file names the problem") {
    std::ifstream in(dir / "train.jsonl");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    std::ofstream out(dir / "train.jsonl");
    for (std::size_t i = 0; i + 4 < lines.size(); ++i) out << lines[i] << "\n";
    out.close();
    CHECK_THROWS_AS(load_dataset(dir), format_error);
  }
}

TEST_CASE("logit trace io") {
  LogitTrace trace;
  trace.exit_count = 2;
  trace.classes = 3;
  trace.anchors = {"PostFusion", "Encoder(2)"};
  LogitTraceRecord r1;
  r1.exit_logits = {{0.1, -0.2, 0.3}, {1.0, 2.0, -1.0}};
  r1.final_logits = {0.25, 0.5, -0.125};
  r1.label = 1;
  r1.cost_fractions = {0.25, 0.5, 1.0};
  LogitTraceRecord r2 = r1;
  r2.label = 2;
  r2.gate_logits = {0.4, -0.7};
  trace.records = {r1, r2};

  const auto dir = std::filesystem::temp_directory_path() / "mexit_trace_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "trace.jsonl";
  save_logit_trace(trace, path);

  const LogitTrace loaded = load_logit_trace(path);
  CHECK(loaded.exit_count == 2);
  CHECK(loaded.classes == 3);
  CHECK(loaded.anchors == trace.anchors);
  REQUIRE(loaded.records.size() == 2);
  CHECK(loaded.records[0].exit_logits == r1.exit_logits);
  CHECK(loaded.records[0].cost_fractions == r1.cost_fractions);
  CHECK(loaded.records[1].gate_logits == r2.gate_logits);
  CHECK(loaded.records[1].label == 2);

  SUBCASE("hand-written two-sample file parses to the expected records") {
    const auto hand = dir / "hand.jsonl";
    std::ofstream out(hand);
    out << R"({"v":1,"kind":"logit-trace","B":1,"K":2,"anchors":["PostFusion"]})" << "\n";
    out << R"({"exits":[[0.5,-0.5]],"final":[1.5,0.5],"label":0})" << "\n";
    out << R"({"exits":[[2.0,1.0]],"final":[-1.0,3.0],"label":1})" << "\n";
    out.close();
    const LogitTrace h = load_logit_trace(hand);
    REQUIRE(h.records.size() == 2);
    CHECK(h.records[0].exit_logits[0] == std::vector<double>{0.5, -0.5});
    CHECK(h.records[1].final_logits == std::vector<double>{-1.0, 3.0});
    CHECK(h.records[1].label == 1);
  }

  SUBCASE("schema violations carry the line number") {
    const auto bad = dir / "bad.jsonl";
    std::ofstream out(bad);
    out << R"({"v":1,"kind":"logit-trace","B":2,"K":3,"anchors":["a","b"]})" << "\n";
    out << R"({"exits":[[0.1,0.2,0.3]],"final":[0,0,0],"label":0})" << "\n";  // B mismatch
    out.close();
    try {
      load_logit_trace(bad);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
}
