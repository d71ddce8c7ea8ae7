#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mexit/checkpoint.hpp"
#include "mexit/errors.hpp"
#include "mexit/model.hpp"
#include "mexit/rng.hpp"

using namespace mexit;

namespace {

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.text_dim = 3;
  cfg.vision_dim = 4;
  cfg.stem_width = 5;
  cfg.fused_width = 6;
  cfg.encoder_layers = 12;
  cfg.classes = 4;
  return cfg;
}

MultimodalSample random_sample(const BackboneConfig& cfg, Rng& rng) {
  MultimodalSample s;
  s.text.resize(cfg.text_dim);
  s.vision.resize(cfg.vision_dim);
  for (double& v : s.text) v = rng.uniform(-1.0, 1.0);
  for (double& v : s.vision) v = rng.uniform(-1.0, 1.0);
  s.label = rng.below(cfg.classes);
  return s;
}

}  // namespace

TEST_CASE("named placements resolve to the fixed exit counts") {
  using V = ExitPlacement::Variant;
  const std::pair<V, std::size_t> expected[] = {
      {V::IndependentAll, 14}, {V::ConcatAll, 13},      {V::ConcatSingle, 2},
      {V::ConcatQuarter, 5},   {V::ConcatAlternate, 5},
  };
  for (const auto& [variant, count] : expected) {
    CHECK(ExitPlacement::named(variant).resolve(12).size() == count);
  }
}

TEST_CASE("placement anchor sets match the fixed layouts") {
  const auto quarter = ExitPlacement::named(ExitPlacement::Variant::ConcatQuarter).resolve(12);
  REQUIRE(quarter.size() == 5);
  CHECK(quarter[0] == AnchorPoint::post_fusion());
  CHECK(quarter[1] == AnchorPoint::encoder(1));
  CHECK(quarter[2] == AnchorPoint::encoder(4));
  CHECK(quarter[3] == AnchorPoint::encoder(8));
  CHECK(quarter[4] == AnchorPoint::encoder(12));

  const auto alt = ExitPlacement::named(ExitPlacement::Variant::ConcatAlternate).resolve(12);
  REQUIRE(alt.size() == 5);
  CHECK(alt[0] == AnchorPoint::post_fusion());
  CHECK(alt[1] == AnchorPoint::encoder(2));
  CHECK(alt[2] == AnchorPoint::encoder(5));
  CHECK(alt[3] == AnchorPoint::encoder(9));
  CHECK(alt[4] == AnchorPoint::encoder(11));

  const auto ind = ExitPlacement::named(ExitPlacement::Variant::IndependentAll).resolve(12);
  REQUIRE(ind.size() == 14);
  CHECK(ind[0] == AnchorPoint::vision_stem());
  CHECK(ind[1] == AnchorPoint::text_stem());
  for (std::size_t i = 1; i <= 12; ++i) CHECK(ind[1 + i] == AnchorPoint::encoder(i));
}

TEST_CASE("placement validation") {
  CHECK_THROWS_AS(
      ExitPlacement::named(ExitPlacement::Variant::ConcatQuarter).resolve(8), invalid_input);
  CHECK_THROWS_AS(
      ExitPlacement::custom({AnchorPoint::encoder(9)}).resolve(8), invalid_input);
  CHECK_THROWS_AS(
      ExitPlacement::custom({AnchorPoint::encoder(3), AnchorPoint::encoder(3)}).resolve(8),
      invalid_input);
  CHECK_THROWS_AS(
      ExitPlacement::custom({AnchorPoint::encoder(3), AnchorPoint::post_fusion()}).resolve(8),
      invalid_input);
  CHECK(ExitPlacement::custom({}).resolve(3).empty());
}

TEST_CASE("placement string round trip") {
  for (const char* text : {"independent-all", "concat-all", "concat-single", "concat-quarter",
                           "concat-alternate", "custom:VisionStem,PostFusion,Encoder(3)"}) {
    CHECK(ExitPlacement::parse(text).str() == text);
  }
  CHECK_THROWS_AS(ExitPlacement::parse("concat-everything"), invalid_input);
  CHECK_THROWS_AS(AnchorPoint::parse("Encoder(x)"), invalid_input);
}

TEST_CASE("build is deterministic in the seed") {
  const auto cfg = small_config();
  const auto placement = ExitPlacement::named(ExitPlacement::Variant::ConcatQuarter);
  const auto a = MultiExitNetwork::build(cfg, placement, ExitHeadKind::Ramp, 11);
  const auto b = MultiExitNetwork::build(cfg, placement, ExitHeadKind::Ramp, 11);
  const auto c = MultiExitNetwork::build(cfg, placement, ExitHeadKind::Ramp, 12);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool any_diff = false;
  for (std::size_t g = 0; g < a.parameters().size(); ++g) {
    const auto& va = a.parameters()[g].value.values();
    const auto& vb = b.parameters()[g].value.values();
    const auto& vc = c.parameters()[g].value.values();
    CHECK(va == vb);  // bit-identical
    if (va != vc) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("backbone groups do not depend on the placement") {
  const auto cfg = small_config();
  const auto with_exits = MultiExitNetwork::build(
      cfg, ExitPlacement::named(ExitPlacement::Variant::ConcatQuarter), ExitHeadKind::Ramp, 3);
  const auto bare = MultiExitNetwork::build(cfg, ExitPlacement::custom({}), ExitHeadKind::Ramp, 3);
  for (const ParameterGroup& g : bare.parameters()) {
    bool found = false;
    for (const ParameterGroup& h : with_exits.parameters()) {
      if (h.name == g.name) {
        CHECK(h.value.values() == g.value.values());
        found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("forward trace shape and purity") {
  const auto cfg = small_config();
  Rng rng(4);
  const auto sample = random_sample(cfg, rng);

  const auto empty = MultiExitNetwork::build(cfg, ExitPlacement::custom({}), ExitHeadKind::Ramp, 1);
  const auto t0 = empty.forward_full(sample);
  CHECK(t0.exits.empty());
  CHECK(t0.final_logits.size() == cfg.classes);
  REQUIRE(t0.cost_fractions.size() == 1);
  CHECK(t0.cost_fractions.back() == 1.0);

  const auto single = MultiExitNetwork::build(
      cfg, ExitPlacement::named(ExitPlacement::Variant::ConcatSingle), ExitHeadKind::Ramp, 1);
  const auto t1 = single.forward_full(sample);
  CHECK(t1.exits.size() == 2);
  CHECK(t1.final_logits.size() == cfg.classes);

  const auto t2 = single.forward_full(sample);
  CHECK(t1.final_logits == t2.final_logits);
  for (std::size_t b = 0; b < t1.exits.size(); ++b) {
    CHECK(t1.exits[b].logits == t2.exits[b].logits);
  }

  MultimodalSample bad = sample;
  bad.text.push_back(0.0);
  CHECK_THROWS_AS(single.forward_full(bad), invalid_input);
}

TEST_CASE("gate heads emit a gate logit plus a paired prediction head") {
  const auto cfg = small_config();
  const auto net = MultiExitNetwork::build(
      cfg, ExitPlacement::named(ExitPlacement::Variant::ConcatSingle), ExitHeadKind::Gate, 1);
  Rng rng(9);
  const auto trace = net.forward_full(random_sample(cfg, rng));
  for (const ExitRecord& e : trace.exits) {
    CHECK(e.gate_logit.has_value());
    CHECK(e.logits.size() == cfg.classes);
  }
}

TEST_CASE("subgraph fractions are nested and hand-countable") {
  // 2-block toy: all parameter tallies done by hand.
  BackboneConfig cfg;
  cfg.text_dim = 2;
  cfg.vision_dim = 2;
  cfg.stem_width = 2;
  cfg.fused_width = 2;
  cfg.encoder_layers = 2;
  cfg.classes = 2;
  const auto net = MultiExitNetwork::build(
      cfg, ExitPlacement::custom({AnchorPoint::post_fusion(), AnchorPoint::encoder(2)}),
      ExitHeadKind::Ramp, 0);
  // stems: 2x(2*2+2)=12, fusion: 2*4+2=10, encoders: 2x(2*2+2)=12,
  // final: 2*2+2=6, exit heads: 2x(2*2+2)=12  -> total 52
  CHECK(net.parameter_count() == 52);
  // exit 0 subgraph: stems+fusion (22) + head (6) = 28
  CHECK(net.subgraph_param_fraction(0) == doctest::Approx(28.0 / 52.0).epsilon(1e-12));
  // exit 1 adds both encoder blocks and its head: 28 + 12 + 6 = 46
  CHECK(net.subgraph_param_fraction(1) == doctest::Approx(46.0 / 52.0).epsilon(1e-12));
  CHECK(net.subgraph_param_fraction(2) == 1.0);  // final-classifier sentinel
  CHECK_THROWS_AS(net.subgraph_param_fraction(3), invalid_input);

  // sentinel subgraph covers everything except the final head
  const auto& sentinel = net.subgraph_group_indices(2);
  std::size_t covered = 0;
  for (std::size_t idx : sentinel) covered += net.parameters()[idx].size();
  CHECK(covered == 46);
}

TEST_CASE("subgraphs are nested along the anchor order") {
  const auto cfg = small_config();
  for (auto variant : {ExitPlacement::Variant::IndependentAll, ExitPlacement::Variant::ConcatAll,
                       ExitPlacement::Variant::ConcatQuarter}) {
    const auto net =
        MultiExitNetwork::build(cfg, ExitPlacement::named(variant), ExitHeadKind::Gate, 5);
    double prev = 0.0;
    for (std::size_t b = 0; b <= net.exit_count(); ++b) {
      const double frac = net.subgraph_param_fraction(b);
      CHECK(frac > prev);
      prev = frac;
      if (b > 0) {
        const auto& small = net.subgraph_group_indices(b - 1);
        const auto& big = net.subgraph_group_indices(b);
        const std::set<std::size_t> big_set(big.begin(), big.end());
        for (std::size_t idx : small) CHECK(big_set.count(idx) == 1);
      }
    }
  }
}

TEST_CASE("cost fractions") {
  const auto cfg = small_config();

  SUBCASE("final classifier sits at exactly 1") {
    const auto net = MultiExitNetwork::build(
        cfg, ExitPlacement::named(ExitPlacement::Variant::ConcatQuarter), ExitHeadKind::Ramp, 2);
    CHECK(net.exit_cost_fraction(net.exit_count(), CostModel::uniform()) == 1.0);
    CHECK_THROWS_AS(net.exit_cost_fraction(net.exit_count() + 1, CostModel::uniform()),
                    invalid_input);
  }

  SUBCASE("hand-evaluated single exit after encoder 6") {
    // stems cost 1 each, fusion 0, blocks 1, heads 0.1:
    // exit = (2 + 6 + 0.1) / (2 + 12 + 0.1 + 0.1)
    const auto net = MultiExitNetwork::build(
        cfg, ExitPlacement::custom({AnchorPoint::encoder(6)}), ExitHeadKind::Ramp, 2);
    CostModel cm = CostModel::uniform();
    cm.fusion_cost = 0.0;
    CHECK(net.exit_cost_fraction(0, cm) == doctest::Approx(8.1 / 14.2).epsilon(1e-12));
  }

  SUBCASE("trace fractions strictly increase and end at 1") {
    for (auto variant :
         {ExitPlacement::Variant::IndependentAll, ExitPlacement::Variant::ConcatAll,
          ExitPlacement::Variant::ConcatSingle, ExitPlacement::Variant::ConcatQuarter,
          ExitPlacement::Variant::ConcatAlternate}) {
      const auto net =
          MultiExitNetwork::build(cfg, ExitPlacement::named(variant), ExitHeadKind::Ramp, 2);
      for (const CostModel& cm : {CostModel::uniform(), CostModel::ocr_aware()}) {
        const auto fractions = net.cost_fractions(cm);
        REQUIRE(fractions.size() == net.exit_count() + 1);
        for (std::size_t i = 1; i < fractions.size(); ++i) CHECK(fractions[i] > fractions[i - 1]);
        CHECK(fractions.back() == 1.0);
      }
    }
  }

  SUBCASE("ocr-aware makes the vision-stem exit strictly cheaper than the text-stem exit") {
    const auto net = MultiExitNetwork::build(
        cfg, ExitPlacement::named(ExitPlacement::Variant::IndependentAll), ExitHeadKind::Ramp, 2);
    const CostModel cm = CostModel::ocr_aware(3.0);
    CHECK(net.anchors()[0] == AnchorPoint::vision_stem());
    CHECK(net.anchors()[1] == AnchorPoint::text_stem());
    CHECK(net.exit_cost_fraction(0, cm) < net.exit_cost_fraction(1, cm));
    // uniform: vision exit (1 + 0.1) / (2 + 0.5 + 12 + 15 * 0.1)
    CHECK(net.exit_cost_fraction(0, CostModel::uniform()) ==
          doctest::Approx(1.1 / 16.0).epsilon(1e-12));
  }

  SUBCASE("unknown cost model name") {
    CHECK_THROWS_AS(CostModel::parse("quadratic"), invalid_input);
    CHECK(CostModel::parse("ocr-aware:4.5").text_surcharge == doctest::Approx(4.5));
  }
}

TEST_CASE("checkpoint round trip") {
  const auto cfg = small_config();
  const auto net = MultiExitNetwork::build(
      cfg, ExitPlacement::named(ExitPlacement::Variant::ConcatAlternate), ExitHeadKind::Gate, 77);
  const auto dir = std::filesystem::temp_directory_path() / "mexit_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "net.mexit";
  save_checkpoint(net, path);

  const auto loaded = load_checkpoint(path);
  CHECK(loaded.seed() == net.seed());
  CHECK(loaded.head_kind() == net.head_kind());
  CHECK(loaded.anchors() == net.anchors());
  CHECK(loaded.config().classes == cfg.classes);
  REQUIRE(loaded.parameters().size() == net.parameters().size());
  for (std::size_t g = 0; g < net.parameters().size(); ++g) {
    CHECK(loaded.parameters()[g].name == net.parameters()[g].name);
    CHECK(loaded.parameters()[g].value.values() == net.parameters()[g].value.values());
  }

  SUBCASE("corrupted magic is rejected") {
    const auto bad = dir / "bad.mexit";
    std::filesystem::copy_file(path, bad, std::filesystem::copy_options::overwrite_existing);
    std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XEXIT1", 6);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(bad), format_error);
  }

  SUBCASE("truncated files are rejected") {
    const auto truncated = dir / "short.mexit";
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(truncated, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(truncated), format_error);
  }
}
