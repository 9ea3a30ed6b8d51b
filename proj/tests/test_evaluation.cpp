#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/evaluation.hpp"
#include "support.hpp"

using namespace maskfuse;
using namespace testing_support;

TEST_CASE("roc auc fixtures") {
  auto auc = [](std::vector<double> s, std::vector<double> y) { return roc_auc(s, y); };
  CHECK(*auc({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(*auc({0.5, 0.5}, {1, 0}) == 0.5);
  // Both positives outrank both negatives, so the all-pairs value is 1.
  const std::vector<double> s{0.8, 0.6, 0.4, 0.7}, y{1, 0, 0, 1};
  CHECK(pairwise_auc(s, y) == 1.0);
  CHECK(*auc(s, y) == pairwise_auc(s, y));
  CHECK(*auc({0.1, 0.9, 0.5, 0.5}, {1, 0, 1, 0}) == pairwise_auc({0.1, 0.9, 0.5, 0.5}, {1, 0, 1, 0}));
  CHECK_FALSE(auc({0.2, 0.3}, {1, 1}).has_value());
  CHECK_FALSE(auc({0.2, 0.3}, {0, 0}).has_value());
}

TEST_CASE("roc auc equals the pairwise oracle on random tied fixtures") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.index(8)) / 8.0;
      y[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    }
    y[0] = 1.0;
    y[1] = 0.0;
    CHECK(*roc_auc(s, y) == pairwise_auc(s, y));
  }
}

TEST_CASE("weighted auc") {
  SUBCASE("two classes with opposite rankings and equal positive counts") {
    LabelMatrix scores{{0.9, 0.1}, {0.1, 0.9}}, labels{{1, 1}, {0, 0}}, masks{{1, 1}, {1, 1}};
    auto r = weighted_auc(scores, labels, masks, {"a", "b"});
    CHECK(*r.classes[0].auc == 1.0);
    CHECK(*r.classes[1].auc == 0.0);
    CHECK(r.weighted_auc == 0.5);
  }
  SUBCASE("one defined class") {
    LabelMatrix scores{{0.3, 0.2}, {0.6, 0.4}, {0.5, 0.1}}, labels{{1, 1}, {0, 1}, {1, 1}},
        masks{{1, 1}, {1, 1}, {1, 1}};
    auto r = weighted_auc(scores, labels, masks);
    CHECK_FALSE(r.classes[1].auc.has_value());
    CHECK_FALSE(r.classes[1].excluded.empty());
    CHECK(r.weighted_auc == *roc_auc(std::vector<double>{0.3, 0.6, 0.5}, std::vector<double>{1, 0, 1}));
  }
  SUBCASE("weights follow observed positive counts") {
    LabelMatrix scores{{0.9, 0.9}, {0.1, 0.1}, {0.8, 0.2}, {0.4, 0.7}},
        labels{{1, 1}, {0, 0}, {1, 0}, {0, 1}}, masks{{1, 1}, {1, 1}, {1, 1}, {1, 0}};
    auto r = weighted_auc(scores, labels, masks);
    const double a0 = pairwise_auc({0.9, 0.1, 0.8, 0.4}, {1, 0, 1, 0});
    const double a1 = pairwise_auc({0.9, 0.1, 0.2}, {1, 0, 0});
    CHECK(std::abs(r.weighted_auc - (2 * a0 + 1 * a1) / 3.0) <= 1e-12);
  }
  SUBCASE("labels hidden by the mask do not matter") {
    LabelMatrix scores{{0.9, 0.3}, {0.2, 0.8}, {0.6, 0.5}}, labels{{1, 0}, {0, 1}, {1, 0}},
        masks{{1, 1}, {1, 1}, {0, 1}};
    auto a = to_json(weighted_auc(scores, labels, masks)).dump();
    labels[2][0] = 0;
    CHECK(to_json(weighted_auc(scores, labels, masks)).dump() == a);
  }
  SUBCASE("all classes undefined") {
    LabelMatrix scores{{0.1}, {0.2}}, labels{{1}, {1}}, masks{{1}, {1}};
    CHECK_THROWS(weighted_auc(scores, labels, masks));
  }
}

TEST_CASE("mean and standard error") {
  auto one = mean_stderr(std::vector<double>{0.7});
  CHECK(one.mean == 0.7);
  CHECK(one.stderr_ == 0.0);
  auto r = mean_stderr(std::vector<double>{1, 2, 3, 4});
  CHECK(r.mean == 2.5);
  CHECK(r.stderr_ == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-14));
}

TEST_CASE("attention attribution") {
  const auto cfg = tiny_config(4, 2, 2);
  auto model = MaskedFusionModel::init(cfg, 3);
  Rng rng(5);
  std::vector<Sample> blind, full;
  for (int i = 0; i < 5; ++i) {
    auto s = random_sample(cfg, rng, static_cast<std::uint64_t>(i));
    full.push_back(s);
    s.masks.image = 0.0;
    blind.push_back(s);
  }
  auto none = modality_attribution(model, blind);
  REQUIRE(none.size() == 2);
  for (const auto& m : none) {
    CHECK(m.vision == 0.0);
    CHECK(m.tabular == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (const auto& m : modality_attribution(model, full)) {
    CHECK(m.vision > 0.0);
    CHECK(m.vision + m.tabular == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("stress harness on a small fold") {
  auto cfg = quick_config(250, 2);
  cfg.stress.methods = {"masked", "zeros", "model-selection"};
  auto q = quick_fold(cfg, 2);
  StressRequest req;
  req.protocol = StressProtocol::test;
  req.modality = Modality::vision;
  req.rates = {0.0, 1.0};
  req.folds = {0};
  req.seed = 2;
  req.keep_models = true;
  auto res = run_stress_protocol(q.raw, q.plan, q.cfg, req);
  REQUIRE(res.models.size() == 1);
  const auto& fm = res.models[0];
  auto fold = prepare_fold(q.raw, q.plan, 0, q.cfg);

  auto row_auc = [&](const std::string& method, double rate) {
    for (const auto& r : res.rows)
      if (r.method == method && r.rate == rate) return r.auc;
    FAIL("missing row " << method << " " << rate);
    return 0.0;
  };
  const auto& masked = *fm.methods.at("masked");
  CHECK(row_auc("masked", 0.0) == evaluate_model(masked, fold.test.samples).weighted_auc);
  CHECK(row_auc("reference-vision", 0.0) > 0.0);

  // Full imaging removal: predictions equal those on blank images without the image.
  for (std::size_t i = 0; i < 10; ++i) {
    auto s = fold.test.samples[i];
    auto m = s.masks;
    m.image = 0.0;
    auto blank = s;
    std::fill(blank.image.begin(), blank.image.end(), 0.0);
    if (!m.admissible()) continue;
    CHECK(masked.predict(s, m).probabilities == masked.predict(blank, m).probabilities);
  }

  auto table = curve_table(res.rows);
  auto parsed = parse_curve_table(table);
  REQUIRE(parsed.size() == res.rows.size());
  CHECK(curve_table(parsed) == table);
  for (std::size_t i = 0; i < parsed.size(); ++i) CHECK(parsed[i].auc == res.rows[i].auc);
  auto summary = summarize(res.rows);
  CHECK_FALSE(summary.empty());
  CHECK(summary_table(summary).rfind("protocol\t", 0) == 0);
  CHECK_FALSE(attribution_table(res.attribution).empty());
}

TEST_CASE("split plan serialization") {
  auto q = quick_fold(quick_config(120, 1), 4);
  auto j = to_json(q.plan);
  auto back = split_from_json(j);
  CHECK(back.fold == q.plan.fold);
  CHECK(back.hash == q.plan.hash);
  j["fold"][0] = (q.plan.fold[0] + 1) % q.plan.folds;
  CHECK_THROWS(split_from_json(j));
  CHECK(format_real(0.1) == "0.1");
}
