#include <vector>

#include "doctest.h"
#include "maskfuse/baselines.hpp"
#include "maskfuse/errors.hpp"
#include "support.hpp"

using namespace maskfuse;
using namespace testing_support;

TEST_CASE("zeros baseline input composition") {
  const auto cfg = tiny_config();
  auto model = ZerosFusionModel::init(cfg, 3);
  Rng rng(1);
  auto s = random_sample(cfg, rng);
  const std::size_t dv = cfg.vision.latent_width();

  const Tensor both_t = model.compose_input(s, s.masks);
  const auto both = both_t.values();
  REQUIRE(both.size() == dv + cfg.token_width());
  bool any_nonzero = false;
  for (std::size_t j = 0; j < dv; ++j) any_nonzero = any_nonzero || both[j] != 0.0;
  CHECK(any_nonzero);

  auto no_image = s.masks;
  no_image.image = 0.0;
  const Tensor missing_t = model.compose_input(s, no_image);
  const auto missing = missing_t.values();
  for (std::size_t j = 0; j < dv; ++j) CHECK(missing[j] == 0.0);

  // A blank image that is present collides with an absent one.
  auto blank = s;
  std::fill(blank.image.begin(), blank.image.end(), 0.0);
  const Tensor collide_t = model.compose_input(blank, blank.masks);
  const auto collide = collide_t.values();
  CHECK(std::vector<double>(collide.begin(), collide.end()) ==
        std::vector<double>(missing.begin(), missing.end()));

  auto no_tab = s.masks;
  no_tab.tabular.assign(cfg.schema.size(), 0.0);
  const Tensor tab_t = model.compose_input(s, no_tab);
  const auto tab_missing = tab_t.values();
  for (std::size_t j = dv; j < tab_missing.size(); ++j) CHECK(tab_missing[j] == 0.0);
}

TEST_CASE("element-wise max pooling") {
  const Tensor a = Tensor::row({1, 5, 2});
  const Tensor b = Tensor::row({4, 0, 3});
  const Tensor both[] = {a, b};
  auto out = maxpool_fuse(both);
  CHECK(std::vector<double>(out.values().begin(), out.values().end()) == std::vector<double>{4, 5, 3});
  const Tensor swapped[] = {b, a};
  CHECK(maxpool_fuse(swapped).data() == out.data());
  const Tensor single[] = {a};
  CHECK(maxpool_fuse(single).data() == a.data());
  CHECK_THROWS_AS(maxpool_fuse(std::span<const Tensor>{}), PreconditionError);
}

TEST_CASE("max-pool model accepts any admissible pattern") {
  const auto cfg = tiny_config();
  auto model = MaxPoolFusionModel::init(cfg, 2);
  Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    auto s = random_sample(cfg, rng);
    randomize_masks(s, rng);
    auto p = model.predict(s).probabilities;
    CHECK(p.size() == cfg.classes);
    auto other = s;
    if (s.masks.image == 0.0)
      for (auto& px : other.image) px = 7.0;
    CHECK(model.predict(other).probabilities == p);
  }
}

TEST_CASE("model selection dispatch") {
  const auto cfg = tiny_config();
  auto vision = VisionPredictor::init(cfg, 4);
  auto tabular = TabularPredictor::init(cfg, 4);
  auto multi = MaskedFusionModel::init(cfg, 5);
  ModelSelectionBundle bundle(vision, tabular, multi);
  Rng rng(2);
  auto s = random_sample(cfg, rng);

  auto m = s.masks;
  CHECK(ModelSelectionBundle::select(m) == ModelSelectionBundle::Member::multimodal);
  CHECK(bundle.predict(s, m).probabilities == multi.predict(s, m).probabilities);

  m.tabular.assign(cfg.schema.size(), 0.0);
  CHECK(ModelSelectionBundle::select(m) == ModelSelectionBundle::Member::vision);
  CHECK(bundle.predict(s, m).probabilities == vision.predict(s, m).probabilities);

  m = s.masks;
  m.image = 0.0;
  m.tabular[0] = 0.0;
  CHECK(ModelSelectionBundle::select(m) == ModelSelectionBundle::Member::tabular);
  CHECK(bundle.predict(s, m).probabilities == tabular.predict(s, m).probabilities);
}

TEST_CASE("late fusion") {
  Prediction v{{0.2, 0.8}}, t{{0.6, 0.4}};
  auto both = late_fusion_predict(v, t).probabilities;
  CHECK(both[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(both[1] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(late_fusion_predict(v, std::nullopt).probabilities == v.probabilities);
  CHECK(late_fusion_predict(std::nullopt, t).probabilities == t.probabilities);
  CHECK_THROWS_AS(late_fusion_predict(std::nullopt, std::nullopt), PreconditionError);

  const auto cfg = tiny_config();
  auto vision = VisionPredictor::init(cfg, 4);
  auto tabular = TabularPredictor::init(cfg, 4);
  LateFusionModel late(vision, tabular);
  Rng rng(3);
  auto s = random_sample(cfg, rng);
  auto expected = late_fusion_predict(vision.predict(s), tabular.predict(s)).probabilities;
  auto got = late.predict(s).probabilities;
  for (std::size_t c = 0; c < got.size(); ++c) CHECK(got[c] == doctest::Approx(expected[c]).epsilon(1e-15));
  auto m = s.masks;
  m.image = 0.0;
  CHECK(late.predict(s, m).probabilities == tabular.predict(s, m).probabilities);
  CHECK(late.parameters().empty() == false);
}
