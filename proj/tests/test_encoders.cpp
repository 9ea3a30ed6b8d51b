#include <vector>

#include "doctest.h"
#include "maskfuse/encoders.hpp"
#include "maskfuse/errors.hpp"
#include "support.hpp"

using namespace maskfuse;
using namespace testing_support;

namespace {

TabularSchema mixed_schema() {
  TabularSchema s;
  s.features.push_back({"n0", FeatureKind::numerical, 0});
  s.features.push_back({"c1", FeatureKind::categorical, 3});
  s.features.push_back({"n2", FeatureKind::numerical, 0});
  return s;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  std::vector<double> out;
  for (std::size_t j = 0; j < t.dim(1); ++j) out.push_back(t.at(r, j));
  return out;
}

}  // namespace

TEST_CASE("tabular embedding rows") {
  Rng rng(3);
  auto tables = EmbeddingTables::init(mixed_schema(), 4, rng);
  const auto presence = row_of(tables.tables()[0], 1);
  auto tok = embed_tabular(std::vector<double>{0.5, 2, 0.0}, std::vector<double>{1, 1, 1}, tables);
  for (std::size_t j = 0; j < 4; ++j) CHECK(tok.at(0, j) == 0.5 * presence[j]);
  CHECK(row_of(tok, 1) == row_of(tables.tables()[1], 2));
  CHECK(row_of(tok, 2) == std::vector<double>(4, 0.0));

  auto missing = embed_tabular(std::vector<double>{0.5, 7, 0.3}, std::vector<double>{0, 0, 1}, tables);
  CHECK(row_of(missing, 0) == std::vector<double>(4, 0.0));
  CHECK(row_of(missing, 1) == std::vector<double>(4, 0.0));

  try {
    embed_tabular(std::vector<double>{0.5, 3, 0.0}, std::vector<double>{1, 1, 1}, tables);
    FAIL("expected rejection");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("c1") != std::string::npos);
  }
}

TEST_CASE("missing categorical contributes no gradient") {
  Rng rng(4);
  TabularSchema s;
  s.features.push_back({"a", FeatureKind::categorical, 2});
  s.features.push_back({"b", FeatureKind::numerical, 0});
  auto tables = EmbeddingTables::init(s, 3, rng);
  auto tok = embed_tabular(std::vector<double>{1, 0.7}, std::vector<double>{0, 1}, tables);
  auto g = backward(sum(mul(tok, tok)));
  if (g.reached(tables.tables()[0])) {
    for (double v : std::vector<double>(g.of(tables.tables()[0]).data())) CHECK(v == 0.0);
  }
  REQUIRE(g.reached(tables.tables()[1]));
  const Tensor gb_t = g.of(tables.tables()[1]);
  const auto gb = gb_t.values();
  for (std::size_t j = 0; j < 3; ++j) CHECK(gb[j] == 0.0);  // absence row untouched
}

TEST_CASE("pinned rows are zero and listed") {
  Rng rng(5);
  auto tables = EmbeddingTables::init(mixed_schema(), 4, rng);
  CHECK(tables.frozen_row(0) == 0);
  CHECK(tables.frozen_row(1) == 3);
  CHECK(row_of(tables.tables()[1], 3) == std::vector<double>(4, 0.0));
  ParameterList params;
  tables.append(params, "emb");
  REQUIRE(params.size() == 3);
  CHECK(params[1].frozen_rows == std::vector<std::size_t>{3});
}

TEST_CASE("tabular encoder") {
  Rng rng(6);
  auto tokens = from_mat(random_mat(3, 8, rng));
  auto ones = Tensor::full({1, 8}, 1.0);
  auto id = tabular_encoder_forward(tokens, std::vector<double>{1, 1, 1}, {}, ones);
  CHECK(max_abs_diff(to_mat(id), to_mat(tokens)) == 0.0);

  auto stack = init_stack(2, 8, 2, 2, rng);
  auto mid = tabular_encoder_forward(tokens, std::vector<double>{1, 0, 1}, stack, ones);
  CHECK(row_of(mid, 1) == std::vector<double>(8, 0.0));

  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t F = 2 + trial % 5;
    Mat x = random_mat(F, 8, rng);
    std::vector<double> m(F);
    for (auto& v : m) v = rng.bernoulli(0.6) ? 1.0 : 0.0;
    m[0] = 1.0;
    Mat token = random_mat(1, 8, rng);
    auto out = to_mat(tabular_encoder_forward(from_mat(x), m, stack, from_mat(token)));
    Mat expected = plain_encoder_stack(rows_where(x, m), stack);
    for (auto& row : expected)
      for (std::size_t j = 0; j < 8; ++j) row[j] *= token[0][j];
    CHECK(max_abs_diff(rows_where(out, m), expected) <= 1e-9);
  }
}

TEST_CASE("vision encoder") {
  auto cfg = tiny_config().vision;
  CHECK(cfg.tokens() == 2);
  VisionConfig big;
  CHECK(big.latent_width() == 2048);
  CHECK(big.tokens() == 2);
  VisionConfig bad = cfg;
  bad.token_width = 5;
  CHECK_THROWS_AS(bad.validate(), PreconditionError);

  Rng r1(7), r2(7);
  auto e1 = VisionEncoder::init(cfg, r1);
  auto e2 = VisionEncoder::init(cfg, r2);
  Rng px(1);
  std::vector<double> image(64);
  for (auto& p : image) p = px.uniform();
  auto token = Tensor::full({1, 8}, 1.0, true);
  auto a = vision_encoder_forward(image, 1.0, e1, token);
  auto b = vision_encoder_forward(image, 1.0, e2, token);
  CHECK(a.shape() == Shape{2, 8});
  CHECK(max_abs_diff(to_mat(a), to_mat(b)) == 0.0);

  SUBCASE("masked image yields zeros and no gradient") {
    auto z = vision_encoder_forward(image, 0.0, e1, token);
    CHECK(to_mat(z) == Mat(2, std::vector<double>(8, 0.0)));
    auto g = backward(sum(mul(add(z, Tensor::full({2, 8}, 1.0)), Tensor::full({2, 8}, 1.0))));
    ParameterList params;
    e1.append(params, "vision");
    for (const auto& p : params) {
      if (!g.reached(p.tensor)) continue;
      for (double v : std::vector<double>(g.of(p.tensor).data())) CHECK(v == 0.0);
    }
    CHECK_FALSE(g.reached(token));
  }
  SUBCASE("zero image maps to a zero latent") {
    auto z = e1.latent(e1.image_tensor(std::vector<double>(64, 0.0)));
    for (double v : z.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("image augmentation") {
  Rng px(2);
  std::vector<double> image(36);
  for (auto& p : image) p = px.uniform();
  Rng a(9), b(9);
  CHECK(augment_image(image, 6, 6, a) == augment_image(image, 6, 6, b));
  // Four draws per call regardless of the outcome.
  Rng c(9), d(9);
  augment_image(image, 6, 6, c);
  for (int i = 0; i < 4; ++i) d.uniform();
  CHECK(c.next() == d.next());
  std::size_t changed = 0;
  Rng e(10);
  for (int i = 0; i < 200; ++i)
    if (augment_image(image, 6, 6, e) != image) ++changed;
  CHECK(changed > 60);
  CHECK(changed < 140);
}
