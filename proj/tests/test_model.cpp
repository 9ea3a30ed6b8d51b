#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "maskfuse/checkpoint.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/model.hpp"
#include "support.hpp"

using namespace maskfuse;
using namespace testing_support;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Fused representation rebuilt from the plain oracles: tabular and fusion
// stacks run on compacted sequences of the available tokens only.
Mat oracle_fused(const MaskedFusionModel& model, const Sample& s, const SampleMasks& m) {
  const auto& cfg = model.config();
  const std::size_t n_vis = cfg.vision.tokens(), d = cfg.token_width(), F = cfg.schema.size();
  Mat vision(n_vis, std::vector<double>(d, 0.0));
  if (m.image != 0.0) {
    const std::vector<double> latent = model.vision().latent(model.vision().image_tensor(s.image)).data();
    const auto tok = model.image_token().values();
    for (std::size_t r = 0; r < n_vis; ++r)
      for (std::size_t j = 0; j < d; ++j) vision[r][j] = latent[r * d + j] * tok[j];
  }
  Mat tab_in;
  for (std::size_t f = 0; f < F; ++f) {
    if (m.tabular[f] == 0.0) continue;
    const auto& spec = cfg.schema.features[f];
    const Tensor& table = model.tables().tables()[f];
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j)
      row[j] = spec.kind == FeatureKind::categorical ? table.at(static_cast<std::size_t>(s.tabular[f]), j)
                                                     : s.tabular[f] * table.at(1, j);
    tab_in.push_back(row);
  }
  Mat tab_out;
  if (!tab_in.empty()) {
    tab_out = plain_encoder_stack(tab_in, model.tabular_stack());
    const auto tok = model.tabular_token().values();
    for (auto& row : tab_out)
      for (std::size_t j = 0; j < d; ++j) row[j] *= tok[j];
  }
  Mat seq;
  std::vector<double> avail;
  for (std::size_t r = 0; r < n_vis; ++r) {
    avail.push_back(m.image);
    if (m.image != 0.0) seq.push_back(vision[r]);
  }
  for (double v : m.tabular) avail.push_back(v);
  seq.insert(seq.end(), tab_out.begin(), tab_out.end());
  Mat fused = plain_encoder_stack(seq, model.fusion_stack());
  Mat z(n_vis + F, std::vector<double>(d, 0.0));
  std::size_t k = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (avail[i] != 0.0) z[i] = fused[k++];
  return z;
}

}  // namespace

TEST_CASE("classify") {
  Linear zero = Linear::zeros(6, 3);
  auto p = classify(Tensor::full({2, 3}, 0.7), zero);
  CHECK(p.values()[0] == 0.5);
  CHECK(p.values()[2] == 0.5);

  Rng rng(2);
  auto head = Linear::init(4, 2, rng);
  Mat z = random_mat(2, 2, rng);
  auto out = classify(from_mat(z), head);
  const std::vector<double> flat{z[0][0], z[0][1], z[1][0], z[1][1]};
  for (std::size_t c = 0; c < 2; ++c) {
    double logit = head.bias.values()[c];
    for (std::size_t i = 0; i < 4; ++i) logit += flat[i] * head.weight.at(i, c);
    CHECK(std::abs(out.values()[c] - sigmoid_ref(logit)) <= 1e-12);
  }
  head.bias.mutable_values()[0] = 1e3;
  CHECK(classify(from_mat(z), head).values()[0] == 1.0 - kProbabilityClamp);
}

TEST_CASE("fusion forward") {
  Rng rng(3);
  auto stack = init_stack(1, 8, 2, 2, rng);
  auto img = from_mat(random_mat(2, 8, rng));
  auto tab = from_mat(random_mat(3, 8, rng));
  auto z = to_mat(fuse_forward(img, tab, build_composite_mask(0, std::vector<double>{1, 1, 0}, 2), stack));
  CHECK(z[0] == std::vector<double>(8, 0.0));
  CHECK(z[1] == std::vector<double>(8, 0.0));

  auto full = build_composite_mask(1, std::vector<double>{1, 1, 1}, 2);
  auto concat_only = to_mat(fuse_forward(img, tab, full, {}));
  Mat expected = to_mat(img);
  for (auto& r : to_mat(tab)) expected.push_back(r);
  CHECK(max_abs_diff(concat_only, expected) == 0.0);

  auto image_only = build_composite_mask(1, std::vector<double>{0, 0, 0}, 2);
  auto out = to_mat(fuse_forward(img, tab, image_only, stack));
  Mat oracle = plain_encoder_stack(to_mat(img), stack);
  CHECK(max_abs_diff({out[0], out[1]}, oracle) <= 1e-9);

  CompositeMask none;
  none.values.assign(5, 0.0);
  none.vision_tokens = 2;
  CHECK_THROWS_AS(fuse_forward(img, tab, none, stack), PreconditionError);
}

TEST_CASE("masked fusion model forward") {
  const auto cfg = tiny_config(4, 2, 2);
  auto model = MaskedFusionModel::init(cfg, 17);
  Rng rng(4);
  auto s = random_sample(cfg, rng);

  SUBCASE("deterministic across model instances") {
    auto again = MaskedFusionModel::init(cfg, 17);
    CHECK(model.predict(s).probabilities == again.predict(s).probabilities);
  }
  SUBCASE("masked image content is ignored") {
    s.masks.image = 0.0;
    auto other = s;
    for (auto& p : other.image) p = 1.0 - p;
    CHECK(model.predict(s).probabilities == model.predict(other).probabilities);
  }
  SUBCASE("reduced feature set matches the compacted oracle end to end") {
    for (int trial = 0; trial < 10; ++trial) {
      auto m = s.masks;
      randomize_masks(s, rng);
      auto z = to_mat(model.encode(s, s.masks));
      CHECK(max_abs_diff(z, oracle_fused(model, s, s.masks)) <= 1e-9);
      s.masks = m;
    }
  }
  SUBCASE("inadmissible sample rejected") {
    s.masks.image = 0.0;
    s.masks.tabular.assign(4, 0.0);
    CHECK_THROWS_AS(model.predict(s), PreconditionError);
  }
}

TEST_CASE("parameter groups are disjoint and complete") {
  const auto cfg = tiny_config();
  auto model = MaskedFusionModel::init(cfg, 1);
  std::set<std::string> names;
  std::set<const void*> ids;
  std::set<ParamGroup> groups;
  for (const auto& p : model.parameters()) {
    CHECK(names.insert(p.name).second);
    CHECK(ids.insert(p.tensor.id()).second);
    groups.insert(p.group);
    if (p.name.rfind("vision", 0) == 0) CHECK(p.group == ParamGroup::vision);
    if (p.name.rfind("tabular", 0) == 0) CHECK(p.group == ParamGroup::tabular);
    if (p.name.find("token") != std::string::npos) CHECK(p.group == ParamGroup::fusion);
  }
  CHECK(groups.size() == 4);
  CHECK(model.image_token().values()[0] == 1.0);
}

TEST_CASE("unimodal predictors share initial encoders with the fusion model") {
  const auto cfg = tiny_config();
  auto vision = VisionPredictor::init(cfg, 5);
  auto tabular = TabularPredictor::init(cfg, 5);
  auto fused = MaskedFusionModel::init(cfg, 5);
  ParameterList a, b;
  vision.encoder().append(a, "v");
  fused.vision().append(b, "v");
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tensor.data() == b[i].tensor.data());
  CHECK(tabular.tables().tables()[0].data() == fused.tables().tables()[0].data());

  Rng rng(1);
  auto s = random_sample(cfg, rng);
  CHECK_FALSE(vision.accepts([&] { auto m = s.masks; m.image = 0; return m; }()));
  CHECK(tabular.predict(s).probabilities.size() == cfg.classes);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto cfg = tiny_config();
  auto model = MaskedFusionModel::init(cfg, 9);
  auto ckpt = make_checkpoint(model, cfg, 9, {{"fold", 2}, {"split_hash", "abc"}});
  const std::string bytes = encode_checkpoint(ckpt);
  auto back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.strategy == "masked");
  CHECK(back.metadata["fold"] == 2);
  auto loaded = load_model(back);
  Rng rng(3);
  auto s = random_sample(cfg, rng);
  CHECK(loaded->predict(s).probabilities == model.predict(s).probabilities);

  std::string broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS(decode_checkpoint(broken));
  CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() / 2)));
}

TEST_CASE("model config json round trip") {
  const auto cfg = tiny_config();
  auto j = to_json(cfg);
  CHECK(to_json(model_config_from_json(j)) == j);
}
