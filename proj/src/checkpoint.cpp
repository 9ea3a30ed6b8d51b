#include "maskfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "maskfuse/baselines.hpp"
#include "maskfuse/errors.hpp"

namespace maskfuse {

namespace {

constexpr char kMagic[8] = {'M', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

template <class T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw PreconditionError("checkpoint: truncated data");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const nlohmann::json header = {{"strategy", ckpt.strategy},
                                 {"model_config", ckpt.model_config},
                                 {"seed", ckpt.seed},
                                 {"metadata", ckpt.metadata}};
  const std::string text = header.dump();
  put<std::uint64_t>(out, text.size());
  out += text;
  put<std::uint64_t>(out, ckpt.parameters.size());
  for (const auto& p : ckpt.parameters) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.group));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) put<std::uint64_t>(out, e);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.frozen_rows.size()));
    for (auto r : p.frozen_rows) put<std::uint64_t>(out, r);
    for (double v : p.tensor.data()) put<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw PreconditionError("checkpoint: bad magic");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw PreconditionError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = in.get<std::uint64_t>();
  const auto header = nlohmann::json::parse(in.take(header_len));
  Checkpoint ckpt;
  ckpt.strategy = header.at("strategy");
  ckpt.model_config = header.at("model_config");
  ckpt.seed = header.at("seed");
  ckpt.metadata = header.at("metadata");
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedParameter p;
    p.name = std::string(in.take(in.get<std::uint32_t>()));
    const auto group = in.get<std::uint8_t>();
    if (group > static_cast<std::uint8_t>(ParamGroup::head)) {
      throw PreconditionError("checkpoint: bad group for '" + p.name + "'");
    }
    p.group = static_cast<ParamGroup>(group);
    Shape shape(in.get<std::uint32_t>());
    for (auto& e : shape) e = in.get<std::uint64_t>();
    p.frozen_rows.resize(in.get<std::uint32_t>());
    for (auto& r : p.frozen_rows) r = in.get<std::uint64_t>();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = in.get<double>();
    p.tensor = Tensor::from(std::move(shape), std::move(values));
    ckpt.parameters.push_back(std::move(p));
  }
  if (!in.done()) throw PreconditionError("checkpoint: trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PreconditionError("checkpoint: cannot write " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PreconditionError("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("checkpoint: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint make_checkpoint(const Model& model, const ModelConfig& cfg, std::uint64_t seed,
                           nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.strategy = model.strategy();
  ckpt.model_config = to_json(cfg);
  ckpt.seed = seed;
  ckpt.metadata = std::move(metadata);
  ckpt.parameters = snapshot(model.parameters());
  return ckpt;
}

VisionPredictor load_vision_predictor(const Checkpoint& ckpt) {
  if (ckpt.strategy != "vision") {
    throw PreconditionError("checkpoint: expected a vision checkpoint, got '" + ckpt.strategy + "'");
  }
  auto p = VisionPredictor::init(model_config_from_json(ckpt.model_config), ckpt.seed);
  restore(p.parameters(), ckpt.parameters);
  return p;
}

TabularPredictor load_tabular_predictor(const Checkpoint& ckpt) {
  if (ckpt.strategy != "tabular") {
    throw PreconditionError("checkpoint: expected a tabular checkpoint, got '" + ckpt.strategy +
                            "'");
  }
  auto p = TabularPredictor::init(model_config_from_json(ckpt.model_config), ckpt.seed);
  restore(p.parameters(), ckpt.parameters);
  return p;
}

std::unique_ptr<Model> load_model(const Checkpoint& ckpt) {
  const ModelConfig cfg = model_config_from_json(ckpt.model_config);
  const std::uint64_t seed = ckpt.seed;
  std::unique_ptr<Model> model;
  const auto& s = ckpt.strategy;
  if (s == "vision") {
    model = std::make_unique<VisionPredictor>(VisionPredictor::init(cfg, seed));
  } else if (s == "tabular") {
    model = std::make_unique<TabularPredictor>(TabularPredictor::init(cfg, seed));
  } else if (s == "masked" || s == "early") {
    model = std::make_unique<MaskedFusionModel>(MaskedFusionModel::init(cfg, seed, s));
  } else if (s == "zeros") {
    model = std::make_unique<ZerosFusionModel>(ZerosFusionModel::init(cfg, seed));
  } else if (s == "maxpool") {
    model = std::make_unique<MaxPoolFusionModel>(MaxPoolFusionModel::init(cfg, seed));
  } else if (s == "model-selection") {
    model = std::make_unique<ModelSelectionBundle>(VisionPredictor::init(cfg, seed),
                                                   TabularPredictor::init(cfg, seed),
                                                   MaskedFusionModel::init(cfg, seed));
  } else if (s == "late") {
    model = std::make_unique<LateFusionModel>(VisionPredictor::init(cfg, seed),
                                              TabularPredictor::init(cfg, seed));
  } else {
    throw PreconditionError("checkpoint: unknown strategy '" + s + "'");
  }
  restore(model->parameters(), ckpt.parameters);
  return model;
}

}  // namespace maskfuse
