#include "smp/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "smp/ops.hpp"

namespace smp::model {

std::int64_t ModelConfig::downsampling_layers() const {
  std::int64_t n = 0;
  for (auto s = stride; s > 1; s /= 2) ++n;
  return n;
}

void ModelConfig::validate() const {
  if (in_channels < 1 || parts < 1) throw std::invalid_argument("model: in_channels and parts must be >= 1");
  if (stride < 1 || (stride & (stride - 1)) != 0) throw std::invalid_argument("model: stride must be a power of two");
  if (backbone_depth < downsampling_layers() || backbone_depth < 1) {
    throw std::invalid_argument("model: backbone_depth must cover the downsampling layers");
  }
  if (backbone_width < 2 || head_width < 1) throw std::invalid_argument("model: widths too small");
  if (!(box_prior > 0 && box_prior < 1)) throw std::invalid_argument("model: box_prior must lie in (0,1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"in_channels", c.in_channels},   {"parts", c.parts},       {"stride", c.stride},
       {"backbone_depth", c.backbone_depth}, {"backbone_width", c.backbone_width},
       {"head_width", c.head_width},     {"box_prior", c.box_prior}, {"param_budget", c.param_budget}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.parts = j.value("parts", d.parts);
  c.stride = j.value("stride", d.stride);
  c.backbone_depth = j.value("backbone_depth", d.backbone_depth);
  c.backbone_width = j.value("backbone_width", d.backbone_width);
  c.head_width = j.value("head_width", d.head_width);
  c.box_prior = j.value("box_prior", d.box_prior);
  c.param_budget = j.value("param_budget", d.param_budget);
}

std::vector<Tensor> ModelParams::trainable() const {
  std::vector<Tensor> out;
  for (const auto& t : tensors) out.push_back(t.value);
  return out;
}

std::int64_t ModelParams::count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::out_of_range("no parameter named " + name);
}

namespace {

struct Layer {
  std::string name;
  std::int64_t k, cin, cout, stride;
  Real init_scale = 1;
  Real bias = 0;
};

std::vector<Layer> layout(const ModelConfig& c) {
  std::vector<Layer> layers;
  const auto down = c.downsampling_layers();
  std::int64_t ch = c.in_channels;
  for (std::int64_t i = 0; i < c.backbone_depth; ++i) {
    const bool strided = i < down;
    // Narrower until the last downsampling layer.
    const auto width = (strided && i + 1 < down) ? c.backbone_width / 2 : c.backbone_width;
    layers.push_back({"backbone." + std::to_string(i), 3, ch, width, strided ? 2 : 1});
    ch = width;
  }
  const Real logit = -std::log((1 - c.box_prior) / c.box_prior);
  for (const auto& [head, out] : {std::pair<std::string, std::int64_t>{"heatmap", c.parts},
                                  {"box", c.parts},
                                  {"vector", 2 * c.parts}}) {
    layers.push_back({head + ".0", 3, ch, c.head_width, 1});
    layers.push_back({head + ".1", 1, c.head_width, out, 1, Real(0.01), head == "box" ? logit : Real(0)});
  }
  return layers;
}

Tensor conv_block(const ModelParams& p, const std::string& name, const Tensor& x, std::int64_t stride, bool act) {
  const Tensor& k = p.at(name + ".weight");
  Tensor y = ops::conv2d(x, k, stride, k.dim(0) / 2);
  y = ops::add(y, p.at(name + ".bias"));
  return act ? ops::relu(y) : y;
}

}  // namespace

ModelParams init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams params{config, seed, {}};
  std::mt19937_64 rng(seed);
  for (const auto& l : layout(config)) {
    const Real bound = l.init_scale * std::sqrt(Real(6) / static_cast<Real>(l.k * l.k * l.cin));
    std::uniform_real_distribution<Real> dist(-bound, bound);
    std::vector<Real> w(static_cast<std::size_t>(l.k * l.k * l.cin * l.cout));
    for (auto& v : w) v = dist(rng);
    params.tensors.push_back({l.name + ".weight", Tensor({l.k, l.k, l.cin, l.cout}, std::move(w), true)});
    params.tensors.push_back({l.name + ".bias", Tensor::full({l.cout}, l.bias, true)});
  }
  if (params.count() > config.param_budget) {
    throw std::invalid_argument("model: " + std::to_string(params.count()) + " parameters exceed budget " +
                                std::to_string(config.param_budget));
  }
  return params;
}

BranchOutputs forward(const ModelParams& params, const Tensor& frames) {
  const auto& c = params.config;
  if (frames.rank() != 4 || frames.dim(3) != c.in_channels) {
    throw ShapeError("forward: frames must be [N,H,W," + std::to_string(c.in_channels) + "], got " +
                     to_string(frames.shape()));
  }
  if (frames.dim(1) % c.stride != 0 || frames.dim(2) % c.stride != 0) {
    throw ShapeError("forward: frame extents " + to_string(frames.shape()) + " not divisible by stride " +
                     std::to_string(c.stride));
  }
  const auto down = c.downsampling_layers();
  Tensor x = frames;
  for (std::int64_t i = 0; i < c.backbone_depth; ++i) {
    x = conv_block(params, "backbone." + std::to_string(i), x, i < down ? 2 : 1, true);
  }
  auto head = [&](const std::string& name) {
    return conv_block(params, name + ".1", conv_block(params, name + ".0", x, 1, true), 1, false);
  };
  BranchOutputs out{head("heatmap"), head("box"), head("vector")};
  Shape vshape = out.boxes.shape();
  vshape.push_back(2);
  out.vectors = ops::reshape(out.vectors, vshape);
  return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'M', 'P', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("checkpoint: truncated file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = ckpt.params.config;
  header["seed"] = ckpt.params.seed;
  header["iteration"] = ckpt.iteration;
  header["metadata"] = ckpt.metadata;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.params.tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}});
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.params.tensors)
    for (double v : t.value.data()) write_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto len = read_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);

  Checkpoint ckpt;
  ckpt.params.config = header.at("config").get<ModelConfig>();
  ckpt.params.seed = header.at("seed").get<std::uint64_t>();
  ckpt.iteration = header.at("iteration").get<std::int64_t>();
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    Shape shape = t.at("shape").get<Shape>();
    std::vector<Real> data(static_cast<std::size_t>(numel(shape)));
    for (auto& v : data) v = static_cast<Real>(std::bit_cast<double>(read_u64(is)));
    ckpt.params.tensors.push_back({t.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data), true)});
  }
  return ckpt;
}

}  // namespace smp::model
