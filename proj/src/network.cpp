#include "cardseg/network.hpp"

#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fstream>

#include "cardseg/rng.hpp"
#include "json.hpp"

namespace cardseg {

using nlohmann::json;

void NetworkConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("NetworkConfig.depth must be >= 1");
  if (base_filters < 1) throw std::invalid_argument("NetworkConfig.base_filters must be >= 1");
  if (in_channels < 1) throw std::invalid_argument("NetworkConfig.in_channels must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("NetworkConfig.num_classes must be >= 2");
}

namespace {

Tensor he_uniform(Rng& rng, Shape shape, int fan_in) {
  Tensor t(std::move(shape), true);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

/// Zero-pads one row at the bottom and one column at the right; used by the
/// nearest-upsample decoder so its 2x2 conv preserves spatial dims.
Tensor pad_bottom_right(Tape* tape, const Tensor& x) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out(Shape{B, C, H + 1, W + 1}, x.requires_grad());
  for (int bc = 0; bc < B * C; ++bc) {
    const double* src = x.data().data() + static_cast<int64_t>(bc) * H * W;
    double* dst = out.data().data() + static_cast<int64_t>(bc) * (H + 1) * (W + 1);
    for (int i = 0; i < H; ++i)
      std::memcpy(dst + static_cast<int64_t>(i) * (W + 1), src + static_cast<int64_t>(i) * W,
                  sizeof(double) * static_cast<size_t>(W));
  }
  if (tape) {
    auto xi = x.impl(); auto oi = out.impl();
    tape->record(out, [xi, oi, B, C, H, W] {
      xi->ensure_grad();
      for (int bc = 0; bc < B * C; ++bc) {
        const double* g = oi->grad.data() + static_cast<int64_t>(bc) * (H + 1) * (W + 1);
        double* dx = xi->grad.data() + static_cast<int64_t>(bc) * H * W;
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j)
            dx[static_cast<int64_t>(i) * W + j] += g[static_cast<int64_t>(i) * (W + 1) + j];
      }
    });
  }
  return out;
}

}  // namespace

NetworkInstance build_network(const NetworkConfig& config, uint64_t seed) {
  config.validate();
  NetworkInstance net;
  net.config_ = config;
  Rng rng(mix64(seed));

  auto add_conv = [&](const std::string& name, int cin, int cout, int k) {
    net.params_.emplace_back(name + ".weight",
                             he_uniform(rng, {cout, cin, k, k}, cin * k * k));
    net.params_.emplace_back(name + ".bias", Tensor::zeros({cout}, true));
  };
  auto add_block = [&](const std::string& name, int cin, int cout) {
    add_conv(name + ".conv1", cin, cout, 3);
    add_conv(name + ".conv2", cout, cout, 3);
    if (config.residual && cin != cout) add_conv(name + ".proj", cin, cout, 1);
  };

  int ch = config.in_channels;
  for (int l = 0; l < config.depth; ++l) {
    add_block(fmt::format("enc{}", l), ch, config.filters_at(l));
    ch = config.filters_at(l);
  }
  add_block("bottleneck", ch, config.filters_at(config.depth));
  for (int l = config.depth - 1; l >= 0; --l) {
    const int cin = config.filters_at(l + 1);
    const int cout = config.filters_at(l);
    if (config.upsample_mode == UpsampleMode::kTransposedConv) {
      net.params_.emplace_back(fmt::format("dec{}.up.weight", l),
                               he_uniform(rng, {cin, cout, 2, 2}, cin * 4));
    } else {
      add_conv(fmt::format("dec{}.up", l), cin, cout, 2);
    }
    add_block(fmt::format("dec{}", l), 2 * cout, cout);
  }
  add_conv("head", config.base_filters, config.num_classes, 1);
  return net;
}

Parameter* NetworkInstance::find(const std::string& name) const {
  for (auto& p : params_)
    if (p.name == name) return &p;
  throw std::runtime_error(fmt::format("network parameter '{}' not found", name));
}

int64_t NetworkInstance::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::vector<Parameter*> NetworkInstance::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

Tensor NetworkInstance::forward(Tape* tape, const Tensor& batch) const {
  if (batch.shape().size() != 4)
    throw ShapeError("forward expects a [B,C,H,W] batch");
  if (batch.dim(1) != config_.in_channels)
    throw ShapeError(fmt::format("forward: batch has {} channels, network expects {}",
                                 batch.dim(1), config_.in_channels));
  const int div = 1 << config_.depth;
  if (batch.dim(2) % div != 0 || batch.dim(3) % div != 0)
    throw ShapeError(fmt::format(
        "forward: spatial dims {}x{} not divisible by 2^depth = {}",
        batch.dim(2), batch.dim(3), div));

  auto conv = [&](const std::string& name, const Tensor& x, int pad) {
    return conv2d(tape, x, find(name + ".weight")->value, find(name + ".bias")->value,
                  1, pad);
  };
  auto block = [&](const std::string& name, const Tensor& x, int cin, int cout) {
    Tensor t = relu(tape, conv(name + ".conv1", x, 1));
    t = conv(name + ".conv2", t, 1);
    if (!config_.residual) return relu(tape, t);
    Tensor skip = (cin == cout) ? x : conv(name + ".proj", x, 0);
    return relu(tape, add(tape, t, skip));
  };

  std::vector<Tensor> skips;
  Tensor x = batch;
  int ch = config_.in_channels;
  for (int l = 0; l < config_.depth; ++l) {
    x = block(fmt::format("enc{}", l), x, ch, config_.filters_at(l));
    ch = config_.filters_at(l);
    skips.push_back(x);
    x = maxpool2d(tape, x);
  }
  x = block("bottleneck", x, ch, config_.filters_at(config_.depth));
  for (int l = config_.depth - 1; l >= 0; --l) {
    const int cout = config_.filters_at(l);
    if (config_.upsample_mode == UpsampleMode::kTransposedConv) {
      x = transposed_conv2d(tape, x, find(fmt::format("dec{}.up.weight", l))->value, 2);
    } else {
      x = nearest_upsample2x(tape, x);
      x = conv(fmt::format("dec{}.up", l), pad_bottom_right(tape, x), 0);
    }
    x = concat_channels(tape, skips[static_cast<size_t>(l)], x);
    x = block(fmt::format("dec{}", l), x, 2 * cout, cout);
  }
  return conv("head", x, 0);
}

NetworkInstance NetworkInstance::clone() const {
  NetworkInstance copy;
  copy.config_ = config_;
  copy.params_.reserve(params_.size());
  for (const auto& p : params_) {
    Parameter q(p.name, Tensor(p.value.shape(), p.value.data(), true));
    q.adam_m = p.adam_m;
    q.adam_v = p.adam_v;
    q.step_count = p.step_count;
    copy.params_.push_back(std::move(q));
  }
  return copy;
}

namespace {
constexpr char kMagic[8] = {'C', 'A', 'R', 'D', 'S', 'E', 'G', '1'};
}

void NetworkInstance::save_checkpoint(const std::string& path) const {
  json header;
  header["format_version"] = 1;
  header["config"] = {
      {"depth", config_.depth},
      {"base_filters", config_.base_filters},
      {"in_channels", config_.in_channels},
      {"num_classes", config_.num_classes},
      {"residual", config_.residual},
      {"upsample_mode",
       config_.upsample_mode == UpsampleMode::kTransposedConv ? "transposed_conv"
                                                              : "nearest_plus_conv"},
  };
  json plist = json::array();
  for (const auto& p : params_) plist.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  header["parameters"] = plist;
  const std::string htext = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
  os.write(kMagic, 8);
  const uint64_t hlen = htext.size();
  os.write(reinterpret_cast<const char*>(&hlen), 8);
  os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : params_)
    os.write(reinterpret_cast<const char*>(p.value.data().data()),
             static_cast<std::streamsize>(p.value.data().size() * sizeof(double)));
  if (!os) throw std::runtime_error(fmt::format("write failed for '{}'", path));
}

NetworkInstance NetworkInstance::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(fmt::format("cannot open checkpoint '{}'", path));
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(fmt::format("'{}' is not a cardseg checkpoint", path));
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 8);
  if (!is || hlen == 0 || hlen > (1ull << 30))
    throw std::runtime_error(fmt::format("corrupt checkpoint header in '{}'", path));
  std::string htext(hlen, '\0');
  is.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error(fmt::format("truncated checkpoint header in '{}'", path));

  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw std::runtime_error(fmt::format("invalid checkpoint header in '{}': {}", path, e.what()));
  }
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error(fmt::format("unsupported checkpoint version in '{}'", path));

  NetworkInstance net;
  const auto& c = header.at("config");
  net.config_.depth = c.at("depth").get<int>();
  net.config_.base_filters = c.at("base_filters").get<int>();
  net.config_.in_channels = c.at("in_channels").get<int>();
  net.config_.num_classes = c.at("num_classes").get<int>();
  net.config_.residual = c.at("residual").get<bool>();
  const std::string mode = c.at("upsample_mode").get<std::string>();
  if (mode == "transposed_conv")
    net.config_.upsample_mode = UpsampleMode::kTransposedConv;
  else if (mode == "nearest_plus_conv")
    net.config_.upsample_mode = UpsampleMode::kNearestPlusConv;
  else
    throw std::runtime_error(fmt::format("unknown upsample_mode '{}' in '{}'", mode, path));
  net.config_.validate();

  for (const auto& entry : header.at("parameters")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape, true);
    is.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    if (!is)
      throw std::runtime_error(fmt::format("truncated checkpoint '{}' at parameter '{}'",
                                           path, name));
    net.params_.emplace_back(name, std::move(t));
  }
  return net;
}

}  // namespace cardseg
