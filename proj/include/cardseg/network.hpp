#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cardseg/tensor.hpp"

namespace cardseg {

enum class UpsampleMode { kTransposedConv, kNearestPlusConv };

struct NetworkConfig {
  int depth = 3;            // number of down/up levels
  int base_filters = 8;     // filters at the top level; doubles per level
  int in_channels = 1;
  int num_classes = 4;      // background + LV + MYO + RV
  bool residual = true;
  UpsampleMode upsample_mode = UpsampleMode::kTransposedConv;

  void validate() const;
  int filters_at(int level) const { return base_filters << level; }
};

/// A built U-Net / residual U-Net: the config plus its named parameters.
/// Parameter names are stable across save/load.
class NetworkInstance {
 public:
  NetworkInstance() = default;

  const NetworkConfig& config() const { return config_; }
  int64_t parameter_count() const;
  std::vector<Parameter*> parameters();
  const std::vector<Parameter>& named_parameters() const { return params_; }

  /// Encoder depth levels -> bottleneck -> symmetric decoder -> 1x1 head.
  /// H and W must be divisible by 2^depth; this is checked before any compute.
  Tensor forward(Tape* tape, const Tensor& batch) const;

  void save_checkpoint(const std::string& path) const;
  static NetworkInstance load_checkpoint(const std::string& path);

  /// Deep copy of the parameter state (used for best-checkpoint tracking).
  NetworkInstance clone() const;

  friend NetworkInstance build_network(const NetworkConfig&, uint64_t seed);

 private:
  Parameter* find(const std::string& name) const;

  NetworkConfig config_;
  mutable std::vector<Parameter> params_;
};

/// He-uniform initialization from `seed`; same seed gives bitwise-identical
/// parameters.
NetworkInstance build_network(const NetworkConfig& config, uint64_t seed);

}  // namespace cardseg
