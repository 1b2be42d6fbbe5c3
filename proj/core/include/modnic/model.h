// The complete codec state and its checkpoint container.
//
// Checkpoint layout (integers little-endian):
//   "MNCK" | version u8 | tensor count u32 |
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32 each,
//               dtype u8 (0 = float64 LE), raw values |
//   config echo: length u32, UTF-8 "key = value" lines.
// The echo carries the geometry needed to rebuild the parameter shapes.

#ifndef MODNIC_MODEL_H_
#define MODNIC_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modnic/density.h"
#include "modnic/modnet.h"
#include "modnic/rng.h"
#include "modnic/transforms.h"

namespace modnic {

inline constexpr uint8_t kCheckpointVersion = 1;

struct ModelConfig {
  int latent_channels = 32;
  int hidden_channels = 32;
  int density_stages = 4;
  int density_width = 3;
  int modnet_width = 32;
  double lambda_max = kLambdaMax;
  int support = kDefaultSupport;
  int precision = kDefaultPrecision;
};

struct Model {
  ModelConfig config;
  TransformParams transforms;
  MonotoneCdfNetwork density;
  std::optional<ModNetParams> modnet;
  uint64_t step = 0;
  // Free-form training configuration text stored alongside the weights.
  std::string config_echo;

  static Model create(const ModelConfig& config, Rng& rng);
  void attach_modnet(Rng& rng);

  // Transforms and density (the base codec), then ModNet when present.
  std::vector<std::pair<std::string, Tensor>> base_parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  // Independent copy of every parameter tensor.
  Model clone() const;
};

std::vector<uint8_t> serialize_checkpoint(const Model& model);
Model parse_checkpoint(std::span<const uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

// 32-bit FNV-1a.
uint32_t fnv1a32(std::span<const uint8_t> bytes);

// "key = value" lines; '#' starts a comment. Later keys override earlier.
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace modnic

#endif  // MODNIC_MODEL_H_
