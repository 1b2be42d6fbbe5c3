// Image codec built on a trained Model, and the bitstream container.
//
// Bitstream layout (multi-byte fields big-endian), 23 header bytes:
//   "MNIC" | version u8 | flags u8 (bit0 = hard mask) | width u16 |
//   height u16 | latent channels u8 | lambda f32 | model hash u32 |
//   payload length u32 | range-coder payload
// Lambda is informational: the decoder never needs the mask.

#ifndef MODNIC_CODEC_H_
#define MODNIC_CODEC_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "modnic/density.h"
#include "modnic/model.h"
#include "modnic/tensor.h"
#include "modnic/transforms.h"

namespace modnic {

inline constexpr uint8_t kBitstreamVersion = 1;
inline constexpr size_t kBitstreamHeaderBytes = 23;
inline constexpr uint8_t kFlagHardMask = 0x01;

struct BitstreamHeader {
  uint8_t version = kBitstreamVersion;
  uint8_t flags = 0;
  uint16_t width = 0;
  uint16_t height = 0;
  uint8_t channels = 0;
  float lambda = 0.0f;
  uint32_t model_hash = 0;
  uint32_t payload_length = 0;

  friend bool operator==(const BitstreamHeader&, const BitstreamHeader&) = default;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<uint8_t> payload;
};

std::vector<uint8_t> serialize_bitstream(const Bitstream& stream);
// Rejects bad magic, unknown versions and payload length mismatches.
Bitstream parse_bitstream(std::span<const uint8_t> bytes);

// Total bytes * 8 / (width * height).
double bpp_of(size_t total_bytes, int width, int height);
double bpp_of(std::span<const uint8_t> bitstream, int width, int height);

struct EncodeResult {
  std::vector<uint8_t> bitstream;
  Tensor reconstruction;  // [1,3,H,W], exactly what decode() returns
  LatentCode code;
  double bpp = 0.0;
  size_t clamp_events = 0;
};

class Codec {
 public:
  // model_hash identifies the checkpoint a bitstream was produced with.
  Codec(Model model, uint32_t model_hash);
  static Codec from_checkpoint(const std::filesystem::path& path);

  const Model& model() const { return model_; }
  uint32_t model_hash() const { return hash_; }
  const std::vector<QuantizedCdfTable>& tables() const { return tables_; }

  // x is [1,3,H,W] in [0,1]. lambda selects the ModNet mask; a model
  // without ModNet codes at its single trained rate and lambda is stored
  // as given.
  EncodeResult encode(const Tensor& x, double lambda, bool hard_mask = false) const;
  Tensor decode(std::span<const uint8_t> bitstream) const;

  // Unpadded latent tensor g_a(pad(x)) after masking, before rounding.
  Tensor latents(const Tensor& x, double lambda, bool hard_mask = false) const;

 private:
  Tensor reconstruct(const LatentCode& code) const;

  Model model_;
  uint32_t hash_;
  std::vector<QuantizedCdfTable> tables_;
};

}  // namespace modnic

#endif  // MODNIC_CODEC_H_
