#include "modnic/codec.h"

#include <bit>
#include <limits>
#include <stdexcept>

#include "modnic/io.h"
#include "modnic/modnet.h"
#include "modnic/range_coder.h"

namespace modnic {

namespace {

constexpr char kMagic[4] = {'M', 'N', 'I', 'C'};

void put_be(std::vector<uint8_t>& out, uint32_t v, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_be(std::span<const uint8_t> b, size_t pos, int bytes) {
  uint32_t v = 0;
  for (int i = 0; i < bytes; ++i) v = (v << 8) | b[pos + i];
  return v;
}

// Rounds to the 8-bit grid so encoder and file-based decoder agree.
Tensor to_8bit(const Tensor& x) { return image_to_tensor(tensor_to_image(x)); }

}  // namespace

std::vector<uint8_t> serialize_bitstream(const Bitstream& stream) {
  const auto& h = stream.header;
  if (h.payload_length != stream.payload.size()) {
    throw std::invalid_argument("bitstream: payload length field does not match payload");
  }
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  out.reserve(kBitstreamHeaderBytes + stream.payload.size());
  out.push_back(h.version);
  out.push_back(h.flags);
  put_be(out, h.width, 2);
  put_be(out, h.height, 2);
  out.push_back(h.channels);
  put_be(out, std::bit_cast<uint32_t>(h.lambda), 4);
  put_be(out, h.model_hash, 4);
  put_be(out, h.payload_length, 4);
  out.insert(out.end(), stream.payload.begin(), stream.payload.end());
  return out;
}

Bitstream parse_bitstream(std::span<const uint8_t> bytes) {
  if (bytes.size() < kBitstreamHeaderBytes) {
    throw FormatError("bitstream: " + std::to_string(bytes.size()) +
                      " bytes is shorter than the header");
  }
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw FormatError("bitstream: bad magic");
  }
  Bitstream s;
  auto& h = s.header;
  h.version = bytes[4];
  if (h.version != kBitstreamVersion) {
    throw FormatError("bitstream: unsupported version " + std::to_string(h.version));
  }
  h.flags = bytes[5];
  h.width = static_cast<uint16_t>(get_be(bytes, 6, 2));
  h.height = static_cast<uint16_t>(get_be(bytes, 8, 2));
  h.channels = bytes[10];
  h.lambda = std::bit_cast<float>(get_be(bytes, 11, 4));
  h.model_hash = get_be(bytes, 15, 4);
  h.payload_length = get_be(bytes, 19, 4);
  if (bytes.size() - kBitstreamHeaderBytes != h.payload_length) {
    throw FormatError("bitstream: header declares " + std::to_string(h.payload_length) +
                      " payload bytes, file has " +
                      std::to_string(bytes.size() - kBitstreamHeaderBytes));
  }
  if (h.width == 0 || h.height == 0) throw FormatError("bitstream: zero image size");
  s.payload.assign(bytes.begin() + kBitstreamHeaderBytes, bytes.end());
  return s;
}

double bpp_of(size_t total_bytes, int width, int height) {
  return static_cast<double>(total_bytes) * 8.0 /
         (static_cast<double>(width) * static_cast<double>(height));
}

double bpp_of(std::span<const uint8_t> bitstream, int width, int height) {
  return bpp_of(bitstream.size(), width, height);
}

Codec::Codec(Model model, uint32_t model_hash)
    : model_(std::move(model)),
      hash_(model_hash),
      tables_(build_tables(model_.density, model_.config.support,
                           model_.config.precision)) {
  if (model_.config.latent_channels > 255) {
    throw std::invalid_argument("codec: more than 255 latent channels");
  }
}

Codec Codec::from_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return Codec(parse_checkpoint(bytes), fnv1a32(bytes));
}

Tensor Codec::latents(const Tensor& x, double lambda, bool hard_mask) const {
  NoGradGuard guard;
  const Tensor padded = pad_to_multiple(x, model_.transforms.downsampling_factor());
  Tensor y = analyze(model_.transforms, padded);
  if (model_.modnet) {
    const Tensor mask = modnet_forward(*model_.modnet, y, lambda);
    y = apply_mask(y, mask, hard_mask ? MaskMode::kHard : MaskMode::kSoft);
  }
  return y;
}

EncodeResult Codec::encode(const Tensor& x, double lambda, bool hard_mask) const {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != 3) {
    throw std::invalid_argument("encode: expected [1,3,H,W], got " + shape_string(x.shape()));
  }
  const int h = x.dim(2);
  const int w = x.dim(3);
  if (h > std::numeric_limits<uint16_t>::max() || w > std::numeric_limits<uint16_t>::max()) {
    throw std::invalid_argument("encode: image larger than 65535 pixels on a side");
  }
  NoGradGuard guard;
  EncodeResult r;
  QuantizeStats stats;
  r.code = quantize_infer(latents(x, lambda, hard_mask), model_.config.support, &stats);
  r.code.image_height = h;
  r.code.image_width = w;
  r.clamp_events = stats.clamp_events;

  Bitstream s;
  s.payload = encode_latents(r.code, tables_);
  s.header.flags = hard_mask ? kFlagHardMask : 0;
  s.header.width = static_cast<uint16_t>(w);
  s.header.height = static_cast<uint16_t>(h);
  s.header.channels = static_cast<uint8_t>(r.code.channels);
  s.header.lambda = static_cast<float>(lambda);
  s.header.model_hash = hash_;
  s.header.payload_length = static_cast<uint32_t>(s.payload.size());
  r.bitstream = serialize_bitstream(s);
  r.bpp = bpp_of(r.bitstream, w, h);
  r.reconstruction = reconstruct(r.code);
  return r;
}

Tensor Codec::decode(std::span<const uint8_t> bitstream) const {
  const Bitstream s = parse_bitstream(bitstream);
  if (s.header.model_hash != hash_) {
    throw FormatError("bitstream: model hash mismatch (stream " +
                      std::to_string(s.header.model_hash) + ", model " +
                      std::to_string(hash_) + ")");
  }
  if (s.header.channels != model_.config.latent_channels) {
    throw FormatError("bitstream: " + std::to_string(s.header.channels) +
                      " latent channels, model has " +
                      std::to_string(model_.config.latent_channels));
  }
  const int f = model_.transforms.downsampling_factor();
  const int ph = (s.header.height + f - 1) / f;
  const int pw = (s.header.width + f - 1) / f;
  LatentCode code;
  try {
    code = decode_latents(s.payload, s.header.channels, ph, pw, tables_);
  } catch (const RangeCoderError& e) {
    throw FormatError(std::string("bitstream: ") + e.what());
  }
  code.image_height = s.header.height;
  code.image_width = s.header.width;
  return reconstruct(code);
}

Tensor Codec::reconstruct(const LatentCode& code) const {
  NoGradGuard guard;
  const Tensor x_hat = synthesize(model_.transforms, dequantize(code));
  return to_8bit(crop(x_hat, code.image_height, code.image_width));
}

}  // namespace modnic
