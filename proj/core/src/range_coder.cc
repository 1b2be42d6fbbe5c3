#include "modnic/range_coder.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace modnic {

namespace {

constexpr uint32_t kTop = 1u << 24;

}  // namespace

void RangeEncoder::encode(const QuantizedCdfTable& table, int index) {
  if (index < 0 || index >= table.symbol_count()) {
    throw RangeCoderError("range coder: symbol " +
                          std::to_string(index + table.min_symbol) +
                          " outside table support [" +
                          std::to_string(table.min_symbol) + ", " +
                          std::to_string(table.max_symbol()) + "]");
  }
  const uint32_t r = range_ >> table.precision;
  low_ += static_cast<uint64_t>(r) * table.cdf[index];
  range_ = r * table.frequency(index);
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::shift_low() {
  if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<uint8_t>(low_ >> 32);
    uint8_t pending = cache_;
    do {
      out_.push_back(static_cast<uint8_t>(pending + carry));
      pending = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  if (pos_ >= bytes_.size()) {
    throw RangeCoderError("range decoder: truncated stream at byte " +
                          std::to_string(pos_) + " of " +
                          std::to_string(bytes_.size()));
  }
  return bytes_[pos_++];
}

int RangeDecoder::decode(const QuantizedCdfTable& table) {
  const uint32_t r = range_ >> table.precision;
  const uint32_t target = code_ / r;
  if (target >= (1u << table.precision)) {
    throw RangeCoderError("range decoder: corrupt stream near byte " +
                          std::to_string(pos_));
  }
  // Last cdf entry <= target.
  const auto it = std::upper_bound(table.cdf.begin(), table.cdf.end(), target);
  const int index = static_cast<int>(it - table.cdf.begin()) - 1;
  code_ -= r * table.cdf[index];
  range_ = r * table.frequency(index);
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
  return index;
}

std::vector<uint8_t> encode_latents(const LatentCode& code,
                                    std::span<const QuantizedCdfTable> tables) {
  if (static_cast<int>(tables.size()) != code.channels) {
    throw RangeCoderError("encode_latents: " + std::to_string(tables.size()) +
                          " tables for " + std::to_string(code.channels) +
                          " channels");
  }
  const size_t plane = static_cast<size_t>(code.height) * code.width;
  if (code.symbols.size() != plane * code.channels) {
    throw RangeCoderError("encode_latents: symbol count does not match shape");
  }
  RangeEncoder enc;
  for (size_t i = 0; i < code.symbols.size(); ++i) {
    const auto& table = tables[i / plane];
    enc.encode(table, code.symbols[i] - table.min_symbol);
  }
  return enc.finish();
}

LatentCode decode_latents(std::span<const uint8_t> bytes, int channels,
                          int height, int width,
                          std::span<const QuantizedCdfTable> tables) {
  if (static_cast<int>(tables.size()) != channels) {
    throw RangeCoderError("decode_latents: table count does not match channels");
  }
  LatentCode code;
  code.channels = channels;
  code.height = height;
  code.width = width;
  const size_t plane = static_cast<size_t>(height) * width;
  code.symbols.resize(plane * channels);
  RangeDecoder dec(bytes);
  for (size_t i = 0; i < code.symbols.size(); ++i) {
    const auto& table = tables[i / plane];
    code.symbols[i] = dec.decode(table) + table.min_symbol;
  }
  return code;
}

double ideal_bits(std::span<const int32_t> symbols,
                  std::span<const QuantizedCdfTable> tables,
                  size_t symbols_per_table) {
  double bits = 0.0;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const auto& t = tables[symbols_per_table ? i / symbols_per_table : 0];
    bits -= std::log2(t.probability(symbols[i] - t.min_symbol));
  }
  return bits;
}

}  // namespace modnic
