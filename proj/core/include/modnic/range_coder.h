// Carry-propagating range coder over static quantized CDF tables.
//
// State: 64-bit low (33 significant bits), 32-bit range, renormalized one
// byte at a time whenever range < 2^24. A pending "cache" byte plus a run
// counter resolves carries out of the top of low. The encoder emits one
// leading byte (always the initial cache) and four bytes on flush, so the
// decoder consumes exactly the bytes that were written.

#ifndef MODNIC_RANGE_CODER_H_
#define MODNIC_RANGE_CODER_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "modnic/density.h"
#include "modnic/transforms.h"

namespace modnic {

class RangeCoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeEncoder {
 public:
  // Encodes table index `index` (symbol - table.min_symbol).
  void encode(const QuantizedCdfTable& table, int index);
  std::vector<uint8_t> finish();

 private:
  void shift_low();

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> bytes);
  // Returns the decoded table index.
  int decode(const QuantizedCdfTable& table);
  size_t position() const { return pos_; }

 private:
  uint8_t next_byte();

  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

// Encodes symbols channel-major, row-major within a channel; channel c uses
// tables[c]. Throws RangeCoderError when a symbol lies outside its table.
std::vector<uint8_t> encode_latents(const LatentCode& code,
                                    std::span<const QuantizedCdfTable> tables);

// Decodes a code of the given geometry (symbols are filled in).
LatentCode decode_latents(std::span<const uint8_t> bytes, int channels,
                          int height, int width,
                          std::span<const QuantizedCdfTable> tables);

// Sum over symbols of -log2 p_table(s).
double ideal_bits(std::span<const int32_t> symbols,
                  std::span<const QuantizedCdfTable> tables,
                  size_t symbols_per_table);

}  // namespace modnic

#endif  // MODNIC_RANGE_CODER_H_
