#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dsdrive::tok {

// Byte-level vocabulary: ids 4..259 map bijectively to bytes 0..255.
// Chosen over learned subwords because answer text carries numeric waypoints
// that must round-trip losslessly.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kByteOffset = 4;
inline constexpr int kVocabSize = 260;

struct TokenSequence {
  std::vector<int> ids;

  int size() const { return static_cast<int>(ids.size()); }
  bool empty() const { return ids.empty(); }

  // Throws ValidationError unless: all ids in [0, V); BOS at most once and
  // only at position 0; nothing follows EOS.
  void validate() const;
};

// Byte-level encoding with optional BOS/EOS framing. Never fails.
TokenSequence encode(std::string_view text, bool add_bos = false, bool add_eos = false);

// Specials are skipped; bytes reassembled; malformed UTF-8 becomes U+FFFD.
std::string decode(std::span<const int> ids);
std::string decode(const TokenSequence& seq);

}  // namespace dsdrive::tok
