#include "dsdrive/tokenizer.hpp"

#include "dsdrive/errors.hpp"

namespace dsdrive::tok {
namespace {

// Appends `text` with every malformed UTF-8 sequence replaced by U+FFFD.
// One replacement per rejected byte.
std::string sanitize_utf8(std::string_view text) {
  static constexpr std::string_view kReplacement = "\xef\xbf\xbd";
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    uint32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xe0) == 0xc0) {
      len = 2;
      cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
      len = 3;
      cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const unsigned char bk = static_cast<unsigned char>(text[i + k]);
      if ((bk & 0xc0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (bk & 0x3f);
      }
    }
    if (ok) {
      // reject overlong forms, surrogates and out-of-range points
      if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
          (cp >= 0xd800 && cp <= 0xdfff) || cp > 0x10ffff) {
        ok = false;
      }
    }
    if (ok) {
      out.append(text.substr(i, len));
      i += len;
    } else {
      out.append(kReplacement);
      i += 1;
    }
  }
  return out;
}

}  // namespace

void TokenSequence::validate() const {
  bool seen_eos = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= kVocabSize) {
      throw ValidationError("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                            " outside vocabulary of " + std::to_string(kVocabSize));
    }
    if (id == kBos && i != 0) {
      throw ValidationError("BOS at position " + std::to_string(i) + ", only position 0 is valid");
    }
    if (seen_eos) {
      throw ValidationError("token after EOS at position " + std::to_string(i));
    }
    if (id == kEos) seen_eos = true;
  }
}

TokenSequence encode(std::string_view text, bool add_bos, bool add_eos) {
  TokenSequence seq;
  seq.ids.reserve(text.size() + 2);
  if (add_bos) seq.ids.push_back(kBos);
  for (unsigned char b : text) seq.ids.push_back(static_cast<int>(b) + kByteOffset);
  if (add_eos) seq.ids.push_back(kEos);
  return seq;
}

std::string decode(std::span<const int> ids) {
  std::string bytes;
  bytes.reserve(ids.size());
  for (int id : ids) {
    if (id >= kByteOffset && id < kVocabSize) {
      bytes.push_back(static_cast<char>(id - kByteOffset));
    }
    // specials and out-of-range ids are skipped
  }
  return sanitize_utf8(bytes);
}

std::string decode(const TokenSequence& seq) { return decode(std::span<const int>(seq.ids)); }

}  // namespace dsdrive::tok
