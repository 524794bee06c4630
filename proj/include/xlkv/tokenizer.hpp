#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xlkv {

// Byte-level tokenizer: ids 0..255 are raw bytes, plus BOS/EOS specials.
struct ByteTokenizer {
    static constexpr std::int32_t bos_id = 256;
    static constexpr std::int32_t eos_id = 257;
    static constexpr int vocab_size = 258;

    std::vector<std::int32_t> encode(const std::string& text, bool add_bos = false,
                                     bool add_eos = false) const;
    // Inverse on byte ids; specials are skipped.
    std::string decode(const std::vector<std::int32_t>& ids) const;
};

// Little-endian binary token stream, 16- or 32-bit ids. Every id must be
// below vocab_limit; violations report the token index and byte offset.
std::vector<std::int32_t> load_pretokenized(const std::string& path, int width_bits,
                                            std::int32_t vocab_limit);

// Raw text file through the byte tokenizer (no specials added).
std::vector<std::int32_t> load_text_corpus(const std::string& path);

} // namespace xlkv
