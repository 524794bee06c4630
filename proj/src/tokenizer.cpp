#include "xlkv/tokenizer.hpp"

#include <fstream>

#include "xlkv/errors.hpp"

namespace xlkv {

std::vector<std::int32_t> ByteTokenizer::encode(const std::string& text, bool add_bos,
                                                bool add_eos) const {
    std::vector<std::int32_t> out;
    out.reserve(text.size() + 2);
    if (add_bos) out.push_back(bos_id);
    for (unsigned char c : text) out.push_back(static_cast<std::int32_t>(c));
    if (add_eos) out.push_back(eos_id);
    return out;
}

std::string ByteTokenizer::decode(const std::vector<std::int32_t>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        const auto id = ids[i];
        if (id == bos_id || id == eos_id) continue;
        if (id < 0 || id > 255) {
            throw data_error("detokenize: id " + std::to_string(id) + " at offset " +
                             std::to_string(i) + " is not a byte");
        }
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

std::vector<std::int32_t> load_pretokenized(const std::string& path, int width_bits,
                                            std::int32_t vocab_limit) {
    if (width_bits != 16 && width_bits != 32) {
        throw config_error("pretokenized loader: width must be 16 or 32 bits, got " +
                           std::to_string(width_bits));
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open token file '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const size_t width = static_cast<size_t>(width_bits) / 8;
    if (bytes.size() % width != 0) {
        throw data_error("token file '" + path + "': size " + std::to_string(bytes.size()) +
                         " is not a multiple of " + std::to_string(width) + " bytes");
    }
    std::vector<std::int32_t> out;
    out.reserve(bytes.size() / width);
    for (size_t i = 0; i < bytes.size(); i += width) {
        std::uint32_t v = 0;
        for (size_t b = 0; b < width; ++b) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + b])) << (8 * b);
        }
        if (static_cast<std::int64_t>(v) >= static_cast<std::int64_t>(vocab_limit)) {
            throw data_error("token file '" + path + "': token " + std::to_string(v) +
                             " at index " + std::to_string(i / width) + " (byte offset " +
                             std::to_string(i) + ") is outside vocabulary of " +
                             std::to_string(vocab_limit));
        }
        out.push_back(static_cast<std::int32_t>(v));
    }
    return out;
}

std::vector<std::int32_t> load_text_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open corpus '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteTokenizer{}.encode(text);
}

} // namespace xlkv
