#include "xlkv/config.hpp"

#include "xlkv/errors.hpp"

namespace xlkv {

void ModelConfig::validate() {
    if (hidden <= 0 || intermediate <= 0 || n_layers <= 0 || vocab_size <= 0 || max_len <= 0) {
        throw config_error("model config: hidden, intermediate, n_layers, vocab_size and max_len must be positive");
    }
    if (n_heads <= 0 || n_kv_heads <= 0) {
        throw config_error("model config: n_heads and n_kv_heads must be positive");
    }
    if (n_heads % n_kv_heads != 0) {
        throw config_error("model config: n_heads (" + std::to_string(n_heads) +
                           ") must be divisible by n_kv_heads (" + std::to_string(n_kv_heads) + ")");
    }
    if (head_dim == 0) {
        if (hidden % n_heads != 0) {
            throw config_error("model config: hidden (" + std::to_string(hidden) +
                               ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
        }
        head_dim = hidden / n_heads;
    }
    if (head_dim * n_heads != hidden) {
        throw config_error("model config: head_dim * n_heads (" + std::to_string(head_dim * n_heads) +
                           ") must equal hidden (" + std::to_string(hidden) + ")");
    }
    if (rope_base <= 0.0 || norm_eps <= 0.0) {
        throw config_error("model config: rope_base and norm_eps must be positive");
    }
}

ModelConfig model_preset(const std::string& name) {
    ModelConfig cfg;
    if (name == "110M") {
        cfg.hidden = 768;
        cfg.intermediate = 2048;
        cfg.n_layers = 12;
        cfg.n_heads = 12;
        cfg.n_kv_heads = 6;
        cfg.vocab_size = 32000;
        cfg.max_len = 1024;
    } else if (name == "1.1B") {
        cfg.hidden = 2048;
        cfg.intermediate = 5632;
        cfg.n_layers = 22;
        cfg.n_heads = 32;
        cfg.n_kv_heads = 4;
        cfg.vocab_size = 32000;
        cfg.max_len = 2048;
    } else if (name == "tiny") {
        cfg.hidden = 32;
        cfg.intermediate = 96;
        cfg.n_layers = 6;
        cfg.n_heads = 4;
        cfg.n_kv_heads = 2;
        cfg.vocab_size = 258;
        cfg.max_len = 256;
    } else {
        throw config_error("unknown model preset '" + name + "' (expected 110M, 1.1B or tiny)");
    }
    cfg.validate();
    return cfg;
}

} // namespace xlkv
