#pragma once

#include <cstdint>
#include <string>

namespace xlkv {

// Architectural hyperparameters of the decoder-only model.
struct ModelConfig {
    int hidden = 0;
    int intermediate = 0;
    int n_layers = 0;
    int n_heads = 0;
    int n_kv_heads = 0;
    int head_dim = 0; // 0 = derive as hidden / n_heads
    int vocab_size = 0;
    int max_len = 0;
    double rope_base = 10000.0;
    double norm_eps = 1e-5;
    bool tie_embeddings = false;

    int kv_dim() const { return n_kv_heads * head_dim; }
    int q_dim() const { return n_heads * head_dim; }

    // Fills derived fields and checks invariants. Throws config_error.
    void validate();
};

// Named architectures: "110M", "1.1B" (documentation parity with the large
// configs) and "tiny" for desk-scale runs.
ModelConfig model_preset(const std::string& name);

} // namespace xlkv
