#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "minimm/ops.hpp"
#include "minimm/scene.hpp"

namespace minimm {

struct VisionEncoderConfig {
    int image_size = 64;
    int patch_size = 8;
    int embed_dim = 64;
    int depth = 2;
    int heads = 4;

    int patches_per_side() const { return image_size / patch_size; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }
    int patch_dim() const { return patch_size * patch_size * 3; }
};

// Encoder size ladder: B/L/So/g map onto increasing depth at fixed width.
VisionEncoderConfig encoder_preset(const std::string& name);

struct LmConfig {
    int vocab_size = 0; // 0 resolves to the tokenizer vocabulary size
    int embed_dim = 128;
    int depth = 3;
    int heads = 4;
    int max_seq_len = 192;
};

// LM size ladder: 0.5B/1.5B/3B/7B map onto depth 2/3/4/6 at fixed width.
LmConfig lm_preset(const std::string& name);

struct ProjectorConfig {
    int hidden_dim = 0; // 0 resolves to the LM embed dim
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct Affine {
    Tensor w, b;
};

struct BlockParams {
    Tensor ln1_g, ln1_b;
    Affine q, k, v, o;
    Tensor ln2_g, ln2_b;
    Affine mlp1, mlp2;
};

// Pre-LN transformer block; attn_mask (additive, 0 / -1e30) selects causal
// or bidirectional attention.
Tensor transformer_block(const Tensor& x, const BlockParams& p, int heads,
                         const Tensor* attn_mask);

Tensor causal_mask(int t);

// Non-overlapping row-major patches flattened to rows, values scaled to [0,1].
Tensor patchify(const Image& img, int patch_size);
// Inverse of patchify on the [0,1] scale; exact.
std::vector<double> unpatchify(const Tensor& patches, int image_size, int patch_size);
std::vector<double> image_to_unit(const Image& img);

class VisionEncoder {
public:
    VisionEncoder() = default;
    VisionEncoder(VisionEncoderConfig cfg, uint64_t seed);

    Tensor encode(const Image& img) const; // [num_patches x embed_dim]
    Tensor encode_patches(const Tensor& patches) const;

    void visit_params(const std::string& prefix, const ParamVisitor& v);
    const VisionEncoderConfig& config() const { return cfg_; }

    VisionEncoderConfig cfg_;
    Affine patch_proj;
    Tensor pos;
    std::vector<BlockParams> blocks;
    Tensor lnf_g, lnf_b;
};

// Per-patch channel concatenation of two encoders over the same patch grid.
Tensor ensemble_encode(const VisionEncoder& a, const VisionEncoder& b, const Image& img);

class Projector {
public:
    Projector() = default;
    // dims = {in, hidden..., out}; GELU between layers, none after the last.
    Projector(std::vector<int> dims, uint64_t seed);

    Tensor forward(const Tensor& x) const;
    void visit_params(const std::string& prefix, const ParamVisitor& v);
    int in_dim() const { return dims.front(); }
    int out_dim() const { return dims.back(); }

    std::vector<int> dims;
    std::vector<Affine> layers;
    std::vector<bool> frozen; // per layer
};

class LanguageModel {
public:
    LanguageModel() = default;
    LanguageModel(LmConfig cfg, uint64_t seed);

    Tensor embed_tokens(std::span<const int> ids) const;
    // embeds [T x D] -> hidden [T x D]; adds positions, causal blocks, final LN
    Tensor forward_hidden(const Tensor& embeds) const;
    Tensor logits_from_hidden(const Tensor& hidden) const;

    void visit_params(const std::string& prefix, const ParamVisitor& v);
    const LmConfig& config() const { return cfg_; }

    LmConfig cfg_;
    Tensor tok_embed, pos_embed;
    std::vector<BlockParams> blocks;
    Tensor lnf_g, lnf_b;
    Affine head;
};

struct TrainableFlags {
    bool encoder = true;
    bool projector = true;
    bool lm = true;
};

struct AssembledSequence {
    Tensor embeds;          // [T x lm_dim], order [visual][query][response]
    std::vector<int> tokens; // text token ids; visual positions hold -1
    std::vector<int> mask;   // 1 exactly on response-token positions
    int visual_len = 0, query_len = 0, response_len = 0;
};

struct ForwardTrace {
    Tensor encoder_features; // A = encoder(image), attribution target
    Tensor projected;
    Tensor logits;
    AssembledSequence seq;
};

class MultimodalModel {
public:
    MultimodalModel() = default;
    MultimodalModel(VisionEncoderConfig enc_cfg, ProjectorConfig proj_cfg, LmConfig lm_cfg,
                    uint64_t seed, std::optional<VisionEncoderConfig> enc2_cfg = std::nullopt);

    Tensor encode_image(const Image& img) const; // concatenates the ensemble pair if present

    AssembledSequence assemble_sequence(const Tensor& visual_embeds,
                                        std::span<const int> query,
                                        std::span<const int> response) const;

    ForwardTrace forward(const Image& img, std::span<const int> query,
                         std::span<const int> response) const;

    // Sum over response positions of the realized next-token log-probability.
    Tensor response_logprob(const Image& img, std::span<const int> query,
                            std::span<const int> response) const;
    // Same path, mean per response token (length-normalized).
    Tensor response_ce_mean(const Image& img, std::span<const int> query,
                            std::span<const int> response) const;

    std::vector<int> greedy_decode(const Image& img, std::span<const int> query,
                                   int max_new_tokens) const;

    MultimodalModel clone() const;
    void visit_params(const ParamVisitor& v);
    std::vector<Tensor> trainable_params();
    // Mirrors trainable flags into requires_grad so frozen subtrees drop out
    // of the backward graph entirely.
    void apply_trainability();
    uint64_t params_hash();
    int lm_dim() const { return lm.config().embed_dim; }

    TrainableFlags flags;
    VisionEncoder encoder;
    std::optional<VisionEncoder> encoder2;
    Projector projector;
    LanguageModel lm;
};

} // namespace minimm
