#include "minimm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "minimm/tokenizer.hpp"

namespace minimm {

namespace {

Tensor init_weight(int in, int out, Rng& rng, double std) {
    return Tensor::randn({in, out}, rng, std, true);
}

Affine init_affine(int in, int out, Rng& rng, double std) {
    return {init_weight(in, out, rng, std), Tensor::zeros({out}, true)};
}

// std 0.02 everywhere, residual output projections scaled by 1/sqrt(depth)
BlockParams init_block(int dim, int depth, Rng& rng) {
    const double std = 0.02;
    const double out_std = std / std::sqrt(double(std::max(1, depth)));
    BlockParams b;
    b.ln1_g = Tensor::full({dim}, 1.0, true);
    b.ln1_b = Tensor::zeros({dim}, true);
    b.q = init_affine(dim, dim, rng, std);
    b.k = init_affine(dim, dim, rng, std);
    b.v = init_affine(dim, dim, rng, std);
    b.o = init_affine(dim, dim, rng, out_std);
    b.ln2_g = Tensor::full({dim}, 1.0, true);
    b.ln2_b = Tensor::zeros({dim}, true);
    b.mlp1 = init_affine(dim, 4 * dim, rng, std);
    b.mlp2 = init_affine(4 * dim, dim, rng, out_std);
    return b;
}

void visit_affine(const std::string& prefix, Affine& a, const ParamVisitor& v) {
    v(prefix + ".w", a.w);
    v(prefix + ".b", a.b);
}

void visit_block(const std::string& prefix, BlockParams& b, const ParamVisitor& v) {
    v(prefix + ".ln1.g", b.ln1_g);
    v(prefix + ".ln1.b", b.ln1_b);
    visit_affine(prefix + ".attn.q", b.q, v);
    visit_affine(prefix + ".attn.k", b.k, v);
    visit_affine(prefix + ".attn.v", b.v, v);
    visit_affine(prefix + ".attn.o", b.o, v);
    v(prefix + ".ln2.g", b.ln2_g);
    v(prefix + ".ln2.b", b.ln2_b);
    visit_affine(prefix + ".mlp1", b.mlp1, v);
    visit_affine(prefix + ".mlp2", b.mlp2, v);
}

Tensor affine_fwd(const Tensor& x, const Affine& a) {
    return ops::add(ops::matmul(x, a.w), a.b);
}

} // namespace

VisionEncoderConfig encoder_preset(const std::string& name) {
    VisionEncoderConfig c;
    if (name == "B") c.depth = 1;
    else if (name == "L") c.depth = 2;
    else if (name == "So") c.depth = 3;
    else if (name == "g") c.depth = 4;
    else throw std::invalid_argument("unknown encoder preset '" + name + "'");
    return c;
}

LmConfig lm_preset(const std::string& name) {
    LmConfig c;
    if (name == "0.5B") c.depth = 2;
    else if (name == "1.5B") c.depth = 3;
    else if (name == "3B") c.depth = 4;
    else if (name == "7B") c.depth = 6;
    else throw std::invalid_argument("unknown lm preset '" + name + "'");
    return c;
}

Tensor transformer_block(const Tensor& x, const BlockParams& p, int heads,
                         const Tensor* attn_mask) {
    const int d = x.cols();
    if (d % heads != 0) throw std::invalid_argument("transformer_block: dim not divisible by heads");
    const int dh = d / heads;
    auto h = ops::layer_norm(x, p.ln1_g, p.ln1_b);
    auto q = affine_fwd(h, p.q);
    auto k = affine_fwd(h, p.k);
    auto v = affine_fwd(h, p.v);
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    Tensor ctx;
    for (int hd = 0; hd < heads; ++hd) {
        auto qh = ops::slice_cols(q, hd * dh, (hd + 1) * dh);
        auto kh = ops::slice_cols(k, hd * dh, (hd + 1) * dh);
        auto vh = ops::slice_cols(v, hd * dh, (hd + 1) * dh);
        auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
        if (attn_mask) scores = ops::add(scores, *attn_mask);
        auto head_ctx = ops::matmul(ops::softmax_rows(scores), vh);
        ctx = hd == 0 ? head_ctx : ops::concat_cols(ctx, head_ctx);
    }
    auto x2 = ops::add(x, affine_fwd(ctx, p.o));
    auto h2 = ops::layer_norm(x2, p.ln2_g, p.ln2_b);
    auto m = affine_fwd(ops::gelu(affine_fwd(h2, p.mlp1)), p.mlp2);
    return ops::add(x2, m);
}

Tensor causal_mask(int t) {
    std::vector<double> m(size_t(t) * t, 0.0);
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) m[size_t(i) * t + j] = -1e30;
    return Tensor::from_vector({t, t}, std::move(m));
}

std::vector<double> image_to_unit(const Image& img) {
    std::vector<double> v(img.rgb.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = double(img.rgb[i]) / 255.0;
    return v;
}

Tensor patchify(const Image& img, int patch_size) {
    if (img.h != img.w || img.h % patch_size != 0)
        throw std::invalid_argument("patchify: image size not divisible by patch size");
    const int side = img.h / patch_size;
    const int pd = patch_size * patch_size * 3;
    std::vector<double> out(size_t(side) * side * size_t(pd));
    size_t r = 0;
    for (int pr = 0; pr < side; ++pr) {
        for (int pc = 0; pc < side; ++pc, ++r) {
            double* row = out.data() + r * size_t(pd);
            size_t o = 0;
            for (int y = 0; y < patch_size; ++y) {
                const int iy = pr * patch_size + y;
                for (int x = 0; x < patch_size; ++x) {
                    const int ix = pc * patch_size + x;
                    const size_t p = (size_t(iy) * img.w + size_t(ix)) * 3;
                    row[o++] = double(img.rgb[p + 0]) / 255.0;
                    row[o++] = double(img.rgb[p + 1]) / 255.0;
                    row[o++] = double(img.rgb[p + 2]) / 255.0;
                }
            }
        }
    }
    return Tensor::from_vector({side * side, pd}, std::move(out));
}

std::vector<double> unpatchify(const Tensor& patches, int image_size, int patch_size) {
    const int side = image_size / patch_size;
    const int pd = patch_size * patch_size * 3;
    if (patches.rows() != side * side || patches.cols() != pd)
        throw std::invalid_argument("unpatchify: shape mismatch");
    std::vector<double> img(size_t(image_size) * image_size * 3);
    size_t r = 0;
    for (int pr = 0; pr < side; ++pr) {
        for (int pc = 0; pc < side; ++pc, ++r) {
            const double* row = patches.data().data() + r * size_t(pd);
            size_t o = 0;
            for (int y = 0; y < patch_size; ++y) {
                const int iy = pr * patch_size + y;
                for (int x = 0; x < patch_size; ++x) {
                    const int ix = pc * patch_size + x;
                    const size_t p = (size_t(iy) * image_size + size_t(ix)) * 3;
                    img[p + 0] = row[o++];
                    img[p + 1] = row[o++];
                    img[p + 2] = row[o++];
                }
            }
        }
    }
    return img;
}

VisionEncoder::VisionEncoder(VisionEncoderConfig cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.image_size % cfg.patch_size != 0)
        throw std::invalid_argument("vision encoder: image size not divisible by patch size");
    Rng rng(seed);
    patch_proj = init_affine(cfg.patch_dim(), cfg.embed_dim, rng, 0.02);
    pos = Tensor::randn({cfg.num_patches(), cfg.embed_dim}, rng, 0.02, true);
    for (int i = 0; i < cfg.depth; ++i) blocks.push_back(init_block(cfg.embed_dim, cfg.depth, rng));
    lnf_g = Tensor::full({cfg.embed_dim}, 1.0, true);
    lnf_b = Tensor::zeros({cfg.embed_dim}, true);
}

Tensor VisionEncoder::encode_patches(const Tensor& patches) const {
    if (patches.rows() != cfg_.num_patches() || patches.cols() != cfg_.patch_dim())
        throw std::invalid_argument("vision encoder: patch tensor shape mismatch");
    auto h = ops::add(affine_fwd(patches, patch_proj), pos);
    for (const auto& b : blocks) h = transformer_block(h, b, cfg_.heads, nullptr);
    return ops::layer_norm(h, lnf_g, lnf_b);
}

Tensor VisionEncoder::encode(const Image& img) const {
    return encode_patches(patchify(img, cfg_.patch_size));
}

void VisionEncoder::visit_params(const std::string& prefix, const ParamVisitor& v) {
    visit_affine(prefix + "patch_proj", patch_proj, v);
    v(prefix + "pos", pos);
    for (size_t i = 0; i < blocks.size(); ++i)
        visit_block(prefix + "block" + std::to_string(i), blocks[i], v);
    v(prefix + "lnf.g", lnf_g);
    v(prefix + "lnf.b", lnf_b);
}

Tensor ensemble_encode(const VisionEncoder& a, const VisionEncoder& b, const Image& img) {
    if (a.config().num_patches() != b.config().num_patches() ||
        a.config().patch_size != b.config().patch_size)
        throw std::invalid_argument("ensemble_encode: patch grids differ");
    return ops::concat_cols(a.encode(img), b.encode(img));
}

Projector::Projector(std::vector<int> dims_in, uint64_t seed) : dims(std::move(dims_in)) {
    if (dims.size() < 2) throw std::invalid_argument("projector: needs at least one layer");
    Rng rng(seed);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        // fan-in scaled: keeps projected visual tokens on the same footing as
        // the token embeddings from the first step
        const double std = 1.0 / std::sqrt(double(dims[i]));
        layers.push_back(init_affine(dims[i], dims[i + 1], rng, std));
        frozen.push_back(false);
    }
}

Tensor Projector::forward(const Tensor& x) const {
    Tensor h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        h = affine_fwd(h, layers[i]);
        if (i + 1 < layers.size()) h = ops::gelu(h);
    }
    return h;
}

void Projector::visit_params(const std::string& prefix, const ParamVisitor& v) {
    for (size_t i = 0; i < layers.size(); ++i)
        visit_affine(prefix + "l" + std::to_string(i), layers[i], v);
}

LanguageModel::LanguageModel(LmConfig cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg_.vocab_size == 0) cfg_.vocab_size = tokenizer().vocab_size();
    Rng rng(seed);
    tok_embed = Tensor::randn({cfg_.vocab_size, cfg_.embed_dim}, rng, 0.02, true);
    pos_embed = Tensor::randn({cfg_.max_seq_len, cfg_.embed_dim}, rng, 0.02, true);
    for (int i = 0; i < cfg_.depth; ++i)
        blocks.push_back(init_block(cfg_.embed_dim, cfg_.depth, rng));
    lnf_g = Tensor::full({cfg_.embed_dim}, 1.0, true);
    lnf_b = Tensor::zeros({cfg_.embed_dim}, true);
    head = init_affine(cfg_.embed_dim, cfg_.vocab_size, rng, 0.02);
}

Tensor LanguageModel::embed_tokens(std::span<const int> ids) const {
    return ops::embedding_lookup(tok_embed, ids);
}

Tensor LanguageModel::forward_hidden(const Tensor& embeds) const {
    const int t = embeds.rows();
    if (t > cfg_.max_seq_len)
        throw std::invalid_argument("language model: sequence length " + std::to_string(t) +
                                    " exceeds max " + std::to_string(cfg_.max_seq_len));
    auto h = ops::add(embeds, ops::slice_rows(pos_embed, 0, t));
    const Tensor mask = causal_mask(t);
    for (const auto& b : blocks) h = transformer_block(h, b, cfg_.heads, &mask);
    return ops::layer_norm(h, lnf_g, lnf_b);
}

Tensor LanguageModel::logits_from_hidden(const Tensor& hidden) const {
    return affine_fwd(hidden, head);
}

void LanguageModel::visit_params(const std::string& prefix, const ParamVisitor& v) {
    v(prefix + "tok_embed", tok_embed);
    v(prefix + "pos_embed", pos_embed);
    for (size_t i = 0; i < blocks.size(); ++i)
        visit_block(prefix + "block" + std::to_string(i), blocks[i], v);
    v(prefix + "lnf.g", lnf_g);
    v(prefix + "lnf.b", lnf_b);
    visit_affine(prefix + "head", head, v);
}

MultimodalModel::MultimodalModel(VisionEncoderConfig enc_cfg, ProjectorConfig proj_cfg,
                                 LmConfig lm_cfg, uint64_t seed,
                                 std::optional<VisionEncoderConfig> enc2_cfg) {
    encoder = VisionEncoder(enc_cfg, mix_seed(seed, 0xE1));
    int enc_out = enc_cfg.embed_dim;
    if (enc2_cfg) {
        encoder2 = VisionEncoder(*enc2_cfg, mix_seed(seed, 0xE2));
        enc_out += enc2_cfg->embed_dim;
    }
    lm = LanguageModel(lm_cfg, mix_seed(seed, 0x17));
    const int hidden = proj_cfg.hidden_dim > 0 ? proj_cfg.hidden_dim : lm.config().embed_dim;
    projector = Projector({enc_out, hidden, lm.config().embed_dim}, mix_seed(seed, 0xF0));
}

Tensor MultimodalModel::encode_image(const Image& img) const {
    if (encoder2) return ensemble_encode(encoder, *encoder2, img);
    return encoder.encode(img);
}

AssembledSequence MultimodalModel::assemble_sequence(const Tensor& visual_embeds,
                                                     std::span<const int> query,
                                                     std::span<const int> response) const {
    const int p = visual_embeds.rows();
    const int q = int(query.size());
    const int r = int(response.size());
    if (p + q + r > lm.config().max_seq_len)
        throw std::invalid_argument("assemble_sequence: sequence exceeds max length");
    if (q == 0) throw std::invalid_argument("assemble_sequence: empty query");

    std::vector<int> text(query.begin(), query.end());
    text.insert(text.end(), response.begin(), response.end());
    Tensor embeds = ops::concat_rows(visual_embeds, lm.embed_tokens(text));

    AssembledSequence seq;
    seq.embeds = std::move(embeds);
    seq.tokens.assign(size_t(p), -1);
    seq.tokens.insert(seq.tokens.end(), text.begin(), text.end());
    seq.mask.assign(size_t(p + q), 0);
    seq.mask.insert(seq.mask.end(), size_t(r), 1);
    seq.visual_len = p;
    seq.query_len = q;
    seq.response_len = r;
    return seq;
}

ForwardTrace MultimodalModel::forward(const Image& img, std::span<const int> query,
                                      std::span<const int> response) const {
    ForwardTrace tr;
    tr.encoder_features = encode_image(img);
    tr.projected = projector.forward(tr.encoder_features);
    tr.seq = assemble_sequence(tr.projected, query, response);
    tr.logits = lm.logits_from_hidden(lm.forward_hidden(tr.seq.embeds));
    return tr;
}

namespace {

// Teacher-forced next-token scoring: logits at t-1 predict token t; response
// tokens sit at positions [P+Q, P+Q+R).
Tensor response_score(const MultimodalModel& m, const Image& img, std::span<const int> query,
                      std::span<const int> response, bool mean_per_token) {
    if (response.empty()) return Tensor::scalar(0.0);
    ForwardTrace tr = m.forward(img, query, response);
    const int start = tr.seq.visual_len + tr.seq.query_len;
    const int r = int(response.size());
    auto pred = ops::slice_rows(tr.logits, start - 1, start - 1 + r);
    std::vector<int> ones(size_t(r), 1);
    if (mean_per_token) return ops::softmax_cross_entropy(pred, response, ones);
    return ops::masked_logprob_sum(pred, response, ones);
}

} // namespace

Tensor MultimodalModel::response_logprob(const Image& img, std::span<const int> query,
                                         std::span<const int> response) const {
    return response_score(*this, img, query, response, false);
}

Tensor MultimodalModel::response_ce_mean(const Image& img, std::span<const int> query,
                                         std::span<const int> response) const {
    return response_score(*this, img, query, response, true);
}

std::vector<int> MultimodalModel::greedy_decode(const Image& img, std::span<const int> query,
                                                int max_new_tokens) const {
    NoGradGuard ng;
    std::vector<int> generated;
    Tensor visual = projector.forward(encode_image(img));
    for (int step = 0; step < max_new_tokens; ++step) {
        std::vector<int> text(query.begin(), query.end());
        text.insert(text.end(), generated.begin(), generated.end());
        Tensor embeds = ops::concat_rows(visual, lm.embed_tokens(text));
        if (embeds.rows() >= lm.config().max_seq_len) break;
        Tensor logits = lm.logits_from_hidden(lm.forward_hidden(embeds));
        const int t = logits.rows();
        const double* row = logits.data().data() + size_t(t - 1) * logits.cols();
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
            if (row[j] > row[best]) best = j;
        if (best == Tokenizer::kEos) break;
        generated.push_back(best);
    }
    return generated;
}

MultimodalModel MultimodalModel::clone() const {
    MultimodalModel copy = *this; // shares tensor impls; now deep-copy them
    copy.visit_params([](const std::string&, Tensor& t) {
        Tensor fresh = Tensor::from_vector(t.shape(), t.data(), t.requires_grad());
        t = fresh;
    });
    return copy;
}

void MultimodalModel::visit_params(const ParamVisitor& v) {
    encoder.visit_params("enc.", v);
    if (encoder2) encoder2->visit_params("enc2.", v);
    projector.visit_params("proj.", v);
    lm.visit_params("lm.", v);
}

std::vector<Tensor> MultimodalModel::trainable_params() {
    std::vector<Tensor> out;
    if (flags.encoder) {
        encoder.visit_params("enc.", [&](const std::string&, Tensor& t) { out.push_back(t); });
        if (encoder2)
            encoder2->visit_params("enc2.", [&](const std::string&, Tensor& t) { out.push_back(t); });
    }
    if (flags.projector) {
        for (size_t i = 0; i < projector.layers.size(); ++i) {
            if (projector.frozen[i]) continue;
            out.push_back(projector.layers[i].w);
            out.push_back(projector.layers[i].b);
        }
    }
    if (flags.lm) {
        lm.visit_params("lm.", [&](const std::string&, Tensor& t) { out.push_back(t); });
    }
    return out;
}

void MultimodalModel::apply_trainability() {
    auto set = [](VisionEncoder& e, bool rg) {
        e.visit_params("", [rg](const std::string&, Tensor& t) { t.set_requires_grad(rg); });
    };
    set(encoder, flags.encoder);
    if (encoder2) set(*encoder2, flags.encoder);
    for (size_t i = 0; i < projector.layers.size(); ++i) {
        const bool rg = flags.projector && !projector.frozen[i];
        projector.layers[i].w.set_requires_grad(rg);
        projector.layers[i].b.set_requires_grad(rg);
    }
    lm.visit_params("", [this](const std::string&, Tensor& t) {
        t.set_requires_grad(flags.lm);
    });
}

uint64_t MultimodalModel::params_hash() {
    uint64_t h = 0xcbf29ce484222325ULL;
    visit_params([&](const std::string& name, Tensor& t) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.data().data(), t.data().size() * sizeof(double), h);
    });
    return h;
}

} // namespace minimm
