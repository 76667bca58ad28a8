#include "minimm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "minimm/adam.hpp"
#include "minimm/objectives.hpp"
#include "minimm/pipeline.hpp"
#include "minimm/tokenizer.hpp"

namespace minimm {

namespace {

void mean_rows_into(const Tensor& m, double* out) {
    const int rows = m.rows(), cols = m.cols();
    for (int j = 0; j < cols; ++j) out[j] = 0.0;
    const double* v = m.data().data();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out[j] += v[size_t(i) * cols + j];
    for (int j = 0; j < cols; ++j) out[j] /= double(rows);
}

std::vector<int> sorted_classes(const std::vector<int>& labels) {
    std::set<int> s(labels.begin(), labels.end());
    return std::vector<int>(s.begin(), s.end());
}

void shuffle_vec(std::vector<int>& v, Rng& rng) {
    for (int i = int(v.size()) - 1; i > 0; --i)
        std::swap(v[size_t(i)], v[size_t(rng.uniform_int(i + 1))]);
}

// score rows against a [C x d] weight block; argmax with ties to the first
int argmax_score(const double* scores, int c) {
    int best = 0;
    for (int j = 1; j < c; ++j)
        if (scores[j] > scores[best]) best = j;
    return best;
}

Tensor score_from_visual(const MultimodalModel& m, const Tensor& visual,
                         std::span<const int> query, std::span<const int> response,
                         bool mean_per_token) {
    auto seq = m.assemble_sequence(visual, query, response);
    auto logits = m.lm.logits_from_hidden(m.lm.forward_hidden(seq.embeds));
    const int start = seq.visual_len + seq.query_len;
    const int r = int(response.size());
    auto pred = ops::slice_rows(logits, start - 1, start - 1 + r);
    std::vector<int> ones(size_t(r), 1);
    if (mean_per_token) return ops::softmax_cross_entropy(pred, response, ones);
    return ops::masked_logprob_sum(pred, response, ones);
}

} // namespace

FeatureMatrix extract_features(const MultimodalModel& model,
                               const std::vector<const Sample*>& samples,
                               const std::string& source) {
    if (source != "encoder" && source != "projected")
        throw std::invalid_argument("extract_features: unknown source '" + source + "'");
    NoGradGuard ng;
    FeatureMatrix out;
    out.source = source;
    out.n = int(samples.size());
    for (const Sample* s : samples) {
        Tensor feats = model.encode_image(s->image);
        if (source == "projected") feats = model.projector.forward(feats);
        if (out.d == 0) {
            out.d = feats.cols();
            out.values.resize(size_t(out.n) * size_t(out.d));
        }
        mean_rows_into(feats, out.values.data() + out.sample_ids.size() * size_t(out.d));
        out.sample_ids.push_back(s->id);
    }
    return out;
}

FeatureMatrix text_tower_features(const LanguageModel& lm,
                                  const std::vector<std::vector<int>>& token_seqs) {
    NoGradGuard ng;
    FeatureMatrix out;
    out.source = "text";
    out.n = int(token_seqs.size());
    out.d = lm.config().embed_dim;
    out.values.resize(size_t(out.n) * size_t(out.d));
    for (size_t i = 0; i < token_seqs.size(); ++i) {
        if (token_seqs[i].empty())
            throw std::invalid_argument("text_tower_features: empty token sequence");
        auto hidden = lm.forward_hidden(lm.embed_tokens(token_seqs[i]));
        mean_rows_into(hidden, out.values.data() + i * size_t(out.d));
        out.sample_ids.push_back(int(i));
    }
    return out;
}

double linear_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                    const LinearProbeConfig& cfg) {
    if (int(labels.size()) != features.n)
        throw std::invalid_argument("linear_probe: labels and features disagree");
    auto classes = sorted_classes(labels);
    if (classes.size() < 2) throw std::invalid_argument("linear_probe: needs >= 2 classes");
    std::map<int, int> class_index;
    for (size_t i = 0; i < classes.size(); ++i) class_index[classes[i]] = int(i);
    const int c = int(classes.size());
    const int d = features.d;

    // stratified split
    Rng rng(mix_seed(cfg.seed, 0x11EA));
    std::vector<int> train, val;
    for (int cls : classes) {
        std::vector<int> idx;
        for (int i = 0; i < features.n; ++i)
            if (labels[size_t(i)] == cls) idx.push_back(i);
        shuffle_vec(idx, rng);
        const int n_train = std::max(1, int(std::lround((1.0 - cfg.heldout_frac) * idx.size())));
        for (size_t i = 0; i < idx.size(); ++i)
            (int(i) < n_train ? train : val).push_back(idx[i]);
    }
    if (val.empty()) throw std::invalid_argument("linear_probe: empty held-out split");
    for (int cls : classes) {
        bool present = false;
        for (int i : train) present = present || labels[size_t(i)] == cls;
        if (!present)
            throw std::invalid_argument("linear_probe: class absent from training split");
    }

    // center on the training mean; prototype scores are then
    // nearest-centroid-like and insensitive to a global offset
    std::vector<double> mu(size_t(d), 0.0);
    for (int i : train) {
        const double* row = features.row(i);
        for (int j = 0; j < d; ++j) mu[size_t(j)] += row[j];
    }
    for (int j = 0; j < d; ++j) mu[size_t(j)] /= double(train.size());
    std::vector<double> centered(features.values);
    for (int i = 0; i < features.n; ++i)
        for (int j = 0; j < d; ++j) centered[size_t(i) * d + j] -= mu[size_t(j)];
    auto crow = [&](int i) { return centered.data() + size_t(i) * d; };

    std::vector<double> w(size_t(c) * size_t(d), 0.0);
    std::vector<double> bias(size_t(c), 0.0);

    if (cfg.mode == "prototype") {
        // class-mean prototypes as the weights of a linear layer
        std::vector<int> counts(size_t(c), 0);
        for (int i : train) {
            const int ci = class_index[labels[size_t(i)]];
            counts[size_t(ci)]++;
            const double* row = crow(i);
            for (int j = 0; j < d; ++j) w[size_t(ci) * d + j] += row[j];
        }
        for (int ci = 0; ci < c; ++ci)
            for (int j = 0; j < d; ++j) w[size_t(ci) * d + j] /= double(counts[size_t(ci)]);
    } else if (cfg.mode == "logistic") {
        // L2-regularized multinomial regression by full-batch Adam
        Tensor X = Tensor::from_vector({int(train.size()), d}, [&] {
            std::vector<double> v;
            v.reserve(train.size() * size_t(d));
            for (int i : train) v.insert(v.end(), crow(i), crow(i) + d);
            return v;
        }());
        std::vector<int> targets;
        for (int i : train) targets.push_back(class_index[labels[size_t(i)]]);
        std::vector<int> ones(train.size(), 1);
        Tensor W = Tensor::zeros({d, c}, true);
        Tensor B = Tensor::zeros({c}, true);
        Adam opt({W, B}, {.lr = cfg.lr});
        for (int it = 0; it < cfg.iters; ++it) {
            auto logits = ops::add(ops::matmul(X, W), B);
            auto ce = ops::softmax_cross_entropy(logits, targets, ones);
            auto loss = ops::add(ce, ops::scale(ops::sum_all(ops::mul(W, W)), cfg.l2));
            opt.zero_grad();
            backward(loss);
            opt.step();
        }
        for (int ci = 0; ci < c; ++ci) {
            for (int j = 0; j < d; ++j) w[size_t(ci) * d + j] = W.data()[size_t(j) * c + ci];
            bias[size_t(ci)] = B.data()[size_t(ci)];
        }
    } else {
        throw std::invalid_argument("linear_probe: unknown mode '" + cfg.mode + "'");
    }

    int correct = 0;
    std::vector<double> scores(static_cast<size_t>(c));
    for (int i : val) {
        const double* row = crow(i);
        for (int ci = 0; ci < c; ++ci) {
            double s = bias[size_t(ci)];
            const double* wrow = w.data() + size_t(ci) * d;
            for (int j = 0; j < d; ++j) s += wrow[j] * row[j];
            scores[size_t(ci)] = s;
        }
        if (classes[size_t(argmax_score(scores.data(), c))] == labels[size_t(i)]) ++correct;
    }
    return double(correct) / double(val.size());
}

namespace {

double seg_probe_once(const FeatureMatrix& feats, const std::vector<uint8_t>& labels,
                      const SegProbeConfig& cfg, uint64_t seed) {
    const int d = feats.d;
    auto classes = [&] {
        std::set<int> s;
        for (uint8_t l : labels) s.insert(int(l));
        return std::vector<int>(s.begin(), s.end());
    }();
    const int c = int(classes.size());
    std::map<int, int> class_index;
    for (size_t i = 0; i < classes.size(); ++i) class_index[classes[i]] = int(i);

    Rng rng(mix_seed(seed, 0x5E6));
    std::vector<int> idx(labels.size());
    std::iota(idx.begin(), idx.end(), 0);
    shuffle_vec(idx, rng);
    const int n_train = std::max(1, int(std::lround((1.0 - cfg.heldout_frac) * idx.size())));
    std::vector<int> train(idx.begin(), idx.begin() + n_train);
    std::vector<int> val(idx.begin() + n_train, idx.end());
    if (val.empty()) throw std::invalid_argument("segmentation probe: empty validation split");

    Rng init(mix_seed(seed, 0x1717));
    Tensor W1 = Tensor::randn({d, cfg.hidden}, init, 0.1, true);
    Tensor B1 = Tensor::zeros({cfg.hidden}, true);
    Tensor W2 = Tensor::randn({cfg.hidden, c}, init, 0.1, true);
    Tensor B2 = Tensor::zeros({c}, true);
    Adam opt({W1, B1, W2, B2}, {.lr = cfg.lr});

    const int batches = (n_train + cfg.batch - 1) / cfg.batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng(mix_seed(seed, 0xE90C + uint64_t(epoch)));
        shuffle_vec(train, erng);
        for (int bi = 0; bi < batches; ++bi) {
            const int lo = bi * cfg.batch;
            const int hi = std::min(n_train, lo + cfg.batch);
            if (lo >= hi) continue;
            std::vector<double> xv;
            std::vector<int> yv;
            xv.reserve(size_t(hi - lo) * size_t(d));
            for (int i = lo; i < hi; ++i) {
                const int r = train[size_t(i)];
                xv.insert(xv.end(), feats.row(r), feats.row(r) + d);
                yv.push_back(class_index[int(labels[size_t(r)])]);
            }
            Tensor X = Tensor::from_vector({hi - lo, d}, std::move(xv));
            std::vector<int> ones(size_t(hi - lo), 1);
            auto h = ops::gelu(ops::add(ops::matmul(X, W1), B1));
            auto logits = ops::add(ops::matmul(h, W2), B2);
            auto loss = ops::softmax_cross_entropy(logits, yv, ones);
            opt.zero_grad();
            backward(loss);
            opt.step();
        }
    }

    // per-class recall on validation patches, non-background classes only
    std::map<int, int> hit, count;
    {
        NoGradGuard ng;
        for (int r : val) {
            std::vector<double> xv(feats.row(r), feats.row(r) + d);
            Tensor X = Tensor::from_vector({1, d}, std::move(xv));
            auto h = ops::gelu(ops::add(ops::matmul(X, W1), B1));
            auto logits = ops::add(ops::matmul(h, W2), B2);
            const int pred = classes[size_t(argmax_score(logits.data().data(), c))];
            const int truth = int(labels[size_t(r)]);
            count[truth]++;
            if (pred == truth) hit[truth]++;
        }
    }
    double recall_sum = 0.0;
    int recall_classes = 0;
    for (auto& [cls, n] : count) {
        if (cls == 0) continue;
        recall_sum += double(hit[cls]) / double(n);
        ++recall_classes;
    }
    if (recall_classes == 0)
        throw std::invalid_argument("segmentation probe: no non-background classes in validation");
    return recall_sum / double(recall_classes);
}

} // namespace

double segmentation_probe_features(const FeatureMatrix& patch_features,
                                   const std::vector<uint8_t>& patch_labels,
                                   const SegProbeConfig& cfg) {
    if (int(patch_labels.size()) != patch_features.n)
        throw std::invalid_argument("segmentation probe: labels and features disagree");
    bool any_fg = false;
    for (uint8_t l : patch_labels) any_fg = any_fg || l != 0;
    if (!any_fg) throw std::invalid_argument("segmentation probe: all-background dataset");
    double sum = 0.0;
    for (int s = 0; s < cfg.seeds; ++s)
        sum += seg_probe_once(patch_features, patch_labels, cfg, mix_seed(cfg.seed_base, s));
    return sum / double(cfg.seeds);
}

double segmentation_probe(const MultimodalModel& model, const Dataset& data,
                          const SegProbeConfig& cfg) {
    NoGradGuard ng;
    FeatureMatrix feats;
    std::vector<uint8_t> labels;
    feats.source = "encoder";
    for (size_t pi = 0; pi < data.split_probe.size(); ++pi) {
        const auto& s = data.samples[size_t(data.split_probe[pi])];
        Tensor a = model.encode_image(s.image);
        if (feats.d == 0) feats.d = a.cols();
        feats.values.insert(feats.values.end(), a.data().begin(), a.data().end());
        const auto& mask = data.probe_masks[pi];
        labels.insert(labels.end(), mask.begin(), mask.end());
        for (int p = 0; p < a.rows(); ++p) feats.sample_ids.push_back(s.id);
    }
    feats.n = int(labels.size());
    return segmentation_probe_features(feats, labels, cfg);
}

double mutual_knn_alignment(const FeatureMatrix& a, const FeatureMatrix& b, int k) {
    if (a.n != b.n) throw std::invalid_argument("alignment: row counts differ");
    const int n = a.n;
    if (k < 1 || k >= n) throw std::invalid_argument("alignment: need 1 <= k < n");

    auto normalize = [](const FeatureMatrix& f) {
        std::vector<double> out(f.values);
        for (int i = 0; i < f.n; ++i) {
            double* row = out.data() + size_t(i) * f.d;
            double norm = 0.0;
            for (int j = 0; j < f.d; ++j) norm += row[j] * row[j];
            norm = std::sqrt(norm);
            if (norm > 0.0)
                for (int j = 0; j < f.d; ++j) row[j] /= norm;
        }
        return out;
    };
    auto na = normalize(a);
    auto nb = normalize(b);

    auto neighbors = [&](const std::vector<double>& rows, int d, int i) {
        std::vector<std::pair<double, int>> sims;
        sims.reserve(size_t(n) - 1);
        const double* ri = rows.data() + size_t(i) * d;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double* rj = rows.data() + size_t(j) * d;
            double s = 0.0;
            for (int x = 0; x < d; ++x) s += ri[x] * rj[x];
            sims.push_back({s, j});
        }
        // descending similarity, ties toward the smaller index
        std::sort(sims.begin(), sims.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return x.second < y.second;
        });
        std::vector<int> out;
        for (int j = 0; j < k; ++j) out.push_back(sims[size_t(j)].second);
        std::sort(out.begin(), out.end());
        return out;
    };

    double overlap = 0.0;
    for (int i = 0; i < n; ++i) {
        auto sa = neighbors(na, a.d, i);
        auto sb = neighbors(nb, b.d, i);
        std::vector<int> inter;
        std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                              std::back_inserter(inter));
        overlap += double(inter.size()) / double(k);
    }
    return overlap / double(n);
}

AttributionMap grad_attribution(const MultimodalModel& model, const Sample& sample,
                                const std::string& objective, const AttributionConfig& cfg) {
    if (objective != "sft" && objective != "dpo")
        throw std::invalid_argument("grad_attribution: objective must be sft or dpo");
    if (sample.chosen_tokens.empty())
        throw std::invalid_argument("grad_attribution: zero-length response");

    MultimodalModel policy = model.clone();
    policy.flags = {true, true, true};
    policy.apply_trainability();
    MultimodalModel reference = model.clone();

    const auto q = model_query(sample);
    const auto yc = model_response(sample.chosen_tokens);
    const auto yr = model_response(sample.rejected_tokens);

    auto build_loss = [&](Tensor* features_out) {
        Tensor a = policy.encode_image(sample.image);
        Tensor visual = policy.projector.forward(a);
        Tensor loss;
        if (objective == "sft") {
            loss = score_from_visual(policy, visual, q, yc, true);
        } else {
            auto lc = score_from_visual(policy, visual, q, yc, false);
            auto lr = score_from_visual(policy, visual, q, yr, false);
            double rc, rr;
            {
                NoGradGuard ng;
                rc = reference.response_logprob(sample.image, q, yc).scalar_value();
                rr = reference.response_logprob(sample.image, q, yr).scalar_value();
            }
            auto z = ops::scale(ops::sub(ops::sub(lc, lr), Tensor::scalar(rc - rr)), cfg.beta);
            loss = ops::neg(ops::log_sigmoid(z));
        }
        if (features_out) *features_out = a;
        return loss;
    };

    // settle into the schedule before reading gradients
    Adam opt(policy.trainable_params(), {.lr = cfg.lr});
    for (int step = 0; step < cfg.train_steps; ++step) {
        auto loss = build_loss(nullptr);
        opt.zero_grad();
        backward(loss);
        opt.step(cosine_lr(cfg.lr, step, cfg.schedule_total, 0.03));
    }

    Tensor features;
    auto loss = build_loss(&features);
    opt.zero_grad();
    features.zero_grad();
    backward(loss);

    const int patches = features.rows();
    const int channels = features.cols();
    const int grid = int(std::lround(std::sqrt(double(patches))));
    AttributionMap map;
    map.grid = grid;
    map.sample_id = sample.id;
    map.objective = objective;
    map.values.resize(size_t(patches));
    const auto& g = features.grad_view();
    double mx = 0.0;
    for (int p = 0; p < patches; ++p) {
        double norm = 0.0;
        for (int j = 0; j < channels; ++j) {
            const double v = g[size_t(p) * channels + j];
            norm += v * v;
        }
        map.values[size_t(p)] = std::sqrt(norm);
        mx = std::max(mx, map.values[size_t(p)]);
    }
    if (mx > 0.0)
        for (auto& v : map.values) v /= mx;
    return map;
}

double attribution_cell_mass(const AttributionMap& map, int target_cell, int scene_grid) {
    if (target_cell < 0) throw std::invalid_argument("attribution_cell_mass: no target cell");
    const int per_cell = map.grid / scene_grid;
    const int cr = target_cell / scene_grid, cc = target_cell % scene_grid;
    double inside = 0.0, total = 0.0;
    for (int r = 0; r < map.grid; ++r)
        for (int c = 0; c < map.grid; ++c) {
            const double v = map.values[size_t(r) * map.grid + c];
            total += v;
            if (r / per_cell == cr && c / per_cell == cc) inside += v;
        }
    return total > 0.0 ? inside / total : 0.0;
}

void write_attribution_pgm(const AttributionMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("attribution: cannot open " + path);
    out << "P5\n" << map.grid << " " << map.grid << "\n255\n";
    for (double v : map.values) out.put(char(uint8_t(std::lround(v * 255.0))));
}

void write_attribution_raw(const AttributionMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("attribution: cannot open " + path);
    out.precision(17);
    for (int r = 0; r < map.grid; ++r) {
        for (int c = 0; c < map.grid; ++c) {
            if (c) out << " ";
            out << map.values[size_t(r) * map.grid + c];
        }
        out << "\n";
    }
}

VqaResult vqa_eval(const MultimodalModel& model, const std::vector<const Sample*>& samples,
                   const VqaConfig& cfg) {
    const auto& tok = tokenizer();
    VqaResult res;
    std::map<std::string, std::pair<int, int>> per_domain; // correct, total
    for (const Sample* s : samples) {
        const auto q = model_query(*s);
        auto generated = model.greedy_decode(s->image, q, cfg.max_new_tokens);
        const bool overlength = int(generated.size()) >= cfg.max_new_tokens;
        bool correct = false;
        if (!overlength) {
            const auto pred = strip_think_spans(generated);
            const auto gold = strip_think_spans(s->chosen_tokens);
            correct = pred == gold;
        } else {
            ++res.overlength;
        }
        auto& [c, t] = per_domain[domain_name(s->domain)];
        t += 1;
        c += correct ? 1 : 0;
        ++res.total;
    }
    double macro = 0.0;
    for (auto& [dom, ct] : per_domain) {
        const double acc = double(ct.first) / double(ct.second);
        res.domain_accuracy[dom] = acc;
        macro += acc;
    }
    res.macro_accuracy = per_domain.empty() ? 0.0 : macro / double(per_domain.size());
    return res;
}

} // namespace minimm
