#include "minimm/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "minimm/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace minimm {

namespace {

const std::array<std::string, 4> kDomainNames = {"general", "vision_centric", "ocr_like",
                                                 "knowledge_like"};

constexpr int kCaptionTemplateId = 9;

std::string pad_id(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%07d", id);
    return buf;
}

// ---- token type classes used by response corruption ----

enum class TokType { none, digit, color, shape, shape_plural, yesno };

TokType token_type(int id) {
    const auto& tok = tokenizer();
    const std::string& w = tok.word(id);
    if (w.size() == 1 && w[0] >= '0' && w[0] <= '9') return TokType::digit;
    for (int c = 0; c < kNumColors; ++c)
        if (w == color_name(c)) return TokType::color;
    for (int k = 1; k <= 4; ++k) {
        if (w == shape_name(ShapeKind(k))) return TokType::shape;
        if (w == shape_plural(ShapeKind(k))) return TokType::shape_plural;
    }
    if (w == "yes" || w == "no") return TokType::yesno;
    return TokType::none;
}

std::vector<int> same_type_alternatives(int id) {
    const auto& tok = tokenizer();
    std::vector<int> out;
    const TokType t = token_type(id);
    auto push_if = [&](const std::string& w) {
        const int cand = tok.id(w);
        if (cand != id) out.push_back(cand);
    };
    switch (t) {
    case TokType::digit:
        for (int d = 0; d <= 9; ++d) push_if(std::to_string(d));
        break;
    case TokType::color:
        for (int c = 0; c < kNumColors; ++c) push_if(color_name(c));
        break;
    case TokType::shape:
        for (int k = 1; k <= 4; ++k) push_if(shape_name(ShapeKind(k)));
        break;
    case TokType::shape_plural:
        for (int k = 1; k <= 4; ++k) push_if(shape_plural(ShapeKind(k)));
        break;
    case TokType::yesno:
        push_if("yes");
        push_if("no");
        break;
    case TokType::none:
        break;
    }
    return out;
}

// ---- per-kind object statistics ----

struct KindStats {
    std::array<int, 5> count{};
    std::array<int, 5> first_index{-1, -1, -1, -1, -1};
};

KindStats kind_stats(const SceneGraph& g) {
    KindStats s;
    for (size_t i = 0; i < g.objects.size(); ++i) {
        const int k = int(g.objects[i].kind);
        if (s.count[size_t(k)]++ == 0) s.first_index[size_t(k)] = int(i);
    }
    return s;
}

std::vector<int> unique_kinds(const SceneGraph& g) {
    auto s = kind_stats(g);
    std::vector<int> out;
    for (int k = 1; k <= 4; ++k)
        if (s.count[size_t(k)] == 1) out.push_back(k);
    return out;
}

int cell_of(const SceneObject& o, int grid) { return o.row * grid + o.col; }

// ---- templates ----

std::vector<TaskTemplate> make_templates() {
    std::vector<TaskTemplate> ts;

    ts.push_back({0, Domain::general, "presence", false,
                  [](const SceneGraph&) { return true; },
                  [](const SceneGraph& g, int, Rng& rng) {
                      QA qa;
                      const bool positive = !g.objects.empty() && rng.uniform_int(2) == 0;
                      int color, kind;
                      if (positive) {
                          const auto& o = g.objects[size_t(rng.uniform_int(int(g.objects.size())))];
                          color = o.color;
                          kind = int(o.kind);
                      } else {
                          // draw (color, kind) pairs until one is absent
                          do {
                              color = rng.uniform_int(kNumColors);
                              kind = 1 + rng.uniform_int(4);
                          } while (std::any_of(g.objects.begin(), g.objects.end(),
                                               [&](const SceneObject& o) {
                                                   return o.color == color && int(o.kind) == kind;
                                               }));
                      }
                      qa.question = "is there a " + color_name(color) + " " +
                                    shape_name(ShapeKind(kind)) + " ?";
                      const bool present =
                          std::any_of(g.objects.begin(), g.objects.end(), [&](const SceneObject& o) {
                              return o.color == color && int(o.kind) == kind;
                          });
                      qa.answer = present ? "yes" : "no";
                      return qa;
                  }});

    ts.push_back({1, Domain::general, "color_of", true,
                  [](const SceneGraph& g) { return !unique_kinds(g).empty(); },
                  [](const SceneGraph& g, int grid, Rng& rng) {
                      auto ks = unique_kinds(g);
                      const int kind = ks[size_t(rng.uniform_int(int(ks.size())))];
                      const auto& o = g.objects[size_t(kind_stats(g).first_index[size_t(kind)])];
                      QA qa;
                      qa.question = "what color is the " + shape_name(ShapeKind(kind)) + " ?";
                      qa.answer = color_name(o.color);
                      qa.target_cell = cell_of(o, grid);
                      return qa;
                  }});

    ts.push_back({2, Domain::vision_centric, "count", false,
                  [](const SceneGraph&) { return true; },
                  [](const SceneGraph& g, int, Rng& rng) {
                      const int kind = 1 + rng.uniform_int(4);
                      const int n = kind_stats(g).count[size_t(kind)];
                      QA qa;
                      qa.question = "how many " + shape_plural(ShapeKind(kind)) + " are there ?";
                      qa.answer = std::to_string(n);
                      return qa;
                  }});

    ts.push_back({3, Domain::vision_centric, "left_of_center", true,
                  [](const SceneGraph& g) { return !unique_kinds(g).empty(); },
                  [](const SceneGraph& g, int grid, Rng& rng) {
                      auto ks = unique_kinds(g);
                      const int kind = ks[size_t(rng.uniform_int(int(ks.size())))];
                      const auto& o = g.objects[size_t(kind_stats(g).first_index[size_t(kind)])];
                      QA qa;
                      qa.question = "is the " + color_name(o.color) + " " +
                                    shape_name(ShapeKind(kind)) + " on the left ?";
                      qa.answer = o.col < grid / 2 ? "yes" : "no";
                      qa.target_cell = cell_of(o, grid);
                      return qa;
                  }});

    ts.push_back({4, Domain::ocr_like, "read_glyph", true,
                  [](const SceneGraph& g) { return kind_stats(g).count[4] == 1; },
                  [](const SceneGraph& g, int grid, Rng&) {
                      const auto& o = g.objects[size_t(kind_stats(g).first_index[4])];
                      QA qa;
                      qa.question = "read the glyph";
                      qa.answer = std::to_string(o.digit);
                      qa.target_cell = cell_of(o, grid);
                      return qa;
                  }});

    ts.push_back({5, Domain::ocr_like, "largest_glyph", true,
                  [](const SceneGraph& g) {
                      std::vector<int> digits;
                      for (const auto& o : g.objects)
                          if (o.kind == ShapeKind::glyph) digits.push_back(o.digit);
                      if (digits.empty()) return false;
                      std::sort(digits.begin(), digits.end());
                      return std::adjacent_find(digits.begin(), digits.end()) == digits.end();
                  },
                  [](const SceneGraph& g, int grid, Rng&) {
                      const SceneObject* best = nullptr;
                      for (const auto& o : g.objects)
                          if (o.kind == ShapeKind::glyph && (!best || o.digit > best->digit))
                              best = &o;
                      QA qa;
                      qa.question = "what is the largest glyph ?";
                      qa.answer = std::to_string(best->digit);
                      qa.target_cell = cell_of(*best, grid);
                      return qa;
                  }});

    ts.push_back({6, Domain::knowledge_like, "color_mixing", false,
                  [](const SceneGraph&) { return true; },
                  [](const SceneGraph&, int, Rng& rng) {
                      static const std::array<std::array<const char*, 3>, 3> facts = {{
                          {"red", "blue", "purple"},
                          {"red", "yellow", "orange"},
                          {"blue", "yellow", "green"},
                      }};
                      const auto& f = facts[size_t(rng.uniform_int(3))];
                      const bool swap = rng.uniform_int(2) == 1;
                      QA qa;
                      qa.question = std::string("what color do ") + (swap ? f[1] : f[0]) +
                                    " and " + (swap ? f[0] : f[1]) + " make ?";
                      qa.answer = f[2];
                      return qa;
                  }});

    ts.push_back({7, Domain::knowledge_like, "side_count", false,
                  [](const SceneGraph&) { return true; },
                  [](const SceneGraph&, int, Rng& rng) {
                      static const std::array<std::pair<const char*, const char*>, 3> facts = {{
                          {"square", "4"}, {"triangle", "3"}, {"circle", "0"}}};
                      const auto& f = facts[size_t(rng.uniform_int(3))];
                      QA qa;
                      qa.question = std::string("how many sides does a ") + f.first + " have ?";
                      qa.answer = f.second;
                      return qa;
                  }});

    ts.push_back({8, Domain::knowledge_like, "addition", false,
                  [](const SceneGraph&) { return true; },
                  [](const SceneGraph&, int, Rng& rng) {
                      const int a = rng.uniform_int(10);
                      const int b = rng.uniform_int(10 - a);
                      QA qa;
                      qa.question = "what is " + std::to_string(a) + " plus " +
                                    std::to_string(b) + " ?";
                      qa.answer = std::to_string(a + b);
                      return qa;
                  }});

    return ts;
}

SceneSpec spec_for_domain(const DatasetManifest& m, Domain d, const char* split) {
    SceneSpec s;
    s.image_size = m.image_size;
    s.grid = m.grid;
    if (std::string(split) == "align") {
        s.min_objects = 0;
        s.max_objects = std::min(3, m.max_objects);
    } else if (std::string(split) == "probe") {
        s.min_objects = 1;
        s.max_objects = 5;
    } else {
        s.min_objects = 0;
        s.max_objects = m.max_objects;
        if (d == Domain::ocr_like) {
            s.require_glyph = true;
            s.min_objects = 1;
        }
    }
    return s;
}

// Scenes are replayed from (seed, id): try attempts until some template of
// the domain applies. Builder and scene_for_sample run the same loop.
RenderedScene scene_for(const DatasetManifest& m, int id, Domain d, const char* split,
                        bool caption_only) {
    const auto spec = spec_for_domain(m, d, split);
    for (uint64_t attempt = 0;; ++attempt) {
        if (attempt > 200)
            throw std::runtime_error("dataset: no applicable template after 200 scenes");
        auto scene = generate_scene(mix_seed(scene_seed_for(m, id), attempt), spec);
        if (caption_only) return scene;
        for (int tid : templates_for_domain(d))
            if (template_by_id(tid).applicable(scene.graph)) return scene;
    }
}

std::vector<int> scene_attribute_pool(const SceneGraph& g) {
    const auto& tok = tokenizer();
    std::vector<int> pool;
    for (const auto& o : g.objects) {
        pool.push_back(tok.id(color_name(o.color)));
        pool.push_back(tok.id(shape_name(o.kind)));
        if (o.kind == ShapeKind::glyph) pool.push_back(tok.id(std::to_string(o.digit)));
    }
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    return pool;
}

std::string shift_wrap(const std::string& answer, const SceneGraph& g, int threshold) {
    const auto& tok = tokenizer();
    std::string filler = "<think> looking again";
    size_t words = 3;
    const size_t answer_len = tok.tokenize(answer).size();
    size_t oi = 0;
    while (words + 1 + answer_len <= size_t(threshold)) {
        if (g.objects.empty()) {
            filler += " i see nothing";
            words += 3;
        } else {
            const auto& o = g.objects[oi % g.objects.size()];
            filler += " i see a " + color_name(o.color) + " " + shape_name(o.kind);
            words += 5;
            ++oi;
        }
    }
    return filler + " </think> " + answer;
}

void shuffle_ints(std::vector<int>& v, Rng& rng) {
    for (int i = int(v.size()) - 1; i > 0; --i)
        std::swap(v[size_t(i)], v[size_t(rng.uniform_int(i + 1))]);
}

std::vector<Domain> stratified_domains(const DatasetManifest& m, int n, uint64_t rng_salt) {
    // exact allocation: floor(n*mix) per domain, remainder to the earliest
    std::array<int, 4> counts{};
    int assigned = 0;
    for (int d = 0; d < 4; ++d) {
        counts[size_t(d)] = int(std::floor(m.domain_mix[size_t(d)] * n));
        assigned += counts[size_t(d)];
    }
    for (int d = 0; assigned < n; d = (d + 1) % 4) {
        ++counts[size_t(d)];
        ++assigned;
    }
    std::vector<Domain> out;
    out.reserve(size_t(n));
    for (int d = 0; d < 4; ++d)
        out.insert(out.end(), size_t(counts[size_t(d)]), Domain(d));
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
    Rng rng(mix_seed(m.seed, rng_salt));
    shuffle_ints(idx, rng);
    std::vector<Domain> shuffled(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) shuffled[size_t(idx[size_t(i)])] = out[size_t(i)];
    return shuffled;
}

Sample make_vqa_sample(const DatasetManifest& m, int id, Domain d, const char* split,
                       bool shifted) {
    const auto& tok = tokenizer();
    auto scene = scene_for(m, id, d, split, false);
    std::vector<int> applicable;
    for (int tid : templates_for_domain(d))
        if (template_by_id(tid).applicable(scene.graph)) applicable.push_back(tid);
    Rng trng(mix_seed(m.seed, uint64_t(id), 0x9A));
    const int tid = applicable[size_t(trng.uniform_int(int(applicable.size())))];
    QA qa = template_by_id(tid).instantiate(scene.graph, m.grid, trng);

    Sample s;
    s.id = id;
    s.split = split;
    s.domain = d;
    s.template_id = tid;
    s.shifted = shifted;
    s.target_cell = qa.target_cell;
    s.question = qa.question;
    s.chosen = shifted ? shift_wrap(qa.answer, scene.graph, m.shift_token_threshold) : qa.answer;
    s.chosen_tokens = tok.tokenize(s.chosen);
    s.rejected_tokens = corrupt_response(s.chosen_tokens,
                                         corrupt_mode_from_name(m.corrupt_mode),
                                         mix_seed(m.seed, uint64_t(id), 0xCC),
                                         scene_attribute_pool(scene.graph));
    s.rejected = tok.detokenize(s.rejected_tokens);
    s.q_tokens = tok.tokenize(s.question);
    s.image = std::move(scene.image);
    return s;
}

Sample make_caption_sample(const DatasetManifest& m, int id, const char* split) {
    const auto& tok = tokenizer();
    auto scene = scene_for(m, id, Domain::general, split, true);
    Sample s;
    s.id = id;
    s.split = split;
    s.domain = Domain::general;
    s.template_id = kCaptionTemplateId;
    s.question = "describe the scene";
    s.chosen = caption_for(scene.graph);
    s.q_tokens = tok.tokenize(s.question);
    s.chosen_tokens = tok.tokenize(s.chosen);
    s.rejected_tokens = corrupt_response(s.chosen_tokens,
                                         corrupt_mode_from_name(m.corrupt_mode),
                                         mix_seed(m.seed, uint64_t(id), 0xCC),
                                         scene_attribute_pool(scene.graph));
    s.rejected = tok.detokenize(s.rejected_tokens);
    s.image = std::move(scene.image);
    return s;
}

} // namespace

json manifest_to_json(const DatasetManifest& m) {
    return json{{"seed", m.seed},
                {"align_count", m.align_count},
                {"pretrain_count", m.pretrain_count},
                {"posttrain_count", m.posttrain_count},
                {"eval_count", m.eval_count},
                {"probe_count", m.probe_count},
                {"shift_ratio", m.shift_ratio},
                {"domain_mix", m.domain_mix},
                {"corrupt_mode", m.corrupt_mode},
                {"image_size", m.image_size},
                {"patch_size", m.patch_size},
                {"grid", m.grid},
                {"max_objects", m.max_objects},
                {"shift_token_threshold", m.shift_token_threshold}};
}

DatasetManifest manifest_from_json(const json& j) {
    DatasetManifest m;
    m.seed = j.at("seed").get<uint64_t>();
    m.align_count = j.at("align_count").get<int>();
    m.pretrain_count = j.at("pretrain_count").get<int>();
    m.posttrain_count = j.at("posttrain_count").get<int>();
    m.eval_count = j.at("eval_count").get<int>();
    m.probe_count = j.at("probe_count").get<int>();
    m.shift_ratio = j.at("shift_ratio").get<double>();
    m.domain_mix = j.at("domain_mix").get<std::array<double, 4>>();
    m.corrupt_mode = j.at("corrupt_mode").get<std::string>();
    m.image_size = j.at("image_size").get<int>();
    m.patch_size = j.at("patch_size").get<int>();
    m.grid = j.at("grid").get<int>();
    m.max_objects = j.at("max_objects").get<int>();
    m.shift_token_threshold = j.at("shift_token_threshold").get<int>();
    return m;
}

const std::string& domain_name(Domain d) { return kDomainNames.at(size_t(int(d))); }

Domain domain_from_name(const std::string& name) {
    for (int d = 0; d < 4; ++d)
        if (kDomainNames[size_t(d)] == name) return Domain(d);
    throw std::invalid_argument("unknown domain '" + name + "'");
}

const std::vector<TaskTemplate>& task_templates() {
    static const std::vector<TaskTemplate> ts = make_templates();
    return ts;
}

const TaskTemplate& template_by_id(int id) {
    for (const auto& t : task_templates())
        if (t.id == id) return t;
    throw std::invalid_argument("unknown template id " + std::to_string(id));
}

std::vector<int> templates_for_domain(Domain d) {
    std::vector<int> out;
    for (const auto& t : task_templates())
        if (t.domain == d) out.push_back(t.id);
    return out;
}

std::string caption_for(const SceneGraph& g) {
    std::vector<const SceneObject*> order;
    for (const auto& o : g.objects) order.push_back(&o);
    std::sort(order.begin(), order.end(), [](const SceneObject* a, const SceneObject* b) {
        return std::pair(a->row, a->col) < std::pair(b->row, b->col);
    });
    if (order.empty()) return "nothing";
    std::string out;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i) out += " and ";
        out += "a " + color_name(order[i]->color) + " " + shape_name(order[i]->kind);
    }
    return out;
}

CorruptMode corrupt_mode_from_name(const std::string& name) {
    if (name == "wrong_value") return CorruptMode::wrong_value;
    if (name == "wrong_attribute") return CorruptMode::wrong_attribute;
    if (name == "truncation") return CorruptMode::truncation;
    if (name == "verbose_hedge") return CorruptMode::verbose_hedge;
    throw std::invalid_argument("unknown corrupt mode '" + name + "'");
}

const std::string& corrupt_mode_name(CorruptMode m) {
    static const std::array<std::string, 4> names = {"wrong_value", "wrong_attribute",
                                                     "truncation", "verbose_hedge"};
    return names.at(size_t(int(m)));
}

std::vector<int> corrupt_response(const std::vector<int>& chosen, CorruptMode mode,
                                  uint64_t seed, const std::vector<int>& attribute_pool) {
    if (chosen.empty()) throw std::invalid_argument("corrupt_response: empty response");
    const auto& tok = tokenizer();
    Rng rng(seed);

    // last typed token is the answer slot
    int slot = -1;
    for (int i = int(chosen.size()) - 1; i >= 0; --i) {
        if (token_type(chosen[i]) != TokType::none) {
            slot = i;
            break;
        }
    }

    auto hedge = [&](std::vector<int> base) {
        std::vector<int> out = tok.tokenize("well maybe it could be");
        out.insert(out.end(), base.begin(), base.end());
        return out;
    };

    auto wrong_value = [&]() -> std::vector<int> {
        if (slot < 0) return hedge(chosen); // untyped text: differ by hedging
        auto alts = same_type_alternatives(chosen[size_t(slot)]);
        std::vector<int> out = chosen;
        out[size_t(slot)] = alts[size_t(rng.uniform_int(int(alts.size())))];
        return out;
    };

    switch (mode) {
    case CorruptMode::wrong_value:
        return wrong_value();
    case CorruptMode::wrong_attribute: {
        if (slot < 0) return hedge(chosen);
        const TokType want = token_type(chosen[size_t(slot)]);
        std::vector<int> candidates;
        for (int id : attribute_pool)
            if (token_type(id) == want && id != chosen[size_t(slot)]) candidates.push_back(id);
        if (candidates.empty()) return wrong_value();
        std::vector<int> out = chosen;
        out[size_t(slot)] = candidates[size_t(rng.uniform_int(int(candidates.size())))];
        return out;
    }
    case CorruptMode::truncation: {
        if (chosen.size() < 2) return wrong_value();
        const int drop = 1 + rng.uniform_int(int(chosen.size()) - 1);
        return std::vector<int>(chosen.begin(), chosen.end() - drop);
    }
    case CorruptMode::verbose_hedge:
        return hedge(chosen);
    }
    throw std::logic_error("corrupt_response: unreachable");
}

uint64_t scene_seed_for(const DatasetManifest& m, int sample_id) {
    return mix_seed(m.seed, uint64_t(sample_id), 0x5CE17E);
}

RenderedScene scene_for_sample(const DatasetManifest& m, const Sample& s) {
    return scene_for(m, s.id, s.domain, s.split.c_str(),
                     s.template_id == kCaptionTemplateId);
}

const std::vector<int>& Dataset::split(const std::string& name) const {
    if (name == "align") return split_align;
    if (name == "pretrain") return split_pretrain;
    if (name == "posttrain") return split_posttrain;
    if (name == "eval") return split_eval;
    if (name == "probe") return split_probe;
    throw std::invalid_argument("unknown split '" + name + "'");
}

Dataset build_dataset(const DatasetManifest& m) {
    if (m.shift_ratio < 0.0 || m.shift_ratio > 1.0)
        throw std::invalid_argument("dataset: shift_ratio outside [0,1]");
    double mix_total = 0.0;
    for (double p : m.domain_mix) mix_total += p;
    if (std::fabs(mix_total - 1.0) > 1e-9)
        throw std::invalid_argument("dataset: domain_mix must sum to 1");

    Dataset d;
    d.manifest = m;

    // fixed id bases per split: sample ids (and so scenes) of one split do
    // not depend on the sizes of the others
    constexpr int kSplitBase = 1000000;

    for (int i = 0; i < m.align_count; ++i) {
        d.split_align.push_back(int(d.samples.size()));
        d.samples.push_back(make_caption_sample(m, i, "align"));
    }

    auto add_vqa_split = [&](int count, int id_base, const char* split, std::vector<int>& idx,
                             uint64_t salt, const std::vector<bool>* shifted) {
        auto domains = stratified_domains(m, count, salt);
        for (int i = 0; i < count; ++i) {
            idx.push_back(int(d.samples.size()));
            const bool sh = shifted && (*shifted)[size_t(i)];
            d.samples.push_back(make_vqa_sample(m, id_base + i, domains[size_t(i)], split, sh));
        }
    };

    add_vqa_split(m.pretrain_count, kSplitBase, "pretrain", d.split_pretrain, 0xD1, nullptr);

    std::vector<bool> shifted(size_t(m.posttrain_count), false);
    const int num_shift = int(std::llround(m.shift_ratio * m.posttrain_count));
    {
        std::vector<int> perm(size_t(m.posttrain_count));
        for (int i = 0; i < m.posttrain_count; ++i) perm[size_t(i)] = i;
        Rng rng(mix_seed(m.seed, 0x51F7));
        shuffle_ints(perm, rng);
        for (int i = 0; i < num_shift; ++i) shifted[size_t(perm[size_t(i)])] = true;
    }
    add_vqa_split(m.posttrain_count, 2 * kSplitBase, "posttrain", d.split_posttrain, 0xD2,
                  &shifted);
    add_vqa_split(m.eval_count, 3 * kSplitBase, "eval", d.split_eval, 0xD3, nullptr);

    for (int i = 0; i < m.probe_count; ++i) {
        d.split_probe.push_back(int(d.samples.size()));
        auto s = make_caption_sample(m, 4 * kSplitBase + i, "probe");
        auto scene = scene_for_sample(m, s);
        d.probe_masks.push_back(probe_labels(scene, m.patch_size).mask);
        d.samples.push_back(std::move(s));
    }
    return d;
}

void write_dataset(const Dataset& d, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "probe");

    {
        std::ofstream out(fs::path(dir) / "manifest.json");
        out << manifest_to_json(d.manifest).dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "samples.jsonl");
        for (const auto& s : d.samples) {
            json j{{"id", s.id},
                   {"image", "images/" + pad_id(s.id) + ".ppm"},
                   {"q", s.question},
                   {"y_c", s.chosen},
                   {"y_r", s.rejected},
                   {"domain", domain_name(s.domain)},
                   {"shifted", s.shifted},
                   {"template_id", s.template_id},
                   {"target_cell", s.target_cell}};
            out << j.dump() << "\n";
        }
    }
    for (const auto& s : d.samples)
        write_ppm(s.image, (fs::path(dir) / "images" / (pad_id(s.id) + ".ppm")).string());
    for (size_t i = 0; i < d.split_probe.size(); ++i) {
        const auto& s = d.samples[size_t(d.split_probe[i])];
        std::ofstream out(fs::path(dir) / "probe" / (pad_id(s.id) + ".mask"),
                          std::ios::binary);
        out.write(reinterpret_cast<const char*>(d.probe_masks[i].data()),
                  std::streamsize(d.probe_masks[i].size()));
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("dataset: missing manifest.json in " + dir);
    Dataset d;
    d.manifest = manifest_from_json(json::parse(mf));

    const auto& tok = tokenizer();
    std::ifstream sf(fs::path(dir) / "samples.jsonl");
    if (!sf) throw std::runtime_error("dataset: missing samples.jsonl in " + dir);
    std::string line;
    while (std::getline(sf, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Sample s;
        s.id = j.at("id").get<int>();
        s.question = j.at("q").get<std::string>();
        s.chosen = j.at("y_c").get<std::string>();
        s.rejected = j.at("y_r").get<std::string>();
        s.domain = domain_from_name(j.at("domain").get<std::string>());
        s.shifted = j.at("shifted").get<bool>();
        s.template_id = j.at("template_id").get<int>();
        s.target_cell = j.at("target_cell").get<int>();
        s.q_tokens = tok.tokenize(s.question);
        s.chosen_tokens = tok.tokenize(s.chosen);
        s.rejected_tokens = tok.tokenize(s.rejected);
        s.image = read_ppm((fs::path(dir) / j.at("image").get<std::string>()).string());
        d.samples.push_back(std::move(s));
    }

    const auto& m = d.manifest;
    int pos = 0;
    auto take = [&](int count, std::vector<int>& idx, const char* split) {
        for (int i = 0; i < count; ++i, ++pos) {
            d.samples[size_t(pos)].split = split;
            idx.push_back(pos);
        }
    };
    take(m.align_count, d.split_align, "align");
    take(m.pretrain_count, d.split_pretrain, "pretrain");
    take(m.posttrain_count, d.split_posttrain, "posttrain");
    take(m.eval_count, d.split_eval, "eval");
    take(m.probe_count, d.split_probe, "probe");
    if (pos != int(d.samples.size()))
        throw std::runtime_error("dataset: sample count does not match manifest");

    const int patch_grid = m.image_size / m.patch_size;
    for (int idx : d.split_probe) {
        const auto& s = d.samples[size_t(idx)];
        std::ifstream in(fs::path(dir) / "probe" / (pad_id(s.id) + ".mask"), std::ios::binary);
        if (!in) throw std::runtime_error("dataset: missing probe mask for id " + std::to_string(s.id));
        std::vector<uint8_t> mask(size_t(patch_grid) * patch_grid);
        in.read(reinterpret_cast<char*>(mask.data()), std::streamsize(mask.size()));
        if (in.gcount() != std::streamsize(mask.size()))
            throw std::runtime_error("dataset: truncated probe mask for id " + std::to_string(s.id));
        d.probe_masks.push_back(std::move(mask));
    }
    return d;
}

} // namespace minimm
