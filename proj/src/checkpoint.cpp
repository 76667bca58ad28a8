#include "minimm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace minimm {

namespace {

constexpr const char* kFormat = "checkpoint-v1";
constexpr const char* kBundleFormat = "pivot-bundle-v1";

json enc_to_json(const VisionEncoderConfig& c) {
    return json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
                {"embed_dim", c.embed_dim},   {"depth", c.depth},
                {"heads", c.heads}};
}

VisionEncoderConfig enc_from_json(const json& j) {
    VisionEncoderConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.depth = j.at("depth").get<int>();
    c.heads = j.at("heads").get<int>();
    return c;
}

json lm_to_json(const LmConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},
                {"depth", c.depth},           {"heads", c.heads},
                {"max_seq_len", c.max_seq_len}};
}

LmConfig lm_from_json(const json& j) {
    LmConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.depth = j.at("depth").get<int>();
    c.heads = j.at("heads").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    return c;
}

json spec_to_json(const ModelSpec& s) {
    json j{{"encoder", enc_to_json(s.enc)},
           {"projector_dims", s.projector_dims},
           {"projector_frozen", s.projector_frozen},
           {"lm", lm_to_json(s.lm)},
           {"trainable", {{"encoder", s.flags.encoder},
                          {"projector", s.flags.projector},
                          {"lm", s.flags.lm}}}};
    if (s.enc2) j["encoder2"] = enc_to_json(*s.enc2);
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.enc = enc_from_json(j.at("encoder"));
    if (j.contains("encoder2")) s.enc2 = enc_from_json(j.at("encoder2"));
    s.projector_dims = j.at("projector_dims").get<std::vector<int>>();
    s.projector_frozen = j.at("projector_frozen").get<std::vector<bool>>();
    s.lm = lm_from_json(j.at("lm"));
    s.flags.encoder = j.at("trainable").at("encoder").get<bool>();
    s.flags.projector = j.at("trainable").at("projector").get<bool>();
    s.flags.lm = j.at("trainable").at("lm").get<bool>();
    return s;
}

json provenance_to_json(const std::vector<StageRecord>& prov) {
    json arr = json::array();
    for (const auto& r : prov)
        arr.push_back(json{{"stage", r.stage},
                           {"method", r.method},
                           {"seed", r.seed},
                           {"steps", r.steps},
                           {"config_hash", r.config_hash}});
    return arr;
}

std::vector<StageRecord> provenance_from_json(const json& arr) {
    std::vector<StageRecord> out;
    for (const auto& j : arr) {
        StageRecord r;
        r.stage = j.at("stage").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.seed = j.at("seed").get<uint64_t>();
        r.steps = j.at("steps").get<int>();
        r.config_hash = j.at("config_hash").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

std::string hex64(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
    return buf;
}

struct NamedArray {
    std::string name;
    Shape shape;
    const std::vector<double>* values;
};

void write_arrays(const std::string& dir, const std::vector<NamedArray>& arrays, json& manifest) {
    json arr_meta = json::array();
    size_t offset = 0;
    {
        std::ofstream out(fs::path(dir) / "params.bin", std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint: cannot write params.bin in " + dir);
        for (const auto& a : arrays) {
            arr_meta.push_back(json{{"name", a.name},
                                    {"shape", a.shape},
                                    {"offset", offset},
                                    {"count", a.values->size()}});
            out.write(reinterpret_cast<const char*>(a.values->data()),
                      std::streamsize(a.values->size() * sizeof(double)));
            offset += a.values->size();
        }
        if (!out) throw std::runtime_error("checkpoint: write failed in " + dir);
    }
    // checksum of the finished file
    std::ifstream in(fs::path(dir) / "params.bin", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    manifest["arrays"] = std::move(arr_meta);
    manifest["params_file"] = "params.bin";
    manifest["checksum_fnv1a64"] = hex64(fnv1a64(bytes.data(), bytes.size()));
    manifest["total_count"] = offset;
}

std::map<std::string, std::pair<Shape, std::vector<double>>> read_arrays(const std::string& dir,
                                                                         const json& manifest) {
    std::ifstream in(fs::path(dir) / "params.bin", std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: missing params.bin in " + dir);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const uint64_t expected_count = manifest.at("total_count").get<uint64_t>();
    if (bytes.size() != expected_count * sizeof(double))
        throw std::runtime_error("checkpoint: params.bin size mismatch (truncated or corrupt)");
    const std::string sum = hex64(fnv1a64(bytes.data(), bytes.size()));
    if (sum != manifest.at("checksum_fnv1a64").get<std::string>())
        throw std::runtime_error("checkpoint: params.bin checksum mismatch");

    std::map<std::string, std::pair<Shape, std::vector<double>>> out;
    for (const auto& a : manifest.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        const Shape shape = a.at("shape").get<Shape>();
        const size_t offset = a.at("offset").get<size_t>();
        const size_t count = a.at("count").get<size_t>();
        if ((offset + count) * sizeof(double) > bytes.size())
            throw std::runtime_error("checkpoint: array '" + name + "' exceeds file bounds");
        std::vector<double> v(count);
        std::memcpy(v.data(), bytes.data() + offset * sizeof(double), count * sizeof(double));
        if (!out.emplace(name, std::make_pair(shape, std::move(v))).second)
            throw std::runtime_error("checkpoint: duplicate array '" + name + "'");
    }
    return out;
}

} // namespace

ModelSpec spec_of(const MultimodalModel& m) {
    ModelSpec s;
    s.enc = m.encoder.config();
    if (m.encoder2) s.enc2 = m.encoder2->config();
    s.projector_dims = m.projector.dims;
    s.projector_frozen = m.projector.frozen;
    s.lm = m.lm.config();
    s.flags = m.flags;
    return s;
}

MultimodalModel model_from_spec(const ModelSpec& spec, uint64_t init_seed) {
    MultimodalModel m(spec.enc, ProjectorConfig{}, spec.lm, init_seed, spec.enc2);
    m.projector = Projector(spec.projector_dims, mix_seed(init_seed, 0xF0));
    m.projector.frozen = spec.projector_frozen;
    m.flags = spec.flags;
    return m;
}

void save_checkpoint(const std::string& dir, MultimodalModel& model,
                     const std::vector<StageRecord>& provenance, uint64_t seed,
                     int64_t step, Adam* optimizer) {
    fs::create_directories(dir);
    std::vector<NamedArray> arrays;
    std::map<std::string, int> seen;
    model.visit_params([&](const std::string& name, Tensor& t) {
        if (seen[name]++)
            throw std::logic_error("checkpoint: duplicate parameter name " + name);
        arrays.push_back({name, t.shape(), &t.data()});
    });
    if (optimizer) {
        for (size_t i = 0; i < optimizer->params().size(); ++i) {
            const Shape shp{int(optimizer->moment1(i).size())};
            arrays.push_back({"opt.m." + std::to_string(i), shp, &optimizer->moment1(i)});
            arrays.push_back({"opt.v." + std::to_string(i), shp, &optimizer->moment2(i)});
        }
    }

    json manifest{{"format", kFormat},
                  {"model", spec_to_json(spec_of(model))},
                  {"seed", seed},
                  {"step", step},
                  {"stage_provenance", provenance_to_json(provenance)},
                  {"has_optimizer", optimizer != nullptr},
                  {"optimizer_steps", optimizer ? optimizer->steps_taken() : 0}};
    write_arrays(dir, arrays, manifest);
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("checkpoint: missing manifest.json in " + dir);
    json manifest = json::parse(mf);
    if (manifest.at("format").get<std::string>() != kFormat)
        throw std::runtime_error("checkpoint: unsupported format version");

    LoadedCheckpoint ck;
    ck.seed = manifest.at("seed").get<uint64_t>();
    ck.step = manifest.at("step").get<int64_t>();
    ck.provenance = provenance_from_json(manifest.at("stage_provenance"));
    ck.has_optimizer = manifest.at("has_optimizer").get<bool>();
    ck.optimizer_steps = manifest.at("optimizer_steps").get<int64_t>();

    auto arrays = read_arrays(dir, manifest);
    ck.model = model_from_spec(spec_from_json(manifest.at("model")));
    ck.model.visit_params([&](const std::string& name, Tensor& t) {
        auto it = arrays.find(name);
        if (it == arrays.end())
            throw std::runtime_error("checkpoint: missing array '" + name + "'");
        if (it->second.first != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        t.data() = std::move(it->second.second);
        arrays.erase(it);
    });
    std::map<int, std::vector<double>> om, ov;
    for (auto& [name, sv] : arrays) {
        if (name.rfind("opt.m.", 0) == 0) om[std::stoi(name.substr(6))] = std::move(sv.second);
        else if (name.rfind("opt.v.", 0) == 0) ov[std::stoi(name.substr(6))] = std::move(sv.second);
        else throw std::runtime_error("checkpoint: unexpected array '" + name + "'");
    }
    if (om.size() != ov.size())
        throw std::runtime_error("checkpoint: optimizer arrays incomplete");
    for (auto& [i, v] : om) ck.opt_m.push_back(std::move(v));
    for (auto& [i, v] : ov) ck.opt_v.push_back(std::move(v));
    return ck;
}

void restore_optimizer(Adam& opt, const LoadedCheckpoint& ck) {
    if (!ck.has_optimizer) throw std::runtime_error("checkpoint: no optimizer state saved");
    if (opt.params().size() != ck.opt_m.size())
        throw std::runtime_error("checkpoint: optimizer parameter count mismatch");
    for (size_t i = 0; i < ck.opt_m.size(); ++i) {
        if (opt.moment1(i).size() != ck.opt_m[i].size())
            throw std::runtime_error("checkpoint: optimizer moment shape mismatch");
        opt.moment1(i) = ck.opt_m[i];
        opt.moment2(i) = ck.opt_v[i];
    }
    opt.set_steps_taken(ck.optimizer_steps);
}

PivotBundle pivot_extract(MultimodalModel& trained, int reuse,
                          const std::vector<StageRecord>& provenance) {
    if (reuse < 0 || reuse > 2 || reuse > int(trained.projector.layers.size()))
        throw std::invalid_argument("pivot_extract: reuse must be 0..2 and within the projector depth");
    PivotBundle b;
    b.enc_cfg = trained.encoder.config();
    if (trained.encoder2) b.enc2_cfg = trained.encoder2->config();
    trained.encoder.visit_params("enc.", [&](const std::string& name, Tensor& t) {
        b.encoder_params.emplace_back(name, t.data());
    });
    if (trained.encoder2)
        trained.encoder2->visit_params("enc2.", [&](const std::string& name, Tensor& t) {
            b.encoder_params.emplace_back(name, t.data());
        });
    b.reuse = reuse;
    b.reused_dims.push_back(trained.projector.dims[0]);
    for (int i = 0; i < reuse; ++i) {
        b.reused_dims.push_back(trained.projector.dims[size_t(i) + 1]);
        b.projector_params.emplace_back("proj.l" + std::to_string(i) + ".w",
                                        trained.projector.layers[size_t(i)].w.data());
        b.projector_params.emplace_back("proj.l" + std::to_string(i) + ".b",
                                        trained.projector.layers[size_t(i)].b.data());
    }
    b.provenance = provenance;
    return b;
}

void save_pivot_bundle(const std::string& dir, const PivotBundle& b) {
    fs::create_directories(dir);
    std::vector<NamedArray> arrays;
    // bundle arrays are stored flat; consumers assign by name into shaped tensors
    json manifest{{"format", kBundleFormat},
                  {"encoder", enc_to_json(b.enc_cfg)},
                  {"reuse", b.reuse},
                  {"reused_dims", b.reused_dims},
                  {"stage_provenance", provenance_to_json(b.provenance)}};
    if (b.enc2_cfg) manifest["encoder2"] = enc_to_json(*b.enc2_cfg);
    for (const auto& [name, vals] : b.encoder_params)
        arrays.push_back({name, Shape{int(vals.size())}, &vals});
    for (const auto& [name, vals] : b.projector_params)
        arrays.push_back({name, Shape{int(vals.size())}, &vals});
    write_arrays(dir, arrays, manifest);
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
}

PivotBundle load_pivot_bundle(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("pivot bundle: missing manifest.json in " + dir);
    json manifest = json::parse(mf);
    if (manifest.at("format").get<std::string>() != kBundleFormat)
        throw std::runtime_error("pivot bundle: unsupported format");
    PivotBundle b;
    b.enc_cfg = enc_from_json(manifest.at("encoder"));
    if (manifest.contains("encoder2")) b.enc2_cfg = enc_from_json(manifest.at("encoder2"));
    b.reuse = manifest.at("reuse").get<int>();
    b.reused_dims = manifest.at("reused_dims").get<std::vector<int>>();
    b.provenance = provenance_from_json(manifest.at("stage_provenance"));
    auto arrays = read_arrays(dir, manifest);
    for (auto& [name, sv] : arrays) {
        if (name.rfind("enc", 0) == 0) b.encoder_params.emplace_back(name, std::move(sv.second));
        else if (name.rfind("proj.", 0) == 0)
            b.projector_params.emplace_back(name, std::move(sv.second));
        else throw std::runtime_error("pivot bundle: unexpected array '" + name + "'");
    }
    return b;
}

uint64_t hash_params(MultimodalModel& m) { return m.params_hash(); }

} // namespace minimm
