#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "minimm/scene.hpp"

namespace minimm {

enum class Domain : int { general = 0, vision_centric = 1, ocr_like = 2, knowledge_like = 3 };
const std::string& domain_name(Domain d);
Domain domain_from_name(const std::string& name);

struct QA {
    std::string question;
    std::string answer;
    int target_cell = -1; // row*grid+col of the referenced object for localized questions
};

// A question family over scene graphs. The answer function is total over
// applicable scenes; knowledge templates ignore the image entirely.
struct TaskTemplate {
    int id = 0;
    Domain domain = Domain::general;
    const char* name = "";
    bool localized = false;
    std::function<bool(const SceneGraph&)> applicable;
    std::function<QA(const SceneGraph&, int grid, Rng&)> instantiate;
};

const std::vector<TaskTemplate>& task_templates();
const TaskTemplate& template_by_id(int id);
std::vector<int> templates_for_domain(Domain d);

// Canonical caption: objects in reading order, "a red square and a blue
// circle"; "nothing" for an empty scene.
std::string caption_for(const SceneGraph& g);

enum class CorruptMode { wrong_value, wrong_attribute, truncation, verbose_hedge };
CorruptMode corrupt_mode_from_name(const std::string& name);
const std::string& corrupt_mode_name(CorruptMode m);

// Builds a rejected response from a chosen one. Deterministic per seed and
// always different from the input. attribute_pool supplies scene-derived
// same-type alternatives for wrong_attribute (falls back to wrong_value when
// empty or when the mode cannot apply).
std::vector<int> corrupt_response(const std::vector<int>& chosen, CorruptMode mode,
                                  uint64_t seed, const std::vector<int>& attribute_pool = {});

struct DatasetManifest {
    uint64_t seed = 1;
    int align_count = 512;
    int pretrain_count = 2048;
    int posttrain_count = 2048;
    int eval_count = 512;
    int probe_count = 256;
    double shift_ratio = 0.0; // posttrain split only
    std::array<double, 4> domain_mix = {0.25, 0.25, 0.25, 0.25};
    std::string corrupt_mode = "wrong_value";
    int image_size = 64;
    int patch_size = 8;
    int grid = 4;
    int max_objects = 3; // per-scene cap for the VQA splits (probe keeps up to 5)
    int shift_token_threshold = 24; // responses longer than this count as shifted
};

struct Sample {
    int id = 0;
    std::string split;
    Domain domain = Domain::general;
    int template_id = 0;
    bool shifted = false;
    int target_cell = -1;
    std::string question, chosen, rejected;
    std::vector<int> q_tokens, chosen_tokens, rejected_tokens;
    Image image;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Sample> samples; // ordered by id, all splits
    std::vector<int> split_align, split_pretrain, split_posttrain, split_eval, split_probe;
    std::vector<std::vector<uint8_t>> probe_masks; // parallel to split_probe

    const std::vector<int>& split(const std::string& name) const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

Dataset build_dataset(const DatasetManifest& m);
void write_dataset(const Dataset& d, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Regenerates the scene behind a sample id; dataset generation derives every
// scene from (manifest seed, id), so graphs are recoverable without storage.
RenderedScene scene_for_sample(const DatasetManifest& m, const Sample& s);

uint64_t scene_seed_for(const DatasetManifest& m, int sample_id);

} // namespace minimm
