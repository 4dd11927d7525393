#pragma once

#include "maskprior/core.hpp"
#include "maskprior/scene_io.hpp"
#include "maskprior/warmup.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace maskprior {

// Axis-aligned box resting on the ground plane (y up).
struct SynthBox {
    double center_x = 0.0;
    double center_z = 0.0;
    double size_x = 0.2;
    double size_y = 0.2;
    double size_z = 0.2;
    bool transient = false;
    int view = -1;  // the one view a transient appears in; -1 draws it from the seed
    bool textureless = false;  // rows are uniform, so matching cannot see it
};

struct SynthCameraRing {
    double radius = 1.4;
    double height = 1.1;
    double arc_degrees = 90.0;
    double target_y = 0.1;
    double fov_degrees = 55.0;
};

struct SynthSpec {
    std::uint64_t seed = 0;
    int views = 4;
    int height = 224;
    int width = 224;
    int patch_size = 14;
    int layers = 2;
    int feature_dim = 64;
    double noise = 0.0;
    double softmax_beta = 10.0;
    SynthCameraRing camera;

    // Random layout, used when boxes is empty.
    int static_count = 5;
    int transient_count = 1;
    int textureless_count = 0;  // taken from the static boxes
    double area_radius = 0.0;  // 0 scales with the entity count
    std::array<double, 2> footprint_range{0.18, 0.30};
    std::array<double, 2> height_range{0.15, 0.35};
    int min_tokens = 2;
    double min_visible_fraction = 0.5;
    int max_layout_attempts = 500;

    std::vector<SynthBox> boxes;

    void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

struct EntityTruth {
    int object = 0;  // index into SynthTruth::boxes
    bool is_static = true;
    bool textureless = false;
};

struct SynthTruth {
    std::vector<SynthBox> boxes;                        // resolved layout
    std::vector<std::map<int, EntityTruth>> entities;   // per view, keyed by entity id
    std::vector<BinaryMap> gt_transient;                // per view
};

// Writes a scene directory plus labels.json and gt/####.png transient masks.
SynthTruth generate(const SynthSpec& spec, const fs::path& out_dir);

// Reads labels.json back.
SynthTruth load_truth(const fs::path& scene_dir);

struct WarmupFixtureSpec {
    std::uint64_t seed = 0;
    int height = 64;
    int width = 64;
    int frames = 200;
    // Distractor block; zero height or width disables it.
    int distractor_row = 16;
    int distractor_col = 20;
    int distractor_height = 24;
    int distractor_width = 20;
    std::array<double, 2> scene_range{0.1, 0.3};
    std::array<double, 2> distractor_range{0.6, 0.7};
    double background_noise = 0.02;  // U(0, noise) added to the render outside the block
};

struct WarmupFixture {
    FloatImage ground_truth;
    std::vector<FloatImage> renders;
    BinaryMap distractor;
};

// The ground truth is a fixed dark scene; each render adds a freshly drawn bright residual
// inside the distractor block and faint noise elsewhere. Values are quantised to 8 bits.
WarmupFixture generate_warmup_frames(const WarmupFixtureSpec& spec);

}  // namespace maskprior
