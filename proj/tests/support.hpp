#pragma once

#include "maskprior/scene_io.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <string>
#include <unistd.h>

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("maskprior_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

// Relative path -> contents for every regular file below root.
inline std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = read_file(e.path());
    return out;
}

// Minimal camera looking down +z from the origin.
inline maskprior::CameraParams simple_camera(double f, double cx, double cy) {
    maskprior::CameraParams c;
    c.intrinsics << f, 0, cx, 0, f, cy, 0, 0, 1;
    return c;
}

}  // namespace testing

namespace testing {

// Two 28x28 views (2x2 token grid), constant depth 2, identical cameras. View 0 holds entity 1
// (left column of patches) and entity 2 (top-right patch); view 1 holds the same regions as
// entities 5 and 6. Attention maps every token onto the same cell of the other view.
struct TinySceneOptions {
    bool whole_grid = true;
    bool per_mask = false;
    bool attention = true;
    int layers = 2;
    // Replaces the generated attention when non-empty.
    std::vector<std::pair<maskprior::AttentionStack, std::optional<int>>> custom;
};

inline maskprior::AttentionStack identity_attention(int i, int j, const std::vector<int>& tokens, int layers) {
    maskprior::AttentionStack s;
    s.query_view = i;
    s.reference_view = j;
    s.token_ids = tokens;
    s.layers = layers;
    s.grid_height = 2;
    s.grid_width = 2;
    s.values.assign(tokens.size() * layers * 4, 0.0f);
    for (std::size_t k = 0; k < tokens.size(); ++k)
        for (int l = 0; l < layers; ++l)
            s.values[(k * layers + l) * 4 + static_cast<std::size_t>(tokens[k])] = 1.0f;
    return s;
}

inline void write_tiny_scene(const fs::path& dir, const TinySceneOptions& opt = {}) {
    using namespace maskprior;
    SceneWriter w(dir, 28, 28, 14, 8);
    const int ids[2][2] = {{1, 2}, {5, 6}};
    for (int v = 0; v < 2; ++v) {
        ViewRecord view;
        view.image = Image(28, 28, 3, static_cast<std::uint8_t>(40 + v));
        view.depth = DepthMap(28, 28, 1, 2.0f);
        view.camera = simple_camera(20.0, 14.0, 14.0);
        EntityMask a{ids[v][0], BinaryMap(28, 28), 0}, b{ids[v][1], BinaryMap(28, 28), 0};
        for (int r = 0; r < 28; ++r)
            for (int c = 0; c < 28; ++c) {
                if (c < 14)
                    a.pixels(r, c) = 1;
                else if (r < 14)
                    b.pixels(r, c) = 1;
            }
        a.pixel_count = 28 * 14;
        b.pixel_count = 14 * 14;
        view.entity_masks = {a, b};
        w.add_view(view);
    }
    for (const auto& [stack, mask] : opt.custom)
        w.add_attention(stack, mask);
    if (opt.attention && opt.custom.empty())
        for (int i = 0; i < 2; ++i) {
            const int j = 1 - i;
            if (opt.whole_grid)
                w.add_attention(identity_attention(i, j, {0, 1, 2, 3}, opt.layers), std::nullopt);
            if (opt.per_mask) {
                w.add_attention(identity_attention(i, j, {0, 2}, opt.layers), ids[i][0]);
                w.add_attention(identity_attention(i, j, {1}, opt.layers), ids[i][1]);
            }
        }
    w.finish();
}

}  // namespace testing
