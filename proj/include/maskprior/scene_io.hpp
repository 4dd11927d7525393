#pragma once

#include "maskprior/core.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace maskprior {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kSceneFormat = "maskprior-scene";
inline constexpr int kSceneFormatVersion = 1;

// Pinhole camera. Extrinsics map world points into the camera frame: x_cam = R * x_world + t.
struct CameraParams {
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    Eigen::Matrix<double, 3, 4> extrinsics = Eigen::Matrix<double, 3, 4>::Identity();

    Eigen::Matrix3d rotation() const { return extrinsics.leftCols<3>(); }
    Eigen::Vector3d translation() const { return extrinsics.col(3); }
    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
        return rotation() * world + translation();
    }

    // Throws validation error when the intrinsics are not upper-triangular with positive
    // focal lengths or the rotation block is not orthonormal within 1e-5.
    void validate() const;
};

struct EntityMask {
    int entity_id = 0;
    BinaryMap pixels;
    std::int64_t pixel_count = 0;
};

struct ViewRecord {
    Image image;
    CameraParams camera;
    DepthMap depth;
    std::vector<EntityMask> entity_masks;
    std::optional<Raster<float>> point_map;

    const EntityMask* find_mask(int entity_id) const;
};

struct SceneBundle {
    std::vector<ViewRecord> views;
    int height = 0;
    int width = 0;
    int patch_size = 1;
    int feature_dim = 0;
    std::string world_frame_note = "first-camera frame";
    // Non-fatal findings during load, e.g. overlapping entity masks that were resolved.
    std::vector<std::string> warnings;

    int view_count() const noexcept { return static_cast<int>(views.size()); }
    int grid_height() const noexcept { return height / patch_size; }
    int grid_width() const noexcept { return width / patch_size; }
};

// Dense attention rows of query-view tokens attending the reference view, head-averaged and
// post-softmax. Layout [S][L][h][w], row-major.
struct AttentionStack {
    int query_view = 0;
    int reference_view = 0;
    std::vector<int> token_ids;  // flat query-grid indices, one per row
    int layers = 0;
    int grid_height = 0;
    int grid_width = 0;
    int feature_dim = 0;
    std::vector<float> values;

    std::size_t token_count() const noexcept { return token_ids.size(); }
    std::size_t cells() const noexcept { return static_cast<std::size_t>(grid_height) * grid_width; }
    float at(std::size_t s, int layer, int row, int col) const {
        return values[((s * layers + layer) * grid_height + row) * grid_width + col];
    }
    std::span<const float> layer_row(std::size_t s, int layer) const {
        return {values.data() + (s * layers + layer) * cells(), cells()};
    }
    void validate() const;
};

// Manifest entry for one attention payload. mask_id absent means a whole-grid dump.
struct AttentionEntry {
    int query_view = 0;
    int reference_view = 0;
    std::optional<int> mask_id;
    std::string file;
    std::string dtype = "float32";
    std::vector<int> shape;  // S, L, h, w
    std::vector<int> token_ids;
};

// --- raw tensor payloads -------------------------------------------------------------

std::size_t dtype_size(const std::string& dtype);
std::vector<float> read_float_tensor(const fs::path& file, const std::string& dtype,
                                     std::span<const int> shape, const std::string& what);
std::vector<double> read_double_tensor(const fs::path& file, const std::string& dtype,
                                       std::span<const int> shape, const std::string& what);
void write_binary(const fs::path& file, const void* data, std::size_t bytes);

// --- images --------------------------------------------------------------------------

Image read_png_rgb(const fs::path& file);
Raster<std::uint8_t> read_png_gray(const fs::path& file);
void write_png(const fs::path& file, const Raster<std::uint8_t>& raster);
std::string encode_png(const Raster<std::uint8_t>& raster);

// Nonzero pixels become 1.
BinaryMap read_mask_png(const fs::path& file);
// Writes 0/1 as 0/255.
void write_mask_png(const fs::path& file, const BinaryMap& mask);

// --- scenes --------------------------------------------------------------------------

SceneBundle load_scene(const fs::path& scene_dir);

// Resolves overlaps smaller-mask-wins and recomputes pixel counts. Returns the number of
// overlapping pixels that were reassigned.
std::size_t make_masks_disjoint(std::vector<EntityMask>& masks);

// Streams a scene directory: views and attention payloads are written as they arrive,
// the manifest when finish() is called.
class SceneWriter {
public:
    SceneWriter(fs::path scene_dir, int height, int width, int patch_size, int feature_dim);

    void add_view(const ViewRecord& view);
    void add_attention(const AttentionStack& stack, std::optional<int> mask_id);
    void finish();

private:
    fs::path dir_;
    int height_;
    int width_;
    int patch_size_;
    int feature_dim_;
    std::vector<std::string> view_entries_;
    std::vector<double> cameras_;
    std::vector<AttentionEntry> attention_;
};

// Index over a scene's attention payloads with a shared payload cache. Thread-safe.
class AttentionStore {
public:
    explicit AttentionStore(fs::path scene_dir);

    const fs::path& scene_dir() const noexcept { return dir_; }
    const std::vector<AttentionEntry>& entries() const noexcept { return entries_; }
    bool has_pair(int query_view, int reference_view) const;

    // The payload dumped for (i, j, mask), or for whole-grid dumps (mask_id empty) all K rows.
    AttentionStack load(int query_view, int reference_view, std::optional<int> mask_id) const;

    // Rows for the requested query tokens, gathered from a whole-grid dump when present,
    // otherwise from whichever per-mask dumps contain them. Duplicated ids are allowed.
    AttentionStack rows(int query_view, int reference_view, std::span<const int> token_ids) const;

private:
    std::shared_ptr<const std::vector<float>> payload(std::size_t entry) const;

    fs::path dir_;
    std::vector<AttentionEntry> entries_;
    int feature_dim_ = 0;
    mutable std::mutex mutex_;
    mutable std::map<std::size_t, std::shared_ptr<const std::vector<float>>> cache_;
};

// Loads the per-mask dump for (i, j, mask_id); when only a whole-grid dump exists the rows
// for query_tokens are sliced out of it.
AttentionStack load_attention(const AttentionStore& store, int query_view, int reference_view,
                              int mask_id, std::span<const int> query_tokens = {});

}  // namespace maskprior
