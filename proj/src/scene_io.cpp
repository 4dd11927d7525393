#include "maskprior/scene_io.hpp"

#include <json.hpp>
#include <png.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace maskprior {

using json = nlohmann::json;

namespace {

std::string view_tag(int index) {
    std::ostringstream os;
    os.width(4);
    os.fill('0');
    os << index;
    return os.str();
}

std::size_t shape_product(std::span<const int> shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0)
            throw Error(ErrorKind::validation, "negative dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(std::span<const int> shape) {
    std::string out = "[";
    for (std::size_t k = 0; k < shape.size(); ++k) {
        if (k)
            out += ",";
        out += std::to_string(shape[k]);
    }
    return out + "]";
}

std::vector<char> read_payload(const fs::path& file, const std::string& dtype,
                               std::span<const int> shape, const std::string& what) {
    if (!fs::exists(file))
        throw Error(ErrorKind::io, "missing file for " + what + ": " + file.string());
    const std::size_t expected = shape_product(shape) * dtype_size(dtype);
    const auto actual = fs::file_size(file);
    if (actual != expected)
        throw Error(ErrorKind::validation,
                    what + ": payload " + file.string() + " has " + std::to_string(actual) +
                        " bytes, manifest shape " + shape_string(shape) + " x " + dtype +
                        " needs " + std::to_string(expected));
    std::vector<char> bytes(expected);
    std::ifstream in(file, std::ios::binary);
    if (!in.read(bytes.data(), static_cast<std::streamsize>(expected)))
        throw Error(ErrorKind::io, "failed to read " + file.string());
    return bytes;
}

template <typename Out, typename In>
std::vector<Out> convert(const std::vector<char>& bytes) {
    std::vector<Out> out(bytes.size() / sizeof(In));
    for (std::size_t k = 0; k < out.size(); ++k) {
        In v;
        std::memcpy(&v, bytes.data() + k * sizeof(In), sizeof(In));
        out[k] = static_cast<Out>(v);
    }
    return out;
}

template <typename Out>
std::vector<Out> decode(const std::vector<char>& bytes, const std::string& dtype) {
    if (dtype == "float32")
        return convert<Out, float>(bytes);
    if (dtype == "float64")
        return convert<Out, double>(bytes);
    if (dtype == "uint8")
        return convert<Out, std::uint8_t>(bytes);
    if (dtype == "int32")
        return convert<Out, std::int32_t>(bytes);
    throw Error(ErrorKind::validation, "unsupported dtype " + dtype);
}

Raster<std::uint8_t> read_png(const fs::path& file, std::uint32_t format, int channels) {
    if (!fs::exists(file))
        throw Error(ErrorKind::io, "missing file: " + file.string());
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, file.string().c_str()))
        throw Error(ErrorKind::validation, "unreadable png " + file.string() + ": " + image.message);
    image.format = format;
    Raster<std::uint8_t> raster(static_cast<int>(image.height), static_cast<int>(image.width),
                                channels);
    if (!png_image_finish_read(&image, nullptr, raster.data().data(), 0, nullptr)) {
        png_image_free(&image);
        throw Error(ErrorKind::validation, "unreadable png " + file.string() + ": " + image.message);
    }
    return raster;
}

png_image png_header(const Raster<std::uint8_t>& raster) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width());
    image.height = static_cast<png_uint_32>(raster.height());
    switch (raster.channels()) {
    case 1: image.format = PNG_FORMAT_GRAY; break;
    case 3: image.format = PNG_FORMAT_RGB; break;
    case 4: image.format = PNG_FORMAT_RGBA; break;
    default: throw Error(ErrorKind::argument, "png supports 1, 3 or 4 channels");
    }
    return image;
}

json tensor_entry(const std::string& file, const std::string& dtype, std::vector<int> shape) {
    return json{{"file", file}, {"dtype", dtype}, {"shape", shape}};
}

json read_manifest(const fs::path& dir) {
    const fs::path path = dir / kManifestName;
    if (!fs::exists(path))
        throw Error(ErrorKind::io, "manifest missing: " + path.string());
    std::ifstream in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::validation, "manifest is not valid JSON: " + std::string(e.what()));
    }
}

std::vector<AttentionEntry> parse_attention_entries(const json& manifest, int view_count,
                                                    int grid_h, int grid_w) {
    std::vector<AttentionEntry> entries;
    if (!manifest.contains("attention"))
        return entries;
    const int cells = grid_h * grid_w;
    for (const auto& item : manifest.at("attention")) {
        AttentionEntry e;
        e.query_view = item.at("query_view").get<int>();
        e.reference_view = item.at("reference_view").get<int>();
        if (item.contains("mask_id") && !item.at("mask_id").is_null())
            e.mask_id = item.at("mask_id").get<int>();
        e.file = item.at("file").get<std::string>();
        e.dtype = item.value("dtype", std::string("float32"));
        e.shape = item.at("shape").get<std::vector<int>>();
        e.token_ids = item.at("token_ids").get<std::vector<int>>();
        const std::string what = "attention " + e.file;
        if (e.query_view < 0 || e.query_view >= view_count || e.reference_view < 0 ||
            e.reference_view >= view_count)
            throw Error(ErrorKind::validation, what + ": view index out of range");
        if (e.query_view == e.reference_view)
            throw Error(ErrorKind::validation, what + ": self-pair not permitted");
        if (e.shape.size() != 4)
            throw Error(ErrorKind::validation, what + ": shape must be [S, L, h, w]");
        if (e.shape[2] != grid_h || e.shape[3] != grid_w)
            throw Error(ErrorKind::validation, what + ": token grid does not match H/patch, W/patch");
        if (e.shape[0] != static_cast<int>(e.token_ids.size()))
            throw Error(ErrorKind::validation, what + ": S differs from token_ids length");
        if (e.shape[1] < 1)
            throw Error(ErrorKind::validation, what + ": no layers");
        for (int t : e.token_ids)
            if (t < 0 || t >= cells)
                throw Error(ErrorKind::validation, what + ": token id out of grid");
        dtype_size(e.dtype);
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace

// --- tensors ---------------------------------------------------------------------------

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "float32" || dtype == "int32")
        return 4;
    if (dtype == "float64")
        return 8;
    if (dtype == "uint8")
        return 1;
    throw Error(ErrorKind::validation, "unsupported dtype " + dtype);
}

std::vector<float> read_float_tensor(const fs::path& file, const std::string& dtype,
                                     std::span<const int> shape, const std::string& what) {
    return decode<float>(read_payload(file, dtype, shape, what), dtype);
}

std::vector<double> read_double_tensor(const fs::path& file, const std::string& dtype,
                                       std::span<const int> shape, const std::string& what) {
    return decode<double>(read_payload(file, dtype, shape, what), dtype);
}

void write_binary(const fs::path& file, const void* data, std::size_t bytes) {
    if (file.has_parent_path())
        fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::io, "cannot write " + file.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out)
        throw Error(ErrorKind::io, "short write to " + file.string());
}

// --- images ----------------------------------------------------------------------------

Image read_png_rgb(const fs::path& file) { return read_png(file, PNG_FORMAT_RGB, 3); }

Raster<std::uint8_t> read_png_gray(const fs::path& file) { return read_png(file, PNG_FORMAT_GRAY, 1); }

void write_png(const fs::path& file, const Raster<std::uint8_t>& raster) {
    if (file.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(file.parent_path(), ec);
        if (ec)
            throw Error(ErrorKind::io, "cannot create " + file.parent_path().string());
    }
    png_image image = png_header(raster);
    if (!png_image_write_to_file(&image, file.string().c_str(), 0, raster.data().data(), 0, nullptr))
        throw Error(ErrorKind::io, "cannot write " + file.string() + ": " + image.message);
}

std::string encode_png(const Raster<std::uint8_t>& raster) {
    png_image image = png_header(raster);
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, raster.data().data(), 0, nullptr))
        throw Error(ErrorKind::io, std::string("png encode failed: ") + image.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, raster.data().data(), 0, nullptr))
        throw Error(ErrorKind::io, std::string("png encode failed: ") + image.message);
    out.resize(size);
    return out;
}

BinaryMap read_mask_png(const fs::path& file) {
    auto gray = read_png_gray(file);
    for (auto& v : gray.data())
        v = v ? 1 : 0;
    return gray;
}

void write_mask_png(const fs::path& file, const BinaryMap& mask) {
    Raster<std::uint8_t> out = mask;
    for (auto& v : out.data())
        v = v ? 255 : 0;
    write_png(file, out);
}

// --- cameras / views ---------------------------------------------------------------------

void CameraParams::validate() const {
    const auto& k = intrinsics;
    if (!k.allFinite() || !extrinsics.allFinite())
        throw Error(ErrorKind::validation, "camera has non-finite entries");
    if (k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0)
        throw Error(ErrorKind::validation, "intrinsics are not upper-triangular");
    if (!(k(0, 0) > 0.0) || !(k(1, 1) > 0.0))
        throw Error(ErrorKind::validation, "intrinsics focal entries must be positive");
    const Eigen::Matrix3d r = rotation();
    if (!((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-5))
        throw Error(ErrorKind::validation, "extrinsic rotation is not orthonormal within 1e-5");
}

const EntityMask* ViewRecord::find_mask(int entity_id) const {
    for (const auto& m : entity_masks)
        if (m.entity_id == entity_id)
            return &m;
    return nullptr;
}

std::size_t make_masks_disjoint(std::vector<EntityMask>& masks) {
    for (auto& m : masks)
        m.pixel_count = static_cast<std::int64_t>(count_set(m.pixels));
    std::vector<std::size_t> order(masks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (masks[a].pixel_count != masks[b].pixel_count)
            return masks[a].pixel_count < masks[b].pixel_count;
        return masks[a].entity_id < masks[b].entity_id;
    });
    if (masks.empty())
        return 0;
    BinaryMap claimed(masks.front().pixels.height(), masks.front().pixels.width());
    std::size_t reassigned = 0;
    for (std::size_t idx : order) {
        auto& px = masks[idx].pixels.data();
        for (std::size_t p = 0; p < px.size(); ++p) {
            if (!px[p])
                continue;
            if (claimed.data()[p]) {
                px[p] = 0;
                ++reassigned;
            } else {
                claimed.data()[p] = 1;
            }
        }
        masks[idx].pixel_count = static_cast<std::int64_t>(count_set(masks[idx].pixels));
    }
    return reassigned;
}

SceneBundle load_scene(const fs::path& scene_dir) {
    const json manifest = read_manifest(scene_dir);
    SceneBundle scene;
    try {
        if (manifest.value("format", std::string()) != kSceneFormat)
            throw Error(ErrorKind::validation, "manifest format tag is not " + std::string(kSceneFormat));
        if (manifest.value("version", 0) != kSceneFormatVersion)
            throw Error(ErrorKind::validation, "unsupported manifest version");
        scene.height = manifest.at("height").get<int>();
        scene.width = manifest.at("width").get<int>();
        scene.patch_size = manifest.at("patch_size").get<int>();
        scene.feature_dim = manifest.value("feature_dim", 0);
        scene.world_frame_note = manifest.value("world_frame", std::string("first-camera frame"));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::validation, std::string("manifest header: ") + e.what());
    }
    const int h = scene.height;
    const int w = scene.width;
    if (scene.patch_size < 1 || h < 1 || w < 1)
        throw Error(ErrorKind::validation, "image size and patch_size must be positive");
    if (h % scene.patch_size != 0 || w % scene.patch_size != 0)
        throw Error(ErrorKind::validation, "H and W must be multiples of patch_size");

    const auto& views = manifest.at("views");
    const int n = static_cast<int>(views.size());
    if (n < 1)
        throw Error(ErrorKind::validation, "scene needs at least one view");

    const auto& cam_entry = manifest.at("cameras");
    const std::vector<int> cam_shape = cam_entry.at("shape").get<std::vector<int>>();
    if (cam_shape != std::vector<int>{n, 21})
        throw Error(ErrorKind::validation, "cameras shape must be [N, 21]");
    const auto cams = read_double_tensor(scene_dir / cam_entry.at("file").get<std::string>(),
                                         cam_entry.value("dtype", std::string("float32")),
                                         cam_shape, "cameras");

    for (int v = 0; v < n; ++v) {
        const auto& item = views[static_cast<std::size_t>(v)];
        const std::string tag = "view " + std::to_string(v);
        ViewRecord view;
        try {
            view.image = read_png_rgb(scene_dir / item.at("image").get<std::string>());
            if (view.image.height() != h || view.image.width() != w)
                throw Error(ErrorKind::validation, tag + ": image size differs from manifest");

            const auto& d = item.at("depth");
            const auto dshape = d.at("shape").get<std::vector<int>>();
            if (dshape != std::vector<int>{h, w})
                throw Error(ErrorKind::validation, tag + ": depth shape " + shape_string(dshape) +
                                                       " differs from image size");
            view.depth = DepthMap(h, w);
            view.depth.data() = read_float_tensor(scene_dir / d.at("file").get<std::string>(),
                                                  d.value("dtype", std::string("float32")), dshape,
                                                  tag + " depth");
            for (float z : view.depth.data())
                if (!std::isfinite(z) || z < 0.0f)
                    throw Error(ErrorKind::validation, tag + ": depth must be finite and >= 0");

            if (item.contains("point_map") && !item.at("point_map").is_null()) {
                const auto& p = item.at("point_map");
                const auto pshape = p.at("shape").get<std::vector<int>>();
                if (pshape != std::vector<int>{h, w, 3})
                    throw Error(ErrorKind::validation, tag + ": point_map shape must be [H, W, 3]");
                Raster<float> pm(h, w, 3);
                pm.data() = read_float_tensor(scene_dir / p.at("file").get<std::string>(),
                                              p.value("dtype", std::string("float32")), pshape,
                                              tag + " point_map");
                for (float x : pm.data())
                    if (!std::isfinite(x))
                        throw Error(ErrorKind::validation, tag + ": point_map not finite");
                view.point_map = std::move(pm);
            }

            const double* c = cams.data() + static_cast<std::size_t>(v) * 21;
            for (int r = 0; r < 3; ++r)
                for (int col = 0; col < 3; ++col)
                    view.camera.intrinsics(r, col) = c[r * 3 + col];
            for (int r = 0; r < 3; ++r)
                for (int col = 0; col < 4; ++col)
                    view.camera.extrinsics(r, col) = c[9 + r * 4 + col];
            try {
                view.camera.validate();
            } catch (const Error& e) {
                throw Error(ErrorKind::validation, tag + ": " + e.what());
            }

            if (item.contains("masks")) {
                for (const auto& m : item.at("masks")) {
                    EntityMask mask;
                    mask.entity_id = m.at("entity_id").get<int>();
                    if (view.find_mask(mask.entity_id))
                        throw Error(ErrorKind::validation,
                                    tag + ": duplicate entity id " + std::to_string(mask.entity_id));
                    mask.pixels = read_mask_png(scene_dir / m.at("file").get<std::string>());
                    if (mask.pixels.height() != h || mask.pixels.width() != w)
                        throw Error(ErrorKind::validation, tag + ": mask " +
                                                               std::to_string(mask.entity_id) +
                                                               " size differs from image");
                    view.entity_masks.push_back(std::move(mask));
                }
            }
        } catch (const json::exception& e) {
            throw Error(ErrorKind::validation, tag + ": " + e.what());
        }
        if (const auto moved = make_masks_disjoint(view.entity_masks))
            scene.warnings.push_back(tag + ": " + std::to_string(moved) +
                                     " overlapping mask pixels assigned to the smaller mask");
        scene.views.push_back(std::move(view));
    }

    try {
        parse_attention_entries(manifest, n, scene.grid_height(), scene.grid_width());
    } catch (const json::exception& e) {
        throw Error(ErrorKind::validation, std::string("attention index: ") + e.what());
    }
    return scene;
}

// --- writer ------------------------------------------------------------------------------

SceneWriter::SceneWriter(fs::path scene_dir, int height, int width, int patch_size, int feature_dim)
    : dir_(std::move(scene_dir)), height_(height), width_(width), patch_size_(patch_size),
      feature_dim_(feature_dim) {
    if (patch_size < 1 || height % patch_size || width % patch_size)
        throw Error(ErrorKind::argument, "image size must be a multiple of patch_size");
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot create " + dir_.string());
}

void SceneWriter::add_view(const ViewRecord& view) {
    const int v = static_cast<int>(view_entries_.size());
    const std::string tag = view_tag(v);
    json entry;
    entry["image"] = "images/" + tag + ".png";
    write_png(dir_ / "images" / (tag + ".png"), view.image);
    entry["depth"] = tensor_entry("depth/" + tag + ".bin", "float32", {height_, width_});
    write_binary(dir_ / "depth" / (tag + ".bin"), view.depth.data().data(),
                 view.depth.size() * sizeof(float));
    if (view.point_map) {
        entry["point_map"] = tensor_entry("points/" + tag + ".bin", "float32", {height_, width_, 3});
        write_binary(dir_ / "points" / (tag + ".bin"), view.point_map->data().data(),
                     view.point_map->size() * sizeof(float));
    }
    entry["masks"] = json::array();
    for (const auto& m : view.entity_masks) {
        const std::string file = "masks/" + tag + "_" + std::to_string(m.entity_id) + ".png";
        write_mask_png(dir_ / file, m.pixels);
        entry["masks"].push_back({{"entity_id", m.entity_id}, {"file", file}});
    }
    view_entries_.push_back(entry.dump());
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            cameras_.push_back(view.camera.intrinsics(r, c));
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
            cameras_.push_back(view.camera.extrinsics(r, c));
}

void SceneWriter::add_attention(const AttentionStack& stack, std::optional<int> mask_id) {
    stack.validate();
    AttentionEntry e;
    e.query_view = stack.query_view;
    e.reference_view = stack.reference_view;
    e.mask_id = mask_id;
    e.file = "attention/" + std::to_string(stack.query_view) + "_" +
             std::to_string(stack.reference_view) + "_" +
             (mask_id ? std::to_string(*mask_id) : std::string("all")) + ".bin";
    e.shape = {static_cast<int>(stack.token_count()), stack.layers, stack.grid_height,
               stack.grid_width};
    e.token_ids = stack.token_ids;
    write_binary(dir_ / e.file, stack.values.data(), stack.values.size() * sizeof(float));
    attention_.push_back(std::move(e));
}

void SceneWriter::finish() {
    json manifest;
    manifest["format"] = kSceneFormat;
    manifest["version"] = kSceneFormatVersion;
    manifest["height"] = height_;
    manifest["width"] = width_;
    manifest["patch_size"] = patch_size_;
    manifest["feature_dim"] = feature_dim_;
    manifest["world_frame"] = "first-camera frame";
    const int n = static_cast<int>(view_entries_.size());
    manifest["cameras"] = tensor_entry("cameras.bin", "float64", {n, 21});
    write_binary(dir_ / "cameras.bin", cameras_.data(), cameras_.size() * sizeof(double));
    manifest["views"] = json::array();
    for (const auto& v : view_entries_)
        manifest["views"].push_back(json::parse(v));
    manifest["attention"] = json::array();
    for (const auto& e : attention_) {
        json item{{"query_view", e.query_view},
                  {"reference_view", e.reference_view},
                  {"mask_id", e.mask_id ? json(*e.mask_id) : json(nullptr)},
                  {"file", e.file},
                  {"dtype", e.dtype},
                  {"shape", e.shape},
                  {"token_ids", e.token_ids}};
        manifest["attention"].push_back(std::move(item));
    }
    std::ofstream out(dir_ / kManifestName, std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::io, "cannot write manifest in " + dir_.string());
    out << manifest.dump(1) << '\n';
}

// --- attention ---------------------------------------------------------------------------

void AttentionStack::validate() const {
    if (layers < 1)
        throw Error(ErrorKind::validation, "attention stack has no layers");
    if (grid_height < 1 || grid_width < 1)
        throw Error(ErrorKind::validation, "attention grid is empty");
    if (values.size() != token_ids.size() * static_cast<std::size_t>(layers) * cells())
        throw Error(ErrorKind::validation, "attention values do not match S x L x h x w");
    for (float v : values)
        if (!std::isfinite(v) || v < 0.0f)
            throw Error(ErrorKind::validation, "attention entries must be finite and non-negative");
}

AttentionStore::AttentionStore(fs::path scene_dir) : dir_(std::move(scene_dir)) {
    const json manifest = read_manifest(dir_);
    try {
        const int patch = manifest.at("patch_size").get<int>();
        const int gh = manifest.at("height").get<int>() / patch;
        const int gw = manifest.at("width").get<int>() / patch;
        feature_dim_ = manifest.value("feature_dim", 0);
        entries_ = parse_attention_entries(manifest, static_cast<int>(manifest.at("views").size()),
                                           gh, gw);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::validation, std::string("attention index: ") + e.what());
    }
}

bool AttentionStore::has_pair(int query_view, int reference_view) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const AttentionEntry& e) {
        return e.query_view == query_view && e.reference_view == reference_view;
    });
}

std::shared_ptr<const std::vector<float>> AttentionStore::payload(std::size_t entry) const {
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(entry); it != cache_.end())
            return it->second;
    }
    const auto& e = entries_[entry];
    if (!fs::exists(dir_ / e.file))
        throw Error(ErrorKind::attention, "attention unavailable: missing " + e.file);
    auto values = std::make_shared<std::vector<float>>(
        read_float_tensor(dir_ / e.file, e.dtype, e.shape, "attention"));
    for (float v : *values)
        if (!std::isfinite(v) || v < 0.0f)
            throw Error(ErrorKind::validation,
                        "attention " + e.file + ": entries must be finite and non-negative");
    std::lock_guard lock(mutex_);
    return cache_.emplace(entry, std::move(values)).first->second;
}

AttentionStack AttentionStore::load(int query_view, int reference_view,
                                    std::optional<int> mask_id) const {
    if (query_view == reference_view)
        throw Error(ErrorKind::argument, "self-pair not permitted");
    for (std::size_t k = 0; k < entries_.size(); ++k) {
        const auto& e = entries_[k];
        if (e.query_view != query_view || e.reference_view != reference_view || e.mask_id != mask_id)
            continue;
        if (!fs::exists(dir_ / e.file))
            break;
        AttentionStack stack;
        stack.query_view = query_view;
        stack.reference_view = reference_view;
        stack.token_ids = e.token_ids;
        stack.layers = e.shape[1];
        stack.grid_height = e.shape[2];
        stack.grid_width = e.shape[3];
        stack.feature_dim = feature_dim_;
        stack.values = *payload(k);
        return stack;
    }
    throw Error(ErrorKind::attention,
                "attention unavailable for pair (" + std::to_string(query_view) + ", " +
                    std::to_string(reference_view) + ")" +
                    (mask_id ? " mask " + std::to_string(*mask_id) : std::string(" whole grid")));
}

AttentionStack AttentionStore::rows(int query_view, int reference_view,
                                    std::span<const int> token_ids) const {
    if (query_view == reference_view)
        throw Error(ErrorKind::argument, "self-pair not permitted");
    struct Source {
        std::size_t entry;
        std::size_t row;
    };
    std::vector<std::size_t> candidates;
    // Whole-grid dumps first so a single payload serves every row.
    for (int pass = 0; pass < 2; ++pass)
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            const auto& e = entries_[k];
            if (e.query_view == query_view && e.reference_view == reference_view &&
                e.mask_id.has_value() == (pass == 1) && fs::exists(dir_ / e.file))
                candidates.push_back(k);
        }
    std::vector<Source> sources;
    sources.reserve(token_ids.size());
    int layers = 0, gh = 0, gw = 0;
    for (int t : token_ids) {
        bool found = false;
        for (std::size_t k : candidates) {
            const auto& ids = entries_[k].token_ids;
            auto it = std::find(ids.begin(), ids.end(), t);
            if (it == ids.end())
                continue;
            const auto& shape = entries_[k].shape;
            if (layers == 0) {
                layers = shape[1];
                gh = shape[2];
                gw = shape[3];
            } else if (shape[1] != layers) {
                throw Error(ErrorKind::validation, "attention dumps disagree on layer count");
            }
            sources.push_back({k, static_cast<std::size_t>(it - ids.begin())});
            found = true;
            break;
        }
        if (!found)
            throw Error(ErrorKind::attention,
                        "attention unavailable for pair (" + std::to_string(query_view) + ", " +
                            std::to_string(reference_view) + ") token " + std::to_string(t));
    }
    AttentionStack stack;
    stack.query_view = query_view;
    stack.reference_view = reference_view;
    stack.token_ids.assign(token_ids.begin(), token_ids.end());
    stack.feature_dim = feature_dim_;
    if (sources.empty()) {
        if (!candidates.empty()) {
            const auto& shape = entries_[candidates.front()].shape;
            stack.layers = shape[1];
            stack.grid_height = shape[2];
            stack.grid_width = shape[3];
        }
        return stack;
    }
    stack.layers = layers;
    stack.grid_height = gh;
    stack.grid_width = gw;
    const std::size_t row_len = static_cast<std::size_t>(layers) * gh * gw;
    stack.values.resize(sources.size() * row_len);
    for (std::size_t s = 0; s < sources.size(); ++s) {
        const auto data = payload(sources[s].entry);
        std::copy_n(data->begin() + static_cast<std::ptrdiff_t>(sources[s].row * row_len), row_len,
                    stack.values.begin() + static_cast<std::ptrdiff_t>(s * row_len));
    }
    return stack;
}

AttentionStack load_attention(const AttentionStore& store, int query_view, int reference_view,
                              int mask_id, std::span<const int> query_tokens) {
    if (query_view == reference_view)
        throw Error(ErrorKind::argument, "self-pair not permitted");
    const bool has_mask_dump =
        std::any_of(store.entries().begin(), store.entries().end(), [&](const AttentionEntry& e) {
            return e.query_view == query_view && e.reference_view == reference_view &&
                   e.mask_id == mask_id && fs::exists(store.scene_dir() / e.file);
        });
    if (has_mask_dump)
        return store.load(query_view, reference_view, mask_id);
    if (query_tokens.empty())
        throw Error(ErrorKind::attention,
                    "attention unavailable for pair (" + std::to_string(query_view) + ", " +
                        std::to_string(reference_view) + ") mask " + std::to_string(mask_id));
    return store.rows(query_view, reference_view, query_tokens);
}

}  // namespace maskprior
