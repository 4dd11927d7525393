#include "maskprior/synth.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace maskprior {

using json = nlohmann::json;

namespace {

constexpr int kSky = -2;
constexpr int kGround = -1;
constexpr double kGroundRadius = 3.0;
constexpr double kPi = 3.14159265358979323846;

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    std::uint64_t z = h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct WorldCamera {
    Eigen::Matrix3d K;
    Eigen::Matrix3d R;  // world to camera
    Eigen::Vector3d t;
    Eigen::Vector3d center;
};

struct Render {
    Raster<int> object;  // box index, kGround or kSky
    DepthMap depth;
    Image image;
};

std::vector<WorldCamera> ring_cameras(const SynthSpec& spec) {
    const auto& ring = spec.camera;
    const double f = 0.5 * spec.width / std::tan(0.5 * ring.fov_degrees * kPi / 180.0);
    Eigen::Matrix3d K;
    K << f, 0, 0.5 * spec.width, 0, f, 0.5 * spec.height, 0, 0, 1;
    std::vector<WorldCamera> cams;
    for (int k = 0; k < spec.views; ++k) {
        const double frac = spec.views > 1 ? static_cast<double>(k) / (spec.views - 1) : 0.5;
        const double theta = (-0.5 + frac) * ring.arc_degrees * kPi / 180.0;
        WorldCamera cam;
        cam.K = K;
        cam.center = {ring.radius * std::sin(theta), ring.height, ring.radius * std::cos(theta)};
        const Eigen::Vector3d target(0.0, ring.target_y, 0.0);
        const Eigen::Vector3d forward = (target - cam.center).normalized();
        const Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitY()).normalized();
        const Eigen::Vector3d down = forward.cross(right);
        cam.R.row(0) = right.transpose();
        cam.R.row(1) = down.transpose();
        cam.R.row(2) = forward.transpose();
        cam.t = -cam.R * cam.center;
        cams.push_back(cam);
    }
    return cams;
}

std::array<double, 3> hsv(double h, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(h * 6.0, 6.0);
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    std::array<double, 3> rgb{};
    const int sector = static_cast<int>(hp);
    switch (sector) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
    }
    for (auto& ch : rgb)
        ch += v - c;
    return rgb;
}

// Slab test; returns entry distance and the axis of the entry face.
bool hit_box(const SynthBox& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& s_hit, int& axis) {
    const double lo[3] = {b.center_x - 0.5 * b.size_x, 0.0, b.center_z - 0.5 * b.size_z};
    const double hi[3] = {b.center_x + 0.5 * b.size_x, b.size_y, b.center_z + 0.5 * b.size_z};
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    int entry_axis = 0;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
            if (o[a] < lo[a] || o[a] > hi[a])
                return false;
            continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        if (ta > tb)
            std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            entry_axis = a;
        }
        t1 = std::min(t1, tb);
    }
    if (t0 > t1 || t0 <= 1e-9)
        return false;
    s_hit = t0;
    axis = entry_axis;
    return true;
}

Render render_view(const SynthSpec& spec, const WorldCamera& cam, const std::vector<SynthBox>& boxes,
                   const std::vector<int>& present, const std::vector<std::array<double, 3>>& colors) {
    Render out{Raster<int>(spec.height, spec.width, 1, kSky), DepthMap(spec.height, spec.width),
               Image(spec.height, spec.width, 3)};
    const Eigen::Matrix3d Kinv = cam.K.inverse();
    const Eigen::Matrix3d Rt = cam.R.transpose();
    static constexpr double kShade[3] = {0.8, 1.0, 0.65};
    const std::array<double, 3> sky{0.62, 0.74, 0.88};
    const std::array<double, 3> ground{0.46, 0.43, 0.38};
    for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c) {
            const Eigen::Vector3d d = Rt * (Kinv * Eigen::Vector3d(c + 0.5, r + 0.5, 1.0));
            double best = std::numeric_limits<double>::infinity();
            int obj = kSky, face = 1;
            for (int b : present) {
                double s;
                int axis;
                if (hit_box(boxes[static_cast<std::size_t>(b)], cam.center, d, s, axis) && s < best) {
                    best = s;
                    obj = b;
                    face = axis;
                }
            }
            if (d.y() < 0.0) {
                const double s = -cam.center.y() / d.y();
                const Eigen::Vector3d p = cam.center + s * d;
                if (s < best && std::hypot(p.x(), p.z()) < kGroundRadius) {
                    best = s;
                    obj = kGround;
                }
            }
            out.object(r, c) = obj;
            std::array<double, 3> rgb = sky;
            if (obj == kGround) {
                rgb = ground;
            } else if (obj >= 0) {
                for (int ch = 0; ch < 3; ++ch)
                    rgb[ch] = colors[static_cast<std::size_t>(obj)][ch] * kShade[face];
            }
            out.depth(r, c) = obj == kSky ? 0.0f : static_cast<float>(best);
            for (int ch = 0; ch < 3; ++ch)
                out.image(r, c, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[ch], 0.0, 1.0) * 255.0));
        }
    return out;
}

// Token label: the box covering at least half of the patch, or -1. A patch split exactly in half
// between two boxes is flagged through `split`.
std::vector<int> token_labels(const Raster<int>& object, int patch, std::size_t box_count, bool* split = nullptr) {
    const int gh = object.height() / patch, gw = object.width() / patch;
    std::vector<int> labels(static_cast<std::size_t>(gh) * gw, -1);
    std::vector<int> counts(box_count);
    for (int gr = 0; gr < gh; ++gr)
        for (int gc = 0; gc < gw; ++gc) {
            std::fill(counts.begin(), counts.end(), 0);
            for (int r = gr * patch; r < (gr + 1) * patch; ++r)
                for (int c = gc * patch; c < (gc + 1) * patch; ++c)
                    if (object(r, c) >= 0)
                        ++counts[static_cast<std::size_t>(object(r, c))];
            int best = -1, best_n = 0;
            for (std::size_t b = 0; b < box_count; ++b)
                if (counts[b] > best_n) {
                    best = static_cast<int>(b);
                    best_n = counts[b];
                }
            if (best >= 0 && 2 * best_n >= patch * patch) {
                labels[static_cast<std::size_t>(gr) * gw + gc] = best;
                if (split && std::count(counts.begin(), counts.end(), best_n) > 1)
                    *split = true;
            }
        }
    return labels;
}

struct Layout {
    std::vector<SynthBox> boxes;
    std::vector<std::array<double, 3>> colors;
};

std::vector<int> present_in(const std::vector<SynthBox>& boxes, int view) {
    std::vector<int> out;
    for (std::size_t b = 0; b < boxes.size(); ++b)
        if (!boxes[b].transient || boxes[b].view == view)
            out.push_back(static_cast<int>(b));
    return out;
}

bool footprints_clear(const SynthBox& a, const SynthBox& b, double margin) {
    return std::abs(a.center_x - b.center_x) > 0.5 * (a.size_x + b.size_x) + margin ||
           std::abs(a.center_z - b.center_z) > 0.5 * (a.size_z + b.size_z) + margin;
}

std::vector<SynthBox> random_boxes(const SynthSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> pick_view(0, spec.views - 1);
    auto in = [&](const std::array<double, 2>& range) { return range[0] + (range[1] - range[0]) * unit(rng); };
    std::vector<SynthBox> boxes;
    const int total = spec.static_count + spec.transient_count;
    // Unset radius grows with the entity count to keep occlusion in check.
    const double area = spec.area_radius > 0.0 ? spec.area_radius : 0.24 * std::sqrt(static_cast<double>(total));
    for (int k = 0; k < total; ++k) {
        SynthBox b;
        for (int tries = 0; tries < 200; ++tries) {
            const double rad = area * std::sqrt(unit(rng));
            const double ang = 2.0 * kPi * unit(rng);
            b.center_x = rad * std::cos(ang);
            b.center_z = rad * std::sin(ang);
            b.size_x = in(spec.footprint_range);
            b.size_z = in(spec.footprint_range);
            b.size_y = in(spec.height_range);
            if (std::all_of(boxes.begin(), boxes.end(), [&](const SynthBox& o) { return footprints_clear(b, o, 0.04); }))
                break;
        }
        b.transient = k >= spec.static_count;
        b.textureless = k < spec.textureless_count;
        b.view = b.transient ? pick_view(rng) : -1;
        boxes.push_back(b);
    }
    return boxes;
}

// Pixels the box would cover with nothing in front of it, scanned over its projected bounds.
std::int64_t unoccluded_pixels(const SynthSpec& spec, const WorldCamera& cam, const SynthBox& box) {
    double umin = spec.width, umax = 0.0, vmin = spec.height, vmax = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
        const Eigen::Vector3d x(box.center_x + ((corner & 1) ? 0.5 : -0.5) * box.size_x,
                                (corner & 2) ? box.size_y : 0.0,
                                box.center_z + ((corner & 4) ? 0.5 : -0.5) * box.size_z);
        const Eigen::Vector3d p = cam.K * (cam.R * x + cam.t);
        if (p.z() <= 0.0)
            return 0;
        umin = std::min(umin, p.x() / p.z());
        umax = std::max(umax, p.x() / p.z());
        vmin = std::min(vmin, p.y() / p.z());
        vmax = std::max(vmax, p.y() / p.z());
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(vmin)) - 1);
    const int r1 = std::min(spec.height, static_cast<int>(std::ceil(vmax)) + 1);
    const int c0 = std::max(0, static_cast<int>(std::floor(umin)) - 1);
    const int c1 = std::min(spec.width, static_cast<int>(std::ceil(umax)) + 1);
    const Eigen::Matrix3d Kinv = cam.K.inverse();
    const Eigen::Matrix3d Rt = cam.R.transpose();
    std::int64_t n = 0;
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
            const Eigen::Vector3d d = Rt * (Kinv * Eigen::Vector3d(c + 0.5, r + 0.5, 1.0));
            double s;
            int axis;
            n += hit_box(box, cam.center, d, s, axis);
        }
    return n;
}

bool layout_ok(const SynthSpec& spec, const std::vector<WorldCamera>& cams, const Layout& layout,
               const std::vector<Render>& renders) {
    const std::size_t nb = layout.boxes.size();
    for (int v = 0; v < spec.views; ++v) {
        const auto& rv = renders[static_cast<std::size_t>(v)];
        bool split = false;
        const auto labels = token_labels(rv.object, spec.patch_size, nb, &split);
        if (split || labels[0] >= 0)
            return false;
        for (int r = 0; r < spec.patch_size; ++r)
            for (int c = 0; c < spec.patch_size; ++c)
                if (rv.object(r, c) >= 0)
                    return false;
        for (std::size_t b = 0; b < nb; ++b) {
            const auto& box = layout.boxes[b];
            if (box.transient && box.view != v)
                continue;
            const auto tokens = std::count(labels.begin(), labels.end(), static_cast<int>(b));
            if (tokens < spec.min_tokens)
                return false;
            if (box.transient)
                continue;
            const auto full = unoccluded_pixels(spec, cams[static_cast<std::size_t>(v)], box);
            const auto seen = std::count(rv.object.data().begin(), rv.object.data().end(), static_cast<int>(b));
            if (full == 0 || static_cast<double>(seen) < spec.min_visible_fraction * static_cast<double>(full))
                return false;
        }
    }
    return true;
}

std::vector<std::array<double, 3>> box_colors(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::array<double, 3>> colors;
    for (std::size_t k = 0; k < n; ++k)
        colors.push_back(hsv(unit(rng), 0.45 + 0.3 * unit(rng), 0.7 + 0.25 * unit(rng)));
    return colors;
}

// Rows of view i's tokens attending view j.
AttentionStack build_attention(const SynthSpec& spec, int i, int j, const std::vector<WorldCamera>& cams,
                               const std::vector<Render>& renders, const std::vector<std::vector<int>>& labels,
                               const std::vector<SynthBox>& boxes) {
    const int p = spec.patch_size;
    const int gh = spec.height / p, gw = spec.width / p;
    const int cells = gh * gw;
    const auto& ri = renders[static_cast<std::size_t>(i)];
    const auto& li = labels[static_cast<std::size_t>(i)];
    const auto& lj = labels[static_cast<std::size_t>(j)];
    const auto& ci = cams[static_cast<std::size_t>(i)];
    const auto& cj = cams[static_cast<std::size_t>(j)];
    const Eigen::Matrix3d Kinv = ci.K.inverse();

    AttentionStack stack;
    stack.query_view = i;
    stack.reference_view = j;
    stack.layers = spec.layers;
    stack.grid_height = gh;
    stack.grid_width = gw;
    stack.feature_dim = spec.feature_dim;
    stack.token_ids.resize(static_cast<std::size_t>(cells));
    std::iota(stack.token_ids.begin(), stack.token_ids.end(), 0);
    stack.values.resize(static_cast<std::size_t>(cells) * spec.layers * cells);

    std::mt19937_64 rng(mix(mix(spec.seed, static_cast<std::uint64_t>(i) + 1), static_cast<std::uint64_t>(j) + 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> logits(static_cast<std::size_t>(cells));

    for (int t = 0; t < cells; ++t) {
        const int e = li[static_cast<std::size_t>(t)];
        int target = -1;
        if (e >= 0 && !boxes[static_cast<std::size_t>(e)].textureless &&
            std::find(lj.begin(), lj.end(), e) != lj.end()) {
            // Surface point: the entity pixel nearest the patch centre.
            const int r0 = (t / gw) * p, c0 = (t % gw) * p;
            const double mid = 0.5 * p;
            int br = -1, bc = -1;
            double bd = std::numeric_limits<double>::infinity();
            for (int r = r0; r < r0 + p; ++r)
                for (int c = c0; c < c0 + p; ++c)
                    if (ri.object(r, c) == e) {
                        const double dr = r + 0.5 - (r0 + mid), dc = c + 0.5 - (c0 + mid);
                        if (dr * dr + dc * dc < bd) {
                            bd = dr * dr + dc * dc;
                            br = r;
                            bc = c;
                        }
                    }
            const double depth = ri.depth(br, bc);
            const Eigen::Vector3d xc = Kinv * Eigen::Vector3d(bc + 0.5, br + 0.5, 1.0) * depth;
            const Eigen::Vector3d xw = ci.R.transpose() * (xc - ci.t);
            const Eigen::Vector3d pj = cj.K * (cj.R * xw + cj.t);
            const double u = pj.x() / pj.z(), v = pj.y() / pj.z();
            double best = std::numeric_limits<double>::infinity();
            for (int k = 0; k < cells; ++k) {
                if (lj[static_cast<std::size_t>(k)] != e)
                    continue;
                const double du = (k % gw) * p + mid - u, dv = (k / gw) * p + mid - v;
                if (du * du + dv * dv < best) {
                    best = du * du + dv * dv;
                    target = k;
                }
            }
        }
        for (int l = 0; l < spec.layers; ++l) {
            for (int k = 0; k < cells; ++k) {
                double z = k == target ? 1.0 : 0.0;
                if (spec.noise > 0.0)
                    z += spec.noise * normal(rng);
                logits[static_cast<std::size_t>(k)] = spec.softmax_beta * z;
            }
            const double m = *std::max_element(logits.begin(), logits.end());
            double sum = 0.0;
            for (auto& x : logits) {
                x = std::exp(x - m);
                sum += x;
            }
            float* row = stack.values.data() + (static_cast<std::size_t>(t) * spec.layers + l) * cells;
            for (int k = 0; k < cells; ++k)
                row[k] = static_cast<float>(logits[static_cast<std::size_t>(k)] / sum);
        }
    }
    return stack;
}

json box_json(const SynthBox& b) {
    return {{"center_x", b.center_x}, {"center_z", b.center_z}, {"size_x", b.size_x},
            {"size_y", b.size_y},     {"size_z", b.size_z},     {"transient", b.transient},
            {"view", b.view},         {"textureless", b.textureless}};
}

SynthBox box_from_json(const json& j) {
    SynthBox b;
    b.center_x = j.value("center_x", b.center_x);
    b.center_z = j.value("center_z", b.center_z);
    b.size_x = j.value("size_x", b.size_x);
    b.size_y = j.value("size_y", b.size_y);
    b.size_z = j.value("size_z", b.size_z);
    b.transient = j.value("transient", b.transient);
    b.view = j.value("view", b.view);
    b.textureless = j.value("textureless", b.textureless);
    return b;
}

std::string view_tag(int v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", v);
    return buf;
}

}  // namespace

void SynthSpec::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::argument, "synth spec: " + what); };
    if (views < 2)
        fail("at least two views are required");
    if (patch_size < 1 || height < patch_size || width < patch_size || height % patch_size || width % patch_size)
        fail("image size must be a positive multiple of patch_size");
    if (layers < 1)
        fail("layers must be positive");
    if (!(noise >= 0.0) || !(softmax_beta > 0.0))
        fail("noise must be non-negative and softmax_beta positive");
    if (!(camera.radius > 0.0) || !(camera.fov_degrees > 0.0 && camera.fov_degrees < 180.0))
        fail("invalid camera ring");
    if (boxes.empty()) {
        if (static_count < 1)
            fail("at least one static entity is required");
        if (transient_count < 0 || textureless_count < 0 || textureless_count > static_count)
            fail("invalid entity counts");
        if (footprint_range[0] <= 0.0 || footprint_range[1] < footprint_range[0] || height_range[0] <= 0.0 ||
            height_range[1] < height_range[0])
            fail("invalid size ranges");
    } else {
        if (std::none_of(boxes.begin(), boxes.end(), [](const SynthBox& b) { return !b.transient; }))
            fail("at least one static entity is required");
        for (const auto& b : boxes) {
            if (b.size_x <= 0.0 || b.size_y <= 0.0 || b.size_z <= 0.0)
                fail("box sizes must be positive");
            if (b.transient && (b.view < -1 || b.view >= views))
                fail("transient view out of range");
        }
    }
}

void to_json(json& j, const SynthSpec& s) {
    j = json{{"seed", s.seed},
             {"views", s.views},
             {"height", s.height},
             {"width", s.width},
             {"patch_size", s.patch_size},
             {"layers", s.layers},
             {"feature_dim", s.feature_dim},
             {"noise", s.noise},
             {"softmax_beta", s.softmax_beta},
             {"camera",
              {{"radius", s.camera.radius},
               {"height", s.camera.height},
               {"arc_degrees", s.camera.arc_degrees},
               {"target_y", s.camera.target_y},
               {"fov_degrees", s.camera.fov_degrees}}},
             {"static_count", s.static_count},
             {"transient_count", s.transient_count},
             {"textureless_count", s.textureless_count},
             {"area_radius", s.area_radius},
             {"footprint_range", s.footprint_range},
             {"height_range", s.height_range},
             {"min_tokens", s.min_tokens},
             {"min_visible_fraction", s.min_visible_fraction},
             {"max_layout_attempts", s.max_layout_attempts}};
    j["boxes"] = json::array();
    for (const auto& b : s.boxes)
        j["boxes"].push_back(box_json(b));
}

void from_json(const json& j, SynthSpec& s) {
    const SynthSpec d;
    s.seed = j.value("seed", d.seed);
    s.views = j.value("views", d.views);
    s.height = j.value("height", d.height);
    s.width = j.value("width", d.width);
    s.patch_size = j.value("patch_size", d.patch_size);
    s.layers = j.value("layers", d.layers);
    s.feature_dim = j.value("feature_dim", d.feature_dim);
    s.noise = j.value("noise", d.noise);
    s.softmax_beta = j.value("softmax_beta", d.softmax_beta);
    if (j.contains("camera")) {
        const auto& c = j.at("camera");
        s.camera.radius = c.value("radius", d.camera.radius);
        s.camera.height = c.value("height", d.camera.height);
        s.camera.arc_degrees = c.value("arc_degrees", d.camera.arc_degrees);
        s.camera.target_y = c.value("target_y", d.camera.target_y);
        s.camera.fov_degrees = c.value("fov_degrees", d.camera.fov_degrees);
    }
    s.static_count = j.value("static_count", d.static_count);
    s.transient_count = j.value("transient_count", d.transient_count);
    s.textureless_count = j.value("textureless_count", d.textureless_count);
    s.area_radius = j.value("area_radius", d.area_radius);
    s.footprint_range = j.value("footprint_range", d.footprint_range);
    s.height_range = j.value("height_range", d.height_range);
    s.min_tokens = j.value("min_tokens", d.min_tokens);
    s.min_visible_fraction = j.value("min_visible_fraction", d.min_visible_fraction);
    s.max_layout_attempts = j.value("max_layout_attempts", d.max_layout_attempts);
    s.boxes.clear();
    if (j.contains("boxes"))
        for (const auto& b : j.at("boxes"))
            s.boxes.push_back(box_from_json(b));
}

SynthTruth generate(const SynthSpec& spec, const fs::path& out_dir) {
    spec.validate();
    if (fs::exists(out_dir) && !fs::is_empty(out_dir))
        throw Error(ErrorKind::io, "output directory is not empty: " + out_dir.string());

    std::mt19937_64 rng(spec.seed);
    const auto cams = ring_cameras(spec);

    Layout layout;
    std::vector<Render> renders;
    auto render_all = [&] {
        renders.clear();
        for (int v = 0; v < spec.views; ++v)
            renders.push_back(render_view(spec, cams[static_cast<std::size_t>(v)], layout.boxes,
                                          present_in(layout.boxes, v), layout.colors));
    };
    if (spec.boxes.empty()) {
        bool ok = false;
        for (int attempt = 0; attempt < spec.max_layout_attempts && !ok; ++attempt) {
            layout.boxes = random_boxes(spec, rng);
            layout.colors = box_colors(layout.boxes.size(), rng);
            render_all();
            ok = layout_ok(spec, cams, layout, renders);
        }
        if (!ok)
            throw Error(ErrorKind::argument, "synth spec: no admissible layout within max_layout_attempts");
    } else {
        layout.boxes = spec.boxes;
        std::uniform_int_distribution<int> pick_view(0, spec.views - 1);
        for (auto& b : layout.boxes)
            if (b.transient && b.view < 0)
                b.view = pick_view(rng);
        layout.colors = box_colors(layout.boxes.size(), rng);
        render_all();
    }

    std::vector<std::vector<int>> labels;
    for (const auto& r : renders)
        labels.push_back(token_labels(r.object, spec.patch_size, layout.boxes.size()));

    SynthTruth truth;
    truth.boxes = layout.boxes;
    SceneWriter writer(out_dir, spec.height, spec.width, spec.patch_size, spec.feature_dim);
    const Eigen::Matrix3d R0 = cams[0].R;
    const Eigen::Vector3d t0 = cams[0].t;
    for (int v = 0; v < spec.views; ++v) {
        const auto& r = renders[static_cast<std::size_t>(v)];
        const auto& cam = cams[static_cast<std::size_t>(v)];
        ViewRecord view;
        view.image = r.image;
        view.depth = r.depth;
        view.camera.intrinsics = cam.K;
        const Eigen::Matrix3d Rv = cam.R * R0.transpose();
        view.camera.extrinsics.leftCols<3>() = Rv;
        view.camera.extrinsics.col(3) = cam.t - Rv * t0;

        std::vector<int> visible;
        for (int b : present_in(layout.boxes, v))
            if (std::find(r.object.data().begin(), r.object.data().end(), b) != r.object.data().end())
                visible.push_back(b);
        std::vector<int> ids(visible.size());
        std::iota(ids.begin(), ids.end(), 1);
        std::shuffle(ids.begin(), ids.end(), rng);

        std::map<int, EntityTruth> entities;
        BinaryMap gt(spec.height, spec.width);
        for (std::size_t k = 0; k < visible.size(); ++k) {
            const int b = visible[k];
            EntityMask m;
            m.entity_id = ids[k];
            m.pixels = BinaryMap(spec.height, spec.width);
            for (std::size_t p = 0; p < m.pixels.size(); ++p)
                if (r.object.data()[p] == b) {
                    m.pixels.data()[p] = 1;
                    ++m.pixel_count;
                    if (layout.boxes[static_cast<std::size_t>(b)].transient)
                        gt.data()[p] = 1;
                }
            view.entity_masks.push_back(std::move(m));
            const auto& box = layout.boxes[static_cast<std::size_t>(b)];
            entities[ids[k]] = {b, !box.transient, box.textureless};
        }
        std::sort(view.entity_masks.begin(), view.entity_masks.end(),
                  [](const EntityMask& a, const EntityMask& b) { return a.entity_id < b.entity_id; });
        writer.add_view(view);
        truth.entities.push_back(std::move(entities));
        truth.gt_transient.push_back(std::move(gt));
    }
    for (int i = 0; i < spec.views; ++i)
        for (int j = 0; j < spec.views; ++j)
            if (i != j)
                writer.add_attention(build_attention(spec, i, j, cams, renders, labels, layout.boxes), std::nullopt);
    writer.finish();

    json doc;
    doc["format"] = "maskprior-synth-labels";
    doc["spec"] = spec;
    doc["boxes"] = json::array();
    for (const auto& b : truth.boxes)
        doc["boxes"].push_back(box_json(b));
    doc["views"] = json::array();
    for (int v = 0; v < spec.views; ++v) {
        json entry{{"view", v}, {"gt_transient", "gt/" + view_tag(v) + ".png"}, {"entities", json::array()}};
        for (const auto& [id, e] : truth.entities[static_cast<std::size_t>(v)])
            entry["entities"].push_back({{"entity_id", id},
                                         {"object", e.object},
                                         {"label", e.is_static ? "static" : "transient"},
                                         {"textureless", e.textureless}});
        doc["views"].push_back(std::move(entry));
        write_mask_png(out_dir / "gt" / (view_tag(v) + ".png"), truth.gt_transient[static_cast<std::size_t>(v)]);
    }
    std::ofstream out(out_dir / "labels.json", std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::io, "cannot write labels.json");
    out << doc.dump(1) << '\n';
    return truth;
}

SynthTruth load_truth(const fs::path& scene_dir) {
    std::ifstream in(scene_dir / "labels.json");
    if (!in)
        throw Error(ErrorKind::io, "labels missing: " + (scene_dir / "labels.json").string());
    SynthTruth truth;
    try {
        const json doc = json::parse(in);
        for (const auto& b : doc.at("boxes"))
            truth.boxes.push_back(box_from_json(b));
        for (const auto& v : doc.at("views")) {
            std::map<int, EntityTruth> entities;
            for (const auto& e : v.at("entities"))
                entities[e.at("entity_id").get<int>()] = {e.at("object").get<int>(),
                                                          e.at("label").get<std::string>() == "static",
                                                          e.value("textureless", false)};
            truth.entities.push_back(std::move(entities));
            truth.gt_transient.push_back(read_mask_png(scene_dir / v.at("gt_transient").get<std::string>()));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::validation, std::string("labels.json: ") + e.what());
    }
    return truth;
}

WarmupFixture generate_warmup_frames(const WarmupFixtureSpec& spec) {
    if (spec.height < 1 || spec.width < 1 || spec.frames < 0)
        throw Error(ErrorKind::argument, "warmup fixture: invalid dimensions");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto quantise = [](double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; };

    WarmupFixture fx;
    fx.ground_truth = FloatImage(spec.height, spec.width, 3);
    for (auto& v : fx.ground_truth.data())
        v = quantise(spec.scene_range[0] + (spec.scene_range[1] - spec.scene_range[0]) * unit(rng));
    fx.distractor = BinaryMap(spec.height, spec.width);
    for (int r = spec.distractor_row; r < spec.distractor_row + spec.distractor_height; ++r)
        for (int c = spec.distractor_col; c < spec.distractor_col + spec.distractor_width; ++c)
            if (fx.distractor.in_bounds(r, c))
                fx.distractor(r, c) = 1;

    for (int f = 0; f < spec.frames; ++f) {
        FloatImage render = fx.ground_truth;
        for (int r = 0; r < spec.height; ++r)
            for (int c = 0; c < spec.width; ++c)
                for (int ch = 0; ch < 3; ++ch) {
                    double add = 0.0;
                    if (fx.distractor(r, c))
                        add = spec.distractor_range[0] + (spec.distractor_range[1] - spec.distractor_range[0]) * unit(rng);
                    else if (spec.background_noise > 0.0)
                        add = spec.background_noise * unit(rng);
                    render(r, c, ch) = quantise(render(r, c, ch) + add);
                }
        fx.renders.push_back(std::move(render));
    }
    return fx;
}

}  // namespace maskprior
