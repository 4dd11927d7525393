#include "maskprior/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace maskprior {

namespace {

inline double distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    const double dz = a.z() - b.z();
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline double squared(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    const double dz = a.z() - b.z();
    return dx * dx + dy * dy + dz * dz;
}

// Static 3-d tree over a point array, nearest-neighbour queries only.
class KdTree {
public:
    explicit KdTree(const std::vector<Eigen::Vector3d>& points) : points_(points) {
        order_.resize(points.size());
        std::iota(order_.begin(), order_.end(), 0);
        nodes_.reserve(points.size());
        root_ = build(0, order_.size(), 0);
    }

    // Squared distance to the nearest stored point.
    double nearest_squared(const Eigen::Vector3d& q) const {
        double best = std::numeric_limits<double>::infinity();
        search(root_, q, best);
        return best;
    }

private:
    struct Node {
        std::size_t point;
        int axis;
        int left = -1;
        int right = -1;
    };

    int build(std::size_t lo, std::size_t hi, int depth) {
        if (lo >= hi)
            return -1;
        const int axis = depth % 3;
        const std::size_t mid = lo + (hi - lo) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(hi),
                         [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({order_[mid], axis});
        const int left = build(lo, mid, depth + 1);
        const int right = build(mid + 1, hi, depth + 1);
        nodes_[static_cast<std::size_t>(id)].left = left;
        nodes_[static_cast<std::size_t>(id)].right = right;
        return id;
    }

    void search(int id, const Eigen::Vector3d& q, double& best) const {
        if (id < 0)
            return;
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        const auto& p = points_[node.point];
        best = std::min(best, squared(q, p));
        const double diff = q[node.axis] - p[node.axis];
        const int near = diff < 0 ? node.left : node.right;
        const int far = diff < 0 ? node.right : node.left;
        search(near, q, best);
        if (diff * diff <= best)
            search(far, q, best);
    }

    const std::vector<Eigen::Vector3d>& points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

double mean_nearest(const std::vector<Eigen::Vector3d>& from, const KdTree& to) {
    double sum = 0.0;
    for (const auto& p : from)
        sum += std::sqrt(to.nearest_squared(p));
    return sum / static_cast<double>(from.size());
}

}  // namespace

PointSet unproject(const ViewRecord& view, const BinaryMap& region, int view_index) {
    const auto& depth = view.depth;
    if (region.height() != depth.height() || region.width() != depth.width())
        throw Error(ErrorKind::argument, "unproject region does not match the depth map");
    const Eigen::Matrix3d k = view.camera.intrinsics;
    if (std::abs(k.determinant()) < 1e-12)
        throw Error(ErrorKind::argument, "singular intrinsics");
    const Eigen::Matrix3d k_inv = k.inverse();
    const Eigen::Matrix3d r_t = view.camera.rotation().transpose();
    const Eigen::Vector3d t = view.camera.translation();

    PointSet out;
    for (int row = 0; row < region.height(); ++row)
        for (int col = 0; col < region.width(); ++col) {
            if (!region(row, col))
                continue;
            const double d = depth(row, col);
            if (d <= 0.0)
                continue;
            const Eigen::Vector3d ray = k_inv * Eigen::Vector3d(col + 0.5, row + 0.5, 1.0);
            out.points.push_back(r_t * (ray * d - t));
            out.provenance.push_back({view_index, row, col});
        }
    return out;
}

PointSet unproject_all(const ViewRecord& view, int view_index, int stride) {
    if (stride < 1)
        throw Error(ErrorKind::argument, "stride must be positive");
    BinaryMap region(view.depth.height(), view.depth.width());
    for (int r = 0; r < region.height(); r += stride)
        for (int c = 0; c < region.width(); c += stride)
            region(r, c) = 1;
    return unproject(view, region, view_index);
}

Projection project(const CameraParams& camera, const Eigen::Vector3d& world) {
    const Eigen::Vector3d cam = camera.to_camera(world);
    const Eigen::Vector3d pix = camera.intrinsics * cam;
    return {pix.x() / pix.z(), pix.y() / pix.z(), cam.z()};
}

double chamfer(const PointSet& p, const PointSet& q) {
    if (p.empty() || q.empty())
        throw Error(ErrorKind::argument, "empty point set");
    const KdTree tree_p(p.points);
    const KdTree tree_q(q.points);
    return 0.5 * (mean_nearest(p.points, tree_q) + mean_nearest(q.points, tree_p));
}

PointSet subsample(const PointSet& points, std::size_t max_points, std::uint64_t seed) {
    if (points.size() <= max_points)
        return points;
    std::vector<std::size_t> idx(points.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates, then restore the original order.
    for (std::size_t k = 0; k < max_points; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(max_points);
    std::sort(idx.begin(), idx.end());
    PointSet out;
    out.points.reserve(max_points);
    for (std::size_t i : idx) {
        out.points.push_back(points.points[i]);
        if (!points.provenance.empty())
            out.provenance.push_back(points.provenance[i]);
    }
    return out;
}

std::size_t AlignmentModel::inlier_count() const {
    return static_cast<std::size_t>(std::count(inliers.begin(), inliers.end(), true));
}

std::pair<double, double> fit_scale_shift(const std::vector<DepthSample>& samples,
                                          const std::vector<bool>& mask) {
    double n = 0, sx = 0, sy = 0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        if (!mask.empty() && !mask[k])
            continue;
        n += 1;
        sx += samples[k].predicted;
        sy += samples[k].target;
    }
    if (n < 2)
        throw Error(ErrorKind::argument, "least squares needs at least 2 samples");
    const double mx = sx / n;
    const double my = sy / n;
    double sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        if (!mask.empty() && !mask[k])
            continue;
        const double dx = samples[k].predicted - mx;
        sxx += dx * dx;
        sxy += dx * (samples[k].target - my);
    }
    if (sxx <= 0.0)
        throw Error(ErrorKind::argument, "rank deficient: predicted depths are identical");
    const double scale = sxy / sxx;
    return {scale, my - scale * mx};
}

AlignmentModel ransac_align(const std::vector<DepthSample>& samples, const RansacOptions& options) {
    const std::size_t n = samples.size();
    if (n < 2)
        throw Error(ErrorKind::argument, "ransac_align needs at least 2 correspondences");
    const bool all_same = std::all_of(samples.begin(), samples.end(), [&](const DepthSample& s) {
        return s.predicted == samples.front().predicted;
    });
    if (all_same)
        throw Error(ErrorKind::argument, "rank deficient: predicted depths are identical");

    double tol = 0.0;
    if (options.inlier_tol) {
        tol = *options.inlier_tol;
    } else {
        std::vector<double> targets;
        targets.reserve(n);
        for (const auto& s : samples)
            targets.push_back(std::abs(s.target));
        std::nth_element(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(n / 2), targets.end());
        tol = 0.02 * targets[n / 2];
    }
    if (!(tol > 0.0))
        throw Error(ErrorKind::argument, "inlier tolerance must be positive");

    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<bool> best_mask;
    std::size_t best_count = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<bool> mask(n);
    for (int it = 0; it < options.iterations; ++it) {
        const std::size_t a = pick(rng);
        const std::size_t b = pick(rng);
        const double dx = samples[b].predicted - samples[a].predicted;
        if (a == b || dx == 0.0)
            continue;
        const double scale = (samples[b].target - samples[a].target) / dx;
        if (!(scale > 0.0))
            continue;
        const double shift = samples[a].target - scale * samples[a].predicted;
        std::size_t count = 0;
        double cost = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double res = std::abs(samples[k].target - (scale * samples[k].predicted + shift));
            mask[k] = res <= tol;
            if (mask[k]) {
                ++count;
                cost += res;
            }
        }
        if (count > best_count || (count == best_count && cost < best_cost)) {
            best_count = count;
            best_cost = cost;
            best_mask = mask;
        }
    }
    if (best_count < 2)
        throw Error(ErrorKind::argument, "rank deficient: no valid two-point hypothesis");

    AlignmentModel model;
    std::tie(model.scale, model.shift) = fit_scale_shift(samples, best_mask);
    if (!(model.scale > 0.0))
        throw Error(ErrorKind::argument, "alignment produced a non-positive scale");
    model.inliers = best_mask;
    double sq = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (best_mask[k]) {
            const double res = samples[k].target - (model.scale * samples[k].predicted + model.shift);
            sq += res * res;
        }
    model.inlier_rmse = std::sqrt(sq / static_cast<double>(best_count));
    return model;
}

std::size_t covisible_count(const CameraParams& a, const CameraParams& b, int height, int width,
                            const PointSet& points) {
    auto inside = [&](const CameraParams& cam, const Eigen::Vector3d& x) {
        const Projection p = project(cam, x);
        return p.depth > 0.0 && p.u >= 0.0 && p.v >= 0.0 && p.u < width && p.v < height;
    };
    return static_cast<std::size_t>(std::count_if(points.points.begin(), points.points.end(),
                                                   [&](const auto& x) { return inside(a, x) && inside(b, x); }));
}

PointSet scene_points(const SceneBundle& scene, int stride) {
    PointSet all;
    for (int v = 0; v < scene.view_count(); ++v) {
        auto pts = unproject_all(scene.views[static_cast<std::size_t>(v)], v, stride);
        all.points.insert(all.points.end(), pts.points.begin(), pts.points.end());
        all.provenance.insert(all.provenance.end(), pts.provenance.begin(), pts.provenance.end());
    }
    return all;
}

ViewCluster sample_view_cluster(const SceneBundle& scene, int k, std::uint64_t seed,
                                const PointSet& points, std::size_t min_shared) {
    const int n = scene.view_count();
    if (k < 1 || k > n)
        throw Error(ErrorKind::argument, "cluster size must lie in [1, N]");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    ViewCluster cluster;
    cluster.views.push_back(pick(rng));
    for (int v = 0; v < n && static_cast<int>(cluster.views.size()) < k; ++v) {
        if (std::find(cluster.views.begin(), cluster.views.end(), v) != cluster.views.end())
            continue;
        const auto& cam = scene.views[static_cast<std::size_t>(v)].camera;
        const bool shares = std::all_of(cluster.views.begin(), cluster.views.end(), [&](int s) {
            return covisible_count(scene.views[static_cast<std::size_t>(s)].camera, cam, scene.height,
                                   scene.width, points) > min_shared;
        });
        if (shares)
            cluster.views.push_back(v);
    }
    cluster.complete = static_cast<int>(cluster.views.size()) == k;
    return cluster;
}

}  // namespace maskprior
