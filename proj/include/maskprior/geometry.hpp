#pragma once

#include "maskprior/core.hpp"
#include "maskprior/scene_io.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace maskprior {

struct PixelRef {
    int view = 0;
    int row = 0;
    int col = 0;
};

// World-frame points, optionally tagged with the pixel each one was unprojected from.
struct PointSet {
    std::vector<Eigen::Vector3d> points;
    std::vector<PixelRef> provenance;  // empty, or one entry per point

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }
};

// Pixel (col, row) with depth d maps to X = R^T (K^-1 [col + 0.5, row + 0.5, 1]^T d - t).
// Pixels with zero depth are skipped.
PointSet unproject(const ViewRecord& view, const BinaryMap& region, int view_index = 0);

// Same, over every pixel on a stride grid.
PointSet unproject_all(const ViewRecord& view, int view_index, int stride = 1);

// Pixel coordinates (continuous, pixel centers at +0.5) and camera-frame depth of a point.
struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
};
Projection project(const CameraParams& camera, const Eigen::Vector3d& world);

// Symmetric mean nearest-neighbour distance (not squared).
double chamfer(const PointSet& p, const PointSet& q);

// Seeded uniform subsample without replacement, original order preserved.
PointSet subsample(const PointSet& points, std::size_t max_points, std::uint64_t seed);

struct DepthSample {
    double predicted = 0.0;
    double target = 0.0;
};

struct RansacOptions {
    int iterations = 500;
    // Absolute residual tolerance; unset means 2% of the median target depth.
    std::optional<double> inlier_tol;
    std::uint64_t seed = 0;
};

struct AlignmentModel {
    double scale = 1.0;
    double shift = 0.0;
    std::vector<bool> inliers;
    double inlier_rmse = 0.0;

    std::size_t inlier_count() const;
};

// Robust fit of target = scale * predicted + shift.
AlignmentModel ransac_align(const std::vector<DepthSample>& samples, const RansacOptions& options = {});

// Ordinary least squares on the flagged samples (all when mask is empty).
std::pair<double, double> fit_scale_shift(const std::vector<DepthSample>& samples,
                                          const std::vector<bool>& mask = {});

std::size_t covisible_count(const CameraParams& a, const CameraParams& b, int height, int width,
                            const PointSet& points);

struct ViewCluster {
    std::vector<int> views;
    bool complete = true;  // false when fewer than k views could be gathered
};

// Seeded first view, then scan-order growth by views sharing more than min_shared points with
// every member.
ViewCluster sample_view_cluster(const SceneBundle& scene, int k, std::uint64_t seed,
                                const PointSet& points, std::size_t min_shared = 20);

// Depth points of every view on a stride grid, for co-visibility tests.
PointSet scene_points(const SceneBundle& scene, int stride);

}  // namespace maskprior
