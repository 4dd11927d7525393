#include "maskprior/geometry.hpp"
#include "support.hpp"

#include <Eigen/Geometry>
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace maskprior;

namespace {

// Exhaustive nearest-neighbour oracle.
double brute_chamfer(const std::vector<Eigen::Vector3d>& p, const std::vector<Eigen::Vector3d>& q) {
    auto one_way = [](const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
        double sum = 0.0;
        for (const auto& x : a) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& y : b) {
                const double dx = x.x() - y.x(), dy = x.y() - y.y(), dz = x.z() - y.z();
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            sum += std::sqrt(best);
        }
        return sum / static_cast<double>(a.size());
    };
    return 0.5 * (one_way(p, q) + one_way(q, p));
}

PointSet random_points(std::size_t n, std::mt19937_64& rng, double spread = 1.0) {
    std::normal_distribution<double> g(0.0, spread);
    PointSet s;
    for (std::size_t k = 0; k < n; ++k)
        s.points.emplace_back(g(rng), g(rng), g(rng));
    return s;
}

CameraParams posed_camera(double yaw, const Eigen::Vector3d& t) {
    CameraParams c = testing::simple_camera(120.0, 32.0, 24.0);
    c.extrinsics.leftCols<3>() = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix();
    c.extrinsics.col(3) = t;
    return c;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("unprojection follows the pinhole formula") {
    ViewRecord v;
    v.camera = posed_camera(0.3, {0.1, -0.2, 0.5});
    v.depth = DepthMap(48, 64, 1, 0.0f);
    v.depth(10, 20) = 2.5f;
    v.depth(40, 3) = 1.25f;
    BinaryMap all(48, 64, 1, 1);
    const auto pts = unproject(v, all, 3);
    REQUIRE(pts.size() == 2);  // zero depth is skipped
    const Eigen::Matrix3d K = v.camera.intrinsics;
    const double x = (20.5 - K(0, 2)) / K(0, 0) * 2.5, y = (10.5 - K(1, 2)) / K(1, 1) * 2.5;
    const Eigen::Vector3d expected = v.camera.rotation().transpose() * (Eigen::Vector3d(x, y, 2.5) - v.camera.translation());
    CHECK((pts.points[0] - expected).norm() < 1e-12);
    CHECK(pts.provenance[0].view == 3);
    CHECK(pts.provenance[1].row == 40);

    // project inverts unproject
    const auto p = project(v.camera, pts.points[1]);
    CHECK(p.u == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(p.v == doctest::Approx(40.5).epsilon(1e-12));
    CHECK(p.depth == doctest::Approx(1.25).epsilon(1e-12));

    v.camera.intrinsics(0, 0) = 0.0;
    CHECK_THROWS_AS(unproject(v, all), Error);
}

TEST_CASE("round trip through projection holds for random pixels") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.2, 5.0);
    ViewRecord v;
    v.camera = posed_camera(-0.7, {0.3, 0.1, -0.4});
    v.depth = DepthMap(48, 64);
    for (auto& d : v.depth.data())
        d = static_cast<float>(u(rng));
    const auto pts = unproject_all(v, 0, 5);
    CHECK(pts.size() == 10 * 13);
    for (std::size_t k = 0; k < pts.size(); ++k) {
        const auto p = project(v.camera, pts.points[k]);
        CHECK(std::abs(p.u - (pts.provenance[k].col + 0.5)) < 1e-9);
        CHECK(std::abs(p.v - (pts.provenance[k].row + 0.5)) < 1e-9);
    }
}

TEST_CASE("kd-tree Chamfer equals the exhaustive oracle exactly") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::size_t> size(1, 300);
    for (int trial = 0; trial < 40; ++trial) {
        const auto p = random_points(size(rng), rng);
        const auto q = random_points(size(rng), rng, 0.5);
        CHECK(chamfer(p, q) == brute_chamfer(p.points, q.points));
    }
}

TEST_CASE("Chamfer properties") {
    std::mt19937_64 rng(4);
    const auto p = random_points(100, rng);
    const auto q = random_points(80, rng);
    CHECK(chamfer(p, p) == 0.0);
    CHECK(chamfer(p, q) == doctest::Approx(chamfer(q, p)).epsilon(1e-14));
    // A rigid translation by d of a single point gives distance d.
    PointSet a, b;
    a.points = {{0, 0, 0}};
    b.points = {{0, 0.3, 0.4}};
    CHECK(chamfer(a, b) == doctest::Approx(0.5));
    PointSet empty;
    CHECK_THROWS_AS(chamfer(p, empty), Error);
}

TEST_CASE("subsampling is seeded, bounded and order preserving") {
    std::mt19937_64 rng(1);
    auto p = random_points(500, rng);
    for (std::size_t k = 0; k < p.size(); ++k)
        p.provenance.push_back({0, static_cast<int>(k), 0});
    const auto a = subsample(p, 64, 77);
    const auto b = subsample(p, 64, 77);
    const auto c = subsample(p, 64, 78);
    REQUIRE(a.size() == 64);
    CHECK(a.points == b.points);
    CHECK(a.points != c.points);
    for (std::size_t k = 1; k < a.size(); ++k)
        CHECK(a.provenance[k - 1].row < a.provenance[k].row);
    CHECK(subsample(p, 1000, 1).size() == 500);
}

TEST_CASE("outlier-free RANSAC matches closed-form least squares") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(1.0, 10.0);
    std::normal_distribution<double> noise(0.0, 0.001);
    std::vector<DepthSample> s;
    for (int k = 0; k < 200; ++k) {
        const double x = u(rng);
        s.push_back({x, 1.7 * x + 0.4 + noise(rng)});
    }
    // Normal equations as the oracle.
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& d : s) {
        n += 1;
        sx += d.predicted;
        sy += d.target;
        sxx += d.predicted * d.predicted;
        sxy += d.predicted * d.target;
    }
    const double scale = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double shift = (sy - scale * sx) / n;
    const auto m = ransac_align(s);
    CHECK(m.inlier_count() == 200);
    CHECK(std::abs(m.scale - scale) < 1e-9);
    CHECK(std::abs(m.shift - shift) < 1e-9);
}

TEST_CASE("RANSAC rejects gross outliers") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(1.0, 10.0), wild(1.0, 20.0);
    std::vector<DepthSample> s;
    for (int k = 0; k < 300; ++k) {
        const double x = u(rng);
        const double line = 0.5 * x + 2.0;
        s.push_back({x, k % 10 < 3 ? line + (k % 2 ? wild(rng) : -0.2 - 0.05 * wild(rng)) : line});
    }
    const auto m = ransac_align(s, {.iterations = 500, .inlier_tol = std::nullopt, .seed = 3});
    CHECK(m.scale == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(m.shift == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(m.inlier_count() == 210);
}

TEST_CASE("RANSAC preconditions") {
    CHECK_THROWS_AS(ransac_align({{1.0, 2.0}}), Error);
    CHECK_THROWS_AS(ransac_align({{1.0, 2.0}, {1.0, 3.0}, {1.0, 4.0}}), Error);
    // Only negative-scale hypotheses exist.
    CHECK_THROWS_AS(ransac_align({{1.0, 3.0}, {2.0, 2.0}, {3.0, 1.0}}, {.iterations = 200, .inlier_tol = 0.01, .seed = 0}),
                    Error);
}

TEST_CASE("co-visibility and view clusters") {
    // Three views: 0 and 1 look at the same region, 2 looks the other way.
    SceneBundle scene;
    scene.height = 24;
    scene.width = 32;
    scene.patch_size = 8;
    for (int v = 0; v < 3; ++v) {
        ViewRecord view;
        view.camera = v == 2 ? posed_camera(3.14159265358979, {0, 0, 0}) : posed_camera(0.05 * v, {0, 0, 0});
        view.camera.intrinsics << 20, 0, 16, 0, 20, 12, 0, 0, 1;
        view.depth = DepthMap(24, 32, 1, 3.0f);
        scene.views.push_back(view);
    }
    const auto pts = scene_points(scene, 2);
    CHECK(covisible_count(scene.views[0].camera, scene.views[1].camera, 24, 32, pts) > 100);
    CHECK(covisible_count(scene.views[0].camera, scene.views[2].camera, 24, 32, pts) == 0);

    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const auto two = sample_view_cluster(scene, 2, seed, pts);
        CHECK(sample_view_cluster(scene, 2, seed, pts).views == two.views);
        if (two.views.front() == 2) {
            CHECK_FALSE(two.complete);
            continue;
        }
        CHECK(two.complete);
        CHECK(two.views.size() == 2);
        CHECK(std::find(two.views.begin(), two.views.end(), 2) == two.views.end());
        CHECK_FALSE(sample_view_cluster(scene, 3, seed, pts).complete);
    }
    CHECK_THROWS_AS(sample_view_cluster(scene, 4, 0, pts), Error);
}

}  // TEST_SUITE
