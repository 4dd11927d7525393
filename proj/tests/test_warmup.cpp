#include "maskprior/warmup.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace maskprior;

namespace {

FloatImage random_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    FloatImage img(h, w, 3);
    for (auto& v : img.data())
        v = u(rng);
    return img;
}

// Direct 2D-window SSIM with zero padding.
double ssim_oracle(const FloatImage& a, const FloatImage& b) {
    const int h = a.height(), w = a.width();
    double g[11][11], sum = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            sum += g[i][j];
        }
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const int rr = r + i - 5, cc = c + j - 5;
                        if (rr < 0 || cc < 0 || rr >= h || cc >= w)
                            continue;
                        const double wt = g[i][j] / sum;
                        const double x = a(rr, cc, ch), y = b(rr, cc, ch);
                        mx += wt * x;
                        my += wt * y;
                        sxx += wt * x * x;
                        syy += wt * y * y;
                        sxy += wt * x * y;
                    }
                const double c1 = 1e-4, c2 = 9e-4;
                total += ((2 * mx * my + c1) * (2 * (sxy - mx * my) + c2)) /
                         ((mx * mx + my * my + c1) * (sxx - mx * mx + syy - my * my + c2));
            }
    return total / (3.0 * h * w);
}

Raster<double> bimodal_residual(int h, int w, double low, double high) {
    Raster<double> r(h, w, 1, low);
    for (int y = h / 4; y < h / 2; ++y)
        for (int x = w / 4; x < w / 2; ++x)
            r(y, x) = high;
    return r;
}

EntityMask block_mask(int h, int w, int id, int r0, int c0, int r1, int c1) {
    EntityMask m{id, BinaryMap(h, w), 0};
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
            m.pixels(r, c) = 1;
    m.pixel_count = static_cast<std::int64_t>(count_set(m.pixels));
    return m;
}

}  // namespace

TEST_SUITE("warmup") {

TEST_CASE("box blur matches a clipped-window mean") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Raster<double> in(13, 17);
    for (auto& v : in.data())
        v = u(rng);
    for (int radius : {0, 1, 3, 20}) {
        const auto out = box_blur(in, radius);
        for (int r = 0; r < 13; ++r)
            for (int c = 0; c < 17; ++c) {
                double s = 0;
                int n = 0;
                for (int rr = r - radius; rr <= r + radius; ++rr)
                    for (int cc = c - radius; cc <= c + radius; ++cc)
                        if (in.in_bounds(rr, cc)) {
                            s += in(rr, cc);
                            ++n;
                        }
                CHECK(out(r, c) == doctest::Approx(s / n).epsilon(1e-12));
            }
    }
    CHECK_THROWS_AS(box_blur(in, -1), Error);
}

TEST_CASE("SSIM agrees with a direct windowed oracle") {
    const auto a = random_image(20, 23, 1);
    auto b = a;
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto& v : b.data())
        v = std::clamp(v + n(rng), 0.0, 1.0);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-10);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, b) < 1.0);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK_THROWS_AS(ssim(a, random_image(20, 22, 1)), Error);
}

TEST_CASE("masked image loss") {
    const auto a = random_image(16, 16, 4);
    const auto b = random_image(16, 16, 5);
    BinaryMap all(16, 16, 1, 1), none(16, 16, 1, 0);
    CHECK(image_loss(a, a, all) == doctest::Approx(0.0));
    CHECK(image_loss(a, b, none) == doctest::Approx(0.0));
    double l1 = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
        l1 += std::abs(a.data()[k] - b.data()[k]);
    l1 /= static_cast<double>(a.size());
    CHECK(image_loss(a, b, all) == doctest::Approx(0.8 * l1 + 0.2 * (1 - ssim(a, b))).epsilon(1e-12));
    CHECK(image_loss(a, b, all, 0.0) == doctest::Approx(l1).epsilon(1e-12));
    CHECK_THROWS_AS(image_loss(a, b, BinaryMap(4, 4)), Error);
}

TEST_CASE("residual frames") {
    FloatImage r(2, 2, 3, 0.5), g(2, 2, 3, 0.5);
    r(0, 1, 0) = 0.8;
    r(0, 1, 2) = 0.2;
    const auto f = ResidualFrame::from_images(r, g, 0);
    CHECK(f.residual(0, 1) == doctest::Approx(0.2));
    CHECK(f.residual(1, 1) == 0.0);
    CHECK(f.blurred_residual == f.residual);
    CHECK_THROWS_AS(ResidualFrame::from_residual(Raster<double>(2, 2, 1, -1.0)), Error);
    CHECK(to_float(Image(1, 1, 3, 255))(0, 0, 2) == 1.0);
}

TEST_CASE("mask model gradient matches finite differences") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Raster<double> res(24, 24);
    for (auto& v : res.data())
        v = u(rng);
    const auto frame = ResidualFrame::from_residual(res, 3);
    WarmupState s;
    s.weights = {-1.5, 0.7, 0.3};
    const double reg = 0.4;
    const auto next = update_mask_model(s, frame, {reg, 0.1, 3});
    for (std::size_t i = 0; i < 3; ++i) {
        auto wp = s.weights, wm = s.weights;
        const double h = 1e-6;
        wp[i] += h;
        wm[i] -= h;
        const double fd = (mask_model_loss(wp, frame, reg) - mask_model_loss(wm, frame, reg)) / (2 * h);
        const double analytic = next.adam_m[i] / 0.1;  // first moment after one step is (1 - beta1) g
        CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
    }
    CHECK(next.adam_steps == 1);
    CHECK(next.iteration == s.iteration);
    CHECK(next.mask_loss == doctest::Approx(mask_model_loss(next.weights, frame, reg)));
}

TEST_CASE("the mask model separates a bimodal residual") {
    const auto frame = ResidualFrame::from_residual(bimodal_residual(32, 32, 0.01, 0.5));
    WarmupState s;
    MaskModelOptions opt;
    opt.reg_weight = 0.25;
    double first = 0;
    for (int k = 0; k < 300; ++k) {
        s = update_mask_model(s, frame, opt);
        if (k == 0)
            first = s.mask_loss;
    }
    CHECK(s.mask_loss < first);
    CHECK(s.mask_prob(0, 0) > 0.5);
    CHECK(s.mask_prob(31, 31) > 0.5);
    CHECK(s.mask_prob(10, 10) < 0.5);
}

TEST_CASE("the two passes optimise different terms") {
    const auto mask_terms = mask_model_loss_terms();
    const auto scene_terms = scene_model_loss_terms();
    CHECK(mask_terms == std::vector<std::string>{"masked_image_loss", "mask_regularizer"});
    CHECK(scene_terms == std::vector<std::string>{"masked_image_loss"});
}

TEST_CASE("effective mask switches after the warm-up boundary") {
    PriorMask prior;
    prior.static_map = BinaryMap(4, 4, 1, 1);
    prior.static_map(0, 0) = 0;
    WarmupState s;
    s.mask_prob = Raster<double>(4, 4, 1, 0.2);
    s.mask_prob(3, 3) = 0.5;
    const std::vector<EntityMask> none;

    s.iteration = 500;
    CHECK(effective_mask(s, &prior, none, 500) == prior.static_map);
    s.iteration = 501;
    const auto after = effective_mask(s, &prior, none, 500);
    CHECK(count_set(after) == 1);
    CHECK(after(3, 3) == 1);  // 0.5 binarises to inlier

    s.iteration = 1;
    CHECK_THROWS_AS(effective_mask(s, nullptr, none, 500), Error);
    s.iteration = 0;
    CHECK_THROWS_AS(effective_mask(s, &prior, none, 500), Error);
}

TEST_CASE("entities take their majority value after warm-up") {
    WarmupState s;
    s.iteration = 2;
    s.mask_prob = Raster<double>(4, 4, 1, 0.9);
    // Entity 1: 3 of 4 pixels outliers. Entity 2: a 2-2 tie.
    s.mask_prob(0, 0) = s.mask_prob(0, 1) = s.mask_prob(1, 0) = 0.1;
    s.mask_prob(2, 2) = s.mask_prob(2, 3) = 0.1;
    const std::vector<EntityMask> ents{block_mask(4, 4, 1, 0, 0, 2, 2), block_mask(4, 4, 2, 2, 2, 4, 4)};
    PriorMask prior;
    prior.static_map = BinaryMap(4, 4, 1, 1);
    const auto m = effective_mask(s, &prior, ents, 1);
    CHECK(m(1, 1) == 0);
    CHECK(m(0, 0) == 0);
    CHECK(m(2, 2) == 1);
    CHECK(m(3, 3) == 1);
    CHECK(m(0, 3) == 1);
    CHECK(count_set(m) == 12);
}

TEST_CASE("scheduler follows the prior during warm-up and the model afterwards") {
    const int h = 32, w = 32;
    const auto res = bimodal_residual(h, w, 0.01, 0.5);
    const auto frame = ResidualFrame::from_residual(res);
    PriorMask prior;
    prior.static_map = BinaryMap(h, w, 1, 1);
    const auto ent = block_mask(h, w, 3, 8, 8, 16, 16);
    for (int r = 8; r < 16; ++r)
        for (int c = 8; c < 16; ++c)
            prior.static_map(r, c) = 0;
    MaskModelOptions opt;
    opt.reg_weight = 0.25;
    WarmupScheduler sched(prior, {ent}, 200, opt);
    for (int k = 1; k <= 200; ++k) {
        const auto& m = sched.step(frame);
        REQUIRE(m == prior.static_map);
    }
    CHECK(sched.state().iteration == 200);
    const auto& after = sched.step(frame);
    CHECK(sched.state().iteration == 201);
    CHECK(after(0, 0) == 1);
    CHECK(after(10, 10) == 0);
    REQUIRE(sched.log().size() == 201);
    CHECK(sched.log().front().iteration == 1);
    CHECK(sched.log().back().effective_fraction == doctest::Approx(1.0 - 64.0 / 1024.0));
    CHECK(sched.log().back().training_loss == 0.0);  // no render attached
}

TEST_CASE("scheduler reports the training loss on rendered frames") {
    const auto gt = random_image(16, 16, 21);
    auto render = gt;
    render(0, 0, 0) = 1.0 - render(0, 0, 0);
    const auto frame = ResidualFrame::from_images(render, gt);
    PriorMask prior;
    prior.static_map = BinaryMap(16, 16, 1, 1);
    WarmupScheduler sched(prior, {}, 10, {});
    sched.step(frame);
    CHECK(sched.state().training_loss == doctest::Approx(image_loss(render, gt, prior.static_map)));
    CHECK(sched.state().training_loss > 0.0);
}

}  // TEST_SUITE
