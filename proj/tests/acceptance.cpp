// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include "maskprior/eval.hpp"
#include "maskprior/geometry.hpp"
#include "maskprior/pipeline.hpp"
#include "maskprior/prior_assembly.hpp"
#include "maskprior/synth.hpp"
#include "maskprior/warmup.hpp"

#include "oracle.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <random>
#include <sys/wait.h>

using namespace maskprior;

namespace {

int failures = 0;

void verdict(int id, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!pass)
        ++failures;
}

std::string fmt(const char* f, double v) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

SynthSpec scene_spec(int k, double noise) {
    SynthSpec s;
    s.seed = 1000 + static_cast<std::uint64_t>(k);
    s.views = std::array<int, 3>{4, 6, 8}[static_cast<std::size_t>(k % 3)];
    s.transient_count = 1 + k % 3;
    const int total = 5 + (k * 7) % 6;  // 5..10
    s.static_count = total - s.transient_count;
    s.noise = noise;
    return s;
}

struct FixtureStats {
    int entities = 0;
    int correct = 0;
    double min_static_recall = 1.0;
    double max_transient_recall = 0.0;
    double max_seconds = 0.0;
    std::vector<std::string> notes;
};

FixtureStats run_fixtures(double noise, const testing::TempDir& tmp) {
    FixtureStats st;
    for (int k = 0; k < 20; ++k) {
        const auto spec = scene_spec(k, noise);
        const auto dir = tmp / ("scene_" + std::to_string(k) + "_" + fmt("%.1f", noise));
        const auto t0 = std::chrono::steady_clock::now();
        const auto truth = generate(spec, dir);
        const auto result = run_pipeline(dir, dir.string() + "_out", PipelineConfig{});
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        st.max_seconds = std::max(st.max_seconds, secs);
        const auto s = testing::score_against_truth(result, truth);
        st.entities += s.entities;
        st.correct += s.correct;
        st.min_static_recall = std::min(st.min_static_recall, s.min_static_recall);
        st.max_transient_recall = std::max(st.max_transient_recall, s.max_transient_recall);
        for (const auto& m : s.mismatches)
            st.notes.push_back("seed " + std::to_string(spec.seed) + " " + m);
    }
    return st;
}

void criteria_1_2() {
    testing::TempDir tmp("accept_fixtures");
    const auto clean = run_fixtures(0.0, tmp);
    const auto noisy = run_fixtures(0.2, tmp);
    const double acc0 = static_cast<double>(clean.correct) / clean.entities;
    const double acc2 = static_cast<double>(noisy.correct) / noisy.entities;
    const double worst = std::max(clean.max_seconds, noisy.max_seconds);
    for (const auto& n : clean.notes)
        std::printf("  noise 0 mismatch: %s\n", n.c_str());
    verdict(1, acc0 == 1.0 && acc2 >= 0.95 && worst < 10.0,
            "accuracy noise0 " + fmt("%.4f", acc0) + " (" + std::to_string(clean.correct) + "/" +
                std::to_string(clean.entities) + "), noise0.2 " + fmt("%.4f", acc2) + " (need >= 0.95), max " +
                fmt("%.2f", worst) + " s/scene (need < 10)");
    verdict(2, clean.min_static_recall >= 0.9 && clean.max_transient_recall <= 0.2,
            "min static recall " + fmt("%.4f", clean.min_static_recall) + " (>= 0.9), max transient recall " +
                fmt("%.4f", clean.max_transient_recall) + " (<= 0.2)");
}

void criterion_3() {
    double worst = 0.0;
    for (double cd : {0.0, 0.05, 0.1, 0.15})
        worst = std::max(worst, std::abs(*match_score(cd, 0.2) - (0.2 - cd) / 0.2));
    const bool rejected = !match_score(0.2, 0.2).has_value();
    verdict(3, worst <= 1e-9 && rejected,
            "max |score - (0.2-CD)/0.2| = " + fmt("%.3g", worst) + ", CD=0.2 " + (rejected ? "rejected" : "accepted"));
}

double brute_chamfer(const PointSet& p, const PointSet& q) {
    auto one_way = [](const PointSet& a, const PointSet& b) {
        double sum = 0.0;
        for (const auto& x : a.points) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& y : b.points) {
                const double dx = x.x() - y.x(), dy = x.y() - y.y(), dz = x.z() - y.z();
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            sum += std::sqrt(best);
        }
        return sum / static_cast<double>(a.size());
    };
    return 0.5 * (one_way(p, q) + one_way(q, p));
}

void criterion_4() {
    std::mt19937_64 rng(404);
    std::uniform_int_distribution<std::size_t> size(1, 512);
    std::normal_distribution<double> g(0.0, 1.0);
    int exact = 0;
    for (int t = 0; t < 100; ++t) {
        PointSet p, q;
        for (std::size_t k = size(rng); k > 0; --k)
            p.points.emplace_back(g(rng), g(rng), g(rng));
        for (std::size_t k = size(rng); k > 0; --k)
            q.points.emplace_back(g(rng) + 0.3, g(rng), 0.5 * g(rng));
        exact += chamfer(p, q) == brute_chamfer(p, q);
    }
    verdict(4, exact == 100, std::to_string(exact) + "/100 random pairs equal the exhaustive oracle exactly");
}

void criterion_5() {
    int recovered = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> depth(0.5, 10.0), sc(0.5, 3.0), sh(0.5, 2.0), wild(0.0, 40.0);
        std::normal_distribution<double> noise(0.0, 0.005);
        const double scale = sc(rng), shift = sh(rng);
        std::vector<DepthSample> s;
        for (int k = 0; k < 400; ++k) {
            const double x = depth(rng);
            s.push_back({x, k % 10 < 3 ? wild(rng) : scale * x + shift + noise(rng)});
        }
        const auto m = ransac_align(s, {.iterations = 500, .inlier_tol = std::nullopt, .seed = seed});
        if (std::abs(m.scale - scale) / scale < 0.01 && std::abs(m.shift - shift) / shift < 0.01)
            ++recovered;
    }

    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> depth(1.0, 10.0);
    std::normal_distribution<double> noise(0.0, 0.001);
    std::vector<DepthSample> s;
    for (int k = 0; k < 200; ++k) {
        const double x = depth(rng);
        s.push_back({x, 1.3 * x - 0.2 + noise(rng)});
    }
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& d : s) {
        n += 1;
        sx += d.predicted;
        sy += d.target;
        sxx += d.predicted * d.predicted;
        sxy += d.predicted * d.target;
    }
    const double ls_scale = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double ls_shift = (sy - ls_scale * sx) / n;
    const auto m = ransac_align(s);
    const double err = std::max(std::abs(m.scale - ls_scale), std::abs(m.shift - ls_shift));
    verdict(5, recovered >= 99 && err <= 1e-9,
            std::to_string(recovered) + "/100 seeds within 1% under 30% outliers (need >= 99), outlier-free |diff| " +
                fmt("%.3g", err) + " (<= 1e-9)");
}

void criterion_6() {
    const auto fx = generate_warmup_frames(WarmupFixtureSpec{.frames = 40});
    const int h = fx.ground_truth.height(), w = fx.ground_truth.width();
    // Prior: everything static except a stripe; entities: the distractor block and a second block.
    PriorMask prior;
    prior.static_map = BinaryMap(h, w, 1, 1);
    for (int c = 0; c < w; ++c)
        prior.static_map(h - 1, c) = 0;
    std::vector<EntityMask> entities;
    EntityMask a{1, fx.distractor, static_cast<std::int64_t>(count_set(fx.distractor))};
    EntityMask b{2, BinaryMap(h, w), 0};
    for (int r = 48; r < 60; ++r)
        for (int c = 4; c < 16; ++c)
            b.pixels(r, c) = 1;
    b.pixel_count = 144;
    entities = {a, b};

    WarmupScheduler sched(prior, entities, 500, {});
    int prior_ok = 0, model_ok = 0;
    for (int it = 1; it <= 600; ++it) {
        const auto frame = ResidualFrame::from_images(fx.renders[static_cast<std::size_t>(it) % fx.renders.size()],
                                                      fx.ground_truth);
        const BinaryMap m = sched.step(frame);
        if (it <= 500) {
            prior_ok += m == prior.static_map;
            continue;
        }
        BinaryMap expect(h, w);
        const auto& prob = sched.state().mask_prob;
        for (std::size_t k = 0; k < expect.size(); ++k)
            expect.data()[k] = prob.data()[k] >= 0.5;
        for (const auto& e : entities) {
            std::size_t ones = 0, total = 0;
            for (std::size_t k = 0; k < expect.size(); ++k)
                if (e.pixels.data()[k]) {
                    ++total;
                    ones += prob.data()[k] >= 0.5;
                }
            for (std::size_t k = 0; k < expect.size(); ++k)
                if (e.pixels.data()[k])
                    expect.data()[k] = 2 * ones >= total;
        }
        model_ok += m == expect && m != prior.static_map;
    }
    verdict(6, prior_ok == 500 && model_ok == 100,
            "prior returned bit-exactly on " + std::to_string(prior_ok) + "/500 warm-up iterations, snapped model mask on " +
                std::to_string(model_ok) + "/100 later iterations");
}

void criterion_7() {
    const auto fx = generate_warmup_frames(WarmupFixtureSpec{});
    WarmupState s;
    for (int it = 0; it < 200; ++it)
        s = update_mask_model(s, ResidualFrame::from_images(fx.renders[static_cast<std::size_t>(it)], fx.ground_truth));
    double d = 0, b = 0;
    std::size_t nd = 0, nb = 0;
    for (std::size_t k = 0; k < s.mask_prob.size(); ++k)
        if (fx.distractor.data()[k]) {
            d += s.mask_prob.data()[k];
            ++nd;
        } else {
            b += s.mask_prob.data()[k];
            ++nb;
        }
    d /= static_cast<double>(nd);
    b /= static_cast<double>(nb);

    WarmupFixtureSpec uniform_spec;
    uniform_spec.distractor_height = 0;
    const auto uf = generate_warmup_frames(uniform_spec);
    WarmupState u;
    for (int it = 0; it < 200; ++it)
        u = update_mask_model(u, ResidualFrame::from_images(uf.renders[static_cast<std::size_t>(it)], uf.ground_truth));
    double um = 0;
    for (double p : u.mask_prob.data())
        um += p;
    um /= static_cast<double>(u.mask_prob.size());
    verdict(7, d < 0.3 && b > 0.7 && um > 0.9,
            "distractor mean M " + fmt("%.4f", d) + " (< 0.3), background " + fmt("%.4f", b) + " (> 0.7), uniform " +
                fmt("%.4f", um) + " (> 0.9)");
}

void criterion_8() {
    std::mt19937_64 rng(808);
    std::bernoulli_distribution bit(0.45);
    std::uniform_int_distribution<int> byte(0, 255);
    int iou_exact = 0, psnr_ok = 0;
    double worst_db = 0.0;
    for (int t = 0; t < 100; ++t) {
        BinaryMap a(17, 23), b(17, 23);
        for (std::size_t k = 0; k < a.size(); ++k) {
            a.data()[k] = bit(rng);
            b.data()[k] = bit(rng);
        }
        std::int64_t inter = 0, uni = 0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            inter += a.data()[k] && b.data()[k];
            uni += a.data()[k] || b.data()[k];
        }
        const auto c = iou_counts(a, b);
        iou_exact += c.intersection == inter && c.union_count == uni &&
                     iou(a, b) == static_cast<double>(inter) / static_cast<double>(uni);

        Image x(9, 11, 3), y(9, 11, 3);
        for (std::size_t k = 0; k < x.size(); ++k) {
            x.data()[k] = static_cast<std::uint8_t>(byte(rng));
            y.data()[k] = static_cast<std::uint8_t>(byte(rng));
        }
        double mse = 0;
        for (std::size_t k = 0; k < x.size(); ++k)
            mse += (double(x.data()[k]) - y.data()[k]) * (double(x.data()[k]) - y.data()[k]);
        mse /= static_cast<double>(x.size());
        const double diff = std::abs(psnr(x, y) - 10.0 * std::log10(255.0 * 255.0 / mse));
        worst_db = std::max(worst_db, diff);
        psnr_ok += diff <= 1e-9;
    }
    BinaryMap left(10, 10), top(10, 10);
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c) {
            left(r, c) = c < 5;
            top(r, c) = r < 5;
        }
    const auto half = iou_counts(left, top);
    const bool third = half.intersection == 25 && half.union_count == 75;
    verdict(8, iou_exact == 100 && psnr_ok == 100 && third,
            "IoU exact on " + std::to_string(iou_exact) + "/100, PSNR within 1e-9 dB on " + std::to_string(psnr_ok) +
                "/100 (worst " + fmt("%.3g", worst_db) + "), half-overlap IoU " + std::to_string(half.intersection) +
                "/" + std::to_string(half.union_count));
}

void criterion_9() {
    const PipelineConfig c;
    const double n = 6;
    const bool ok = c.recall_threshold == 0.5 && c.cd_threshold == 0.2 && c.score_frac * n == 0.5 * n &&
                    c.min_region_pixels == 20000 && c.warmup_iters == 500 && kDefaultWarmupIterations == 500;
    verdict(9, ok,
            "recall " + fmt("%g", c.recall_threshold) + ", CD " + fmt("%g", c.cd_threshold) + ", score " +
                fmt("%g", c.score_frac) + "*N, VLM floor " + std::to_string(c.min_region_pixels) + " px, warm-up " +
                std::to_string(c.warmup_iters));
}

int cli(const std::string& args) {
    const std::string cmd = std::string(MASKPRIOR_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_10() {
    testing::TempDir tmp("accept_det");
    const auto s1 = (tmp / "s1").string(), s2 = (tmp / "s2").string();
    bool ok = cli("synth --out " + s1 + " --seed 21 --views 6 --static 6 --transient 2 --noise 0.2") == 0 &&
              cli("synth --out " + s2 + " --seed 21 --views 6 --static 6 --transient 2 --noise 0.2") == 0;
    ok = ok && testing::snapshot(s1) == testing::snapshot(s2);
    const bool scenes = ok;
    ok = ok && cli("run --scene " + s1 + " --out " + (tmp / "o1").string()) == 0 &&
         cli("run --scene " + s1 + " --out " + (tmp / "o2").string()) == 0;
    const auto a = testing::snapshot(tmp / "o1");
    ok = ok && !a.empty() && a == testing::snapshot(tmp / "o2");
    verdict(10, ok,
            std::string("synth directories ") + (scenes ? "identical" : "differ") + ", run directories " +
                (ok ? "bit-identical" : "differ") + " (" + std::to_string(a.size()) + " files)");
}

}  // namespace

int main() {
    try {
        criteria_1_2();
        criterion_3();
        criterion_4();
        criterion_5();
        criterion_6();
        criterion_7();
        criterion_8();
        criterion_9();
        criterion_10();
    } catch (const std::exception& e) {
        std::printf("[FAIL] harness aborted: %s\n", e.what());
        return 1;
    }
    std::printf("[SKIP] criterion 11: published PSNR/IoU tables need pretrained models, a commercial VLM "
                "and a GPU trainer; no desk fixture exists\n");
    std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
