#include "maskprior/synth.hpp"

#include "oracle.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace maskprior;

TEST_SUITE("synth") {

TEST_CASE("a generated scene loads cleanly and matches its labels") {
    testing::TempDir tmp("synth");
    SynthSpec spec;
    spec.seed = 7;
    spec.views = 4;
    spec.static_count = 5;
    spec.transient_count = 1;
    const auto dir = tmp / "scene";
    const auto truth = generate(spec, dir);

    const auto scene = load_scene(dir);
    CHECK(scene.warnings.empty());
    CHECK(scene.view_count() == 4);
    CHECK(scene.height == 224);
    CHECK(scene.patch_size == 14);
    REQUIRE(truth.boxes.size() == 6);
    CHECK(std::count_if(truth.boxes.begin(), truth.boxes.end(), [](const SynthBox& b) { return b.transient; }) == 1);

    const auto reread = load_truth(dir);
    REQUIRE(reread.entities.size() == 4);
    for (int v = 0; v < 4; ++v) {
        const auto& view = scene.views[static_cast<std::size_t>(v)];
        CHECK(view.entity_masks.size() == reread.entities[static_cast<std::size_t>(v)].size());
        BinaryMap transient(scene.height, scene.width);
        for (const auto& m : view.entity_masks) {
            const auto& t = reread.entities[static_cast<std::size_t>(v)].at(m.entity_id);
            CHECK(t.is_static == !truth.boxes[static_cast<std::size_t>(t.object)].transient);
            if (!t.is_static)
                for (std::size_t k = 0; k < m.pixels.size(); ++k)
                    transient.data()[k] |= m.pixels.data()[k];
        }
        CHECK(transient == reread.gt_transient[static_cast<std::size_t>(v)]);
        CHECK(transient == truth.gt_transient[static_cast<std::size_t>(v)]);
        // The top-left token never carries an entity.
        for (int r = 0; r < 14; ++r)
            for (int c = 0; c < 14; ++c)
                for (const auto& m : view.entity_masks)
                    REQUIRE(m.pixels(r, c) == 0);
    }
}

TEST_CASE("generation is deterministic per seed") {
    testing::TempDir tmp("synth_det");
    SynthSpec spec;
    spec.seed = 3;
    spec.views = 4;
    spec.noise = 0.2;
    generate(spec, tmp / "a");
    generate(spec, tmp / "b");
    CHECK(testing::snapshot(tmp / "a") == testing::snapshot(tmp / "b"));
    spec.seed = 4;
    generate(spec, tmp / "c");
    CHECK(testing::snapshot(tmp / "a") != testing::snapshot(tmp / "c"));
}

TEST_CASE("noise-free scenes separate static from transient entities") {
    testing::TempDir tmp("synth_oracle");
    SynthSpec spec;
    spec.seed = 11;
    spec.views = 6;
    spec.static_count = 5;
    spec.transient_count = 2;
    const auto truth = generate(spec, tmp / "scene");
    PipelineConfig cfg;
    const auto result = run_pipeline(tmp / "scene", {}, cfg);
    const auto s = testing::score_against_truth(result, truth);
    CHECK(s.accuracy() == 1.0);
    CHECK(s.min_static_recall == 1.0);
    CHECK(s.max_transient_recall == 0.0);
}

TEST_CASE("the spec survives a JSON round trip") {
    SynthSpec spec;
    spec.seed = 99;
    spec.noise = 0.125;
    spec.boxes.push_back({0.1, -0.2, 0.2, 0.3, 0.25, true, 2, false});
    const nlohmann::json j = spec;
    const auto back = j.get<SynthSpec>();
    CHECK(nlohmann::json(back) == j);
    CHECK(back.boxes.at(0).view == 2);
}

TEST_CASE("invalid specs are rejected") {
    testing::TempDir tmp("synth_bad");
    auto expect_invalid = [&](auto mutate) {
        SynthSpec spec;
        mutate(spec);
        CHECK_THROWS_AS(spec.validate(), Error);
    };
    expect_invalid([](SynthSpec& s) { s.views = 1; });
    expect_invalid([](SynthSpec& s) { s.height = 100; });
    expect_invalid([](SynthSpec& s) { s.noise = -0.1; });
    expect_invalid([](SynthSpec& s) { s.static_count = 0; });
    expect_invalid([](SynthSpec& s) { s.textureless_count = 9; });
    expect_invalid([](SynthSpec& s) { s.layers = 0; });

    testing::write_file(tmp / "junk", "x");
    CHECK_THROWS_AS(generate(SynthSpec{}, tmp.path()), Error);
}

TEST_CASE("warm-up frames") {
    SUBCASE("without a distractor the render equals the ground truth") {
        WarmupFixtureSpec spec;
        spec.distractor_height = 0;
        spec.background_noise = 0.0;
        spec.frames = 3;
        const auto f = generate_warmup_frames(spec);
        REQUIRE(f.renders.size() == 3);
        for (const auto& r : f.renders)
            CHECK(r == f.ground_truth);
        CHECK(count_set(f.distractor) == 0);
    }
    SUBCASE("the distractor dominates the residual") {
        WarmupFixtureSpec spec;
        spec.frames = 5;
        const auto f = generate_warmup_frames(spec);
        CHECK(count_set(f.distractor) == 24u * 20u);
        for (const auto& r : f.renders) {
            const auto frame = ResidualFrame::from_images(r, f.ground_truth);
            std::vector<double> bg;
            double fg_min = 1.0;
            for (std::size_t k = 0; k < frame.residual.size(); ++k) {
                if (f.distractor.data()[k])
                    fg_min = std::min(fg_min, frame.residual.data()[k]);
                else
                    bg.push_back(frame.residual.data()[k]);
            }
            std::nth_element(bg.begin(), bg.begin() + static_cast<std::ptrdiff_t>(bg.size() / 2), bg.end());
            const double median = bg[bg.size() / 2];
            CHECK(fg_min > 10 * std::max(median, 1.0 / 255.0));
        }
    }
    SUBCASE("seeded reproducibility") {
        WarmupFixtureSpec spec;
        spec.frames = 4;
        spec.seed = 8;
        const auto a = generate_warmup_frames(spec);
        const auto b = generate_warmup_frames(spec);
        CHECK(a.renders == b.renders);
        spec.seed = 9;
        CHECK(generate_warmup_frames(spec).renders != a.renders);
    }
}

}  // TEST_SUITE
