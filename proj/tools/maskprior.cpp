#include "maskprior/eval.hpp"
#include "maskprior/geometry.hpp"
#include "maskprior/pipeline.hpp"
#include "maskprior/synth.hpp"
#include "maskprior/warmup.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>

using namespace maskprior;
using json = nlohmann::json;

namespace {

// Options whose value is applied only when given on the command line, after the config file.
class Overrides {
public:
    template <typename T, typename Setter>
    void add(CLI::App* app, const std::string& names, const std::string& help, Setter set) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app->add_option(names, *value, help);
        apply_.push_back([opt, value, set](PipelineConfig& c) {
            if (opt->count() > 0)
                set(c, *value);
        });
    }
    void flag(CLI::App* app, const std::string& names, const std::string& help,
              std::function<void(PipelineConfig&)> set) {
        CLI::Option* opt = app->add_flag(names, help);
        apply_.push_back([opt, set](PipelineConfig& c) {
            if (opt->count() > 0)
                set(c);
        });
    }
    void apply(PipelineConfig& c) const {
        for (const auto& f : apply_)
            f(c);
    }

private:
    std::vector<std::function<void(PipelineConfig&)>> apply_;
};

void add_pipeline_flags(CLI::App* app, Overrides& o) {
    o.add<double>(app, "--recall-threshold,--recall_threshold", "minimum cycle recall (0.5)",
                  [](PipelineConfig& c, double v) { c.recall_threshold = v; });
    o.add<double>(app, "--cd-threshold,--cd_threshold", "Chamfer acceptance threshold (0.2)",
                  [](PipelineConfig& c, double v) { c.cd_threshold = v; });
    o.add<double>(app, "--score-frac,--score_frac", "static iff score sum > frac * N (0.5)",
                  [](PipelineConfig& c, double v) { c.score_frac = v; });
    o.add<std::int64_t>(app, "--min-region-pixels,--min_region_pixels", "VLM region floor (20000)",
                        [](PipelineConfig& c, std::int64_t v) { c.min_region_pixels = v; });
    o.add<int>(app, "--warmup-iters,--warmup_iters", "warm-up length recorded for training (500)",
               [](PipelineConfig& c, int v) { c.warmup_iters = v; });
    o.add<double>(app, "--occupancy-frac,--occupancy_frac", "patch occupancy for query tokens (0.5)",
                  [](PipelineConfig& c, double v) { c.occupancy_frac = v; });
    o.add<std::size_t>(app, "--max-query-tokens,--max_query_tokens", "token cap per mask (256)",
                       [](PipelineConfig& c, std::size_t v) { c.max_query_tokens = v; });
    o.add<std::size_t>(app, "--max-cd-points,--max_cd_points", "Chamfer subsample size (2048)",
                       [](PipelineConfig& c, std::size_t v) { c.max_cd_points = v; });
    o.add<std::uint64_t>(app, "--match-seed,--match_seed", "seed for Chamfer subsampling",
                         [](PipelineConfig& c, std::uint64_t v) { c.match_seed = v; });
    o.add<std::uint64_t>(app, "--palette-seed,--palette_seed", "seed for VLM region colours",
                         [](PipelineConfig& c, std::uint64_t v) { c.palette_seed = v; });
    o.add<std::string>(app, "--vlm", "off | http", [](PipelineConfig& c, const std::string& v) {
        if (v != "off" && v != "http")
            throw Error(ErrorKind::validation, "--vlm must be off or http");
        c.vlm.mode = v == "http" ? VlmMode::http : VlmMode::off;
    });
    o.add<std::string>(app, "--vlm-url,--vlm_url", "chat-completions endpoint",
                       [](PipelineConfig& c, const std::string& v) { c.vlm.url = v; });
    o.add<std::string>(app, "--vlm-model,--vlm_model", "model name sent to the endpoint",
                       [](PipelineConfig& c, const std::string& v) { c.vlm.model = v; });
    o.add<std::string>(app, "--vlm-key-env,--vlm_key_env", "environment variable holding the API key",
                       [](PipelineConfig& c, const std::string& v) { c.vlm.api_key_env = v; });
    o.add<long>(app, "--vlm-timeout-ms,--vlm_timeout_ms", "per-attempt timeout",
                [](PipelineConfig& c, long v) { c.vlm.timeout = std::chrono::milliseconds(v); });
    o.add<int>(app, "--vlm-attempts,--vlm_attempts", "total attempts per query (3)",
               [](PipelineConfig& c, int v) { c.vlm.attempts = v; });
    o.add<long>(app, "--vlm-backoff-ms,--vlm_backoff_ms", "initial retry backoff (500)",
                [](PipelineConfig& c, long v) { c.vlm.backoff = std::chrono::milliseconds(v); });
    o.add<int>(app, "--jobs,-j", "worker threads", [](PipelineConfig& c, int v) { c.jobs = v; });
    o.add<int>(app, "--point-stride,--point_stride", "pixel stride of the exported point cloud",
               [](PipelineConfig& c, int v) { c.point_stride = v; });
    o.flag(app, "--allow-missing-attention,--allow_missing_attention",
           "skip reference views without attention instead of aborting",
           [](PipelineConfig& c) { c.allow_missing_attention = true; });
}

int cmd_run(const std::string& scene, const std::string& out, const std::string& config_file, const Overrides& o,
            bool print_config) {
    PipelineConfig config = config_file.empty() ? PipelineConfig{} : load_config_file(config_file);
    o.apply(config);
    if (print_config) {
        std::cout << config_to_json(config).dump(2) << '\n';
        return 0;
    }
    const auto result = run_pipeline(scene, out, config);
    for (const auto& w : result.warnings)
        std::cerr << "warning: " << w << '\n';
    std::cout << report_text(result.report);
    return 0;
}

std::vector<BinaryMap> read_view_masks(const fs::path& dir, std::size_t count) {
    std::vector<BinaryMap> out;
    for (std::size_t v = 0; v < count; ++v) {
        char name[16];
        std::snprintf(name, sizeof name, "%04zu.png", v);
        out.push_back(read_mask_png(dir / name));
    }
    return out;
}

int cmd_eval(const std::string& priors_dir, const std::string& gt_dir, const std::string& scene_dir,
             const std::string& renders_dir, const std::string& csv, double score_frac, double cd_threshold,
             const std::string& name) {
    fs::path pdir = priors_dir;
    if (fs::is_directory(pdir / "priors"))
        pdir /= "priors";
    ReportInputs in;
    in.priors = load_priors(pdir);
    if (in.priors.empty())
        throw Error(ErrorKind::io, "no priors found in " + pdir.string());
    in.scene = name.empty() ? fs::path(priors_dir).lexically_normal().filename().string() : name;
    in.view_count = static_cast<int>(in.priors.size());
    in.score_frac = score_frac;
    in.cd_threshold = cd_threshold;
    if (!gt_dir.empty())
        in.gt_transient = read_view_masks(gt_dir, in.priors.size());
    if (!renders_dir.empty()) {
        if (scene_dir.empty())
            throw Error(ErrorKind::argument, "--renders needs --scene for the reference images");
        const auto scene = load_scene(scene_dir);
        std::vector<Image> renders, refs;
        for (std::size_t v = 0; v < in.priors.size(); ++v) {
            char name_buf[16];
            std::snprintf(name_buf, sizeof name_buf, "%04zu.png", v);
            renders.push_back(read_png_rgb(fs::path(renders_dir) / name_buf));
            refs.push_back(scene.views.at(v).image);
        }
        in.renders = std::move(renders);
        in.references = std::move(refs);
    }
    const auto rep = report(in);
    std::cout << report_table(rep);
    if (!csv.empty()) {
        std::ofstream f(csv, std::ios::trunc);
        if (!f)
            throw Error(ErrorKind::io, "cannot write " + csv);
        f << report_csv(rep);
    }
    return 0;
}

int cmd_warmup(int iterations, int warmup_iters, double reg, double lr, std::uint64_t seed, const std::string& log) {
    WarmupFixtureSpec fs_spec;
    fs_spec.seed = seed;
    fs_spec.frames = iterations;
    const auto fx = generate_warmup_frames(fs_spec);

    PriorMask prior;
    prior.static_map = BinaryMap(fs_spec.height, fs_spec.width, 1, 1);
    EntityMask distractor{1, fx.distractor, static_cast<std::int64_t>(count_set(fx.distractor))};
    for (std::size_t k = 0; k < fx.distractor.size(); ++k)
        if (fx.distractor.data()[k])
            prior.static_map.data()[k] = 0;
    WarmupScheduler sched(prior, {distractor}, warmup_iters, {reg, lr, 8});
    for (const auto& render : fx.renders)
        sched.step(ResidualFrame::from_images(render, fx.ground_truth));

    double dist = 0.0, back = 0.0;
    std::size_t nd = 0, nb = 0;
    const auto& prob = sched.state().mask_prob;
    for (std::size_t k = 0; k < prob.size(); ++k) {
        if (fx.distractor.data()[k]) {
            dist += prob.data()[k];
            ++nd;
        } else {
            back += prob.data()[k];
            ++nb;
        }
    }
    std::printf("iterations %d, warm-up %d\n", iterations, warmup_iters);
    std::printf("mean inlier probability: distractor %.4f, background %.4f\n", nd ? dist / nd : 0.0,
                nb ? back / nb : 0.0);
    if (!sched.log().empty()) {
        const auto& last = sched.log().back();
        std::printf("final mask loss %.6f, training loss %.6f, effective static fraction %.4f\n", last.mask_loss,
                    last.training_loss, last.effective_fraction);
    }
    if (!log.empty()) {
        std::ofstream f(log, std::ios::trunc);
        if (!f)
            throw Error(ErrorKind::io, "cannot write " + log);
        f << "iteration,mask_loss,training_loss,mean_mask_prob,effective_fraction\n";
        for (const auto& r : sched.log()) {
            char line[160];
            std::snprintf(line, sizeof line, "%d,%.8f,%.8f,%.8f,%.8f\n", r.iteration, r.mask_loss, r.training_loss,
                          r.mean_mask_prob, r.effective_fraction);
            f << line;
        }
    }
    return 0;
}

int cmd_sample(const std::string& scene_dir, int k, std::uint64_t seed, int stride, std::size_t min_shared) {
    const auto scene = load_scene(scene_dir);
    const auto pts = scene_points(scene, stride);
    const auto cluster = sample_view_cluster(scene, k, seed, pts, min_shared);
    std::cout << json{{"views", cluster.views}, {"complete", cluster.complete}}.dump() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Static mask priors from cross-view attention and geometry"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Overrides overrides;
    std::string scene, out, config_file;
    bool print_config = false;
    auto* run = app.add_subcommand("run", "compute mask priors for a scene directory");
    run->add_option("--scene", scene, "scene directory")->required();
    run->add_option("--out", out, "output directory")->required();
    run->add_option("--config", config_file, "JSON config; flags take precedence");
    run->add_flag("--print-config", print_config, "print the effective config and exit");
    add_pipeline_flags(run, overrides);

    std::string spec_file, synth_out;
    std::optional<std::uint64_t> s_seed;
    std::optional<int> s_views, s_static, s_transient;
    std::optional<double> s_noise;
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene with oracle labels");
    synth->add_option("--spec", spec_file, "JSON spec");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", s_seed, "override the spec seed");
    synth->add_option("--views", s_views, "override the view count");
    synth->add_option("--static", s_static, "override the static entity count");
    synth->add_option("--transient", s_transient, "override the transient entity count");
    synth->add_option("--noise", s_noise, "override the attention noise level");

    std::string e_priors, e_gt, e_scene, e_renders, e_csv, e_name;
    double e_score_frac = 0.5, e_cd = 0.2;
    auto* eval = app.add_subcommand("eval", "IoU and PSNR report for saved priors");
    eval->add_option("--priors", e_priors, "run output or priors directory")->required();
    eval->add_option("--gt", e_gt, "directory of ####.png ground-truth transient masks");
    eval->add_option("--scene", e_scene, "scene directory with reference images");
    eval->add_option("--renders", e_renders, "directory of ####.png renders for PSNR");
    eval->add_option("--csv", e_csv, "write the CSV report here");
    eval->add_option("--name", e_name, "scene name in the report");
    eval->add_option("--score-frac", e_score_frac, "score fraction echoed in the report");
    eval->add_option("--cd-threshold", e_cd, "Chamfer threshold echoed in the report");

    int w_iters = 600, w_warmup = kDefaultWarmupIterations;
    double w_reg = 0.5, w_lr = 0.1;
    std::uint64_t w_seed = 0;
    std::string w_log;
    auto* warm = app.add_subcommand("warmup-sim", "run the mask model on the synthetic distractor fixture");
    warm->add_option("--iterations", w_iters, "training iterations");
    warm->add_option("--warmup-iters", w_warmup, "warm-up length");
    warm->add_option("--reg", w_reg, "regulariser weight");
    warm->add_option("--lr", w_lr, "Adam step size");
    warm->add_option("--seed", w_seed, "fixture seed");
    warm->add_option("--log", w_log, "per-iteration CSV log");

    std::string v_scene;
    int v_k = 3, v_stride = 8;
    std::uint64_t v_seed = 0;
    std::size_t v_min_shared = 20;
    auto* sample = app.add_subcommand("sample-views", "seeded co-visible view cluster");
    sample->add_option("--scene", v_scene, "scene directory")->required();
    sample->add_option("--k", v_k, "cluster size");
    sample->add_option("--seed", v_seed, "seed for the first view");
    sample->add_option("--stride", v_stride, "pixel stride of the point cloud");
    sample->add_option("--min-shared", v_min_shared, "co-visible points required per pair");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*run)
            return cmd_run(scene, out, config_file, overrides, print_config);
        if (*synth) {
            SynthSpec spec;
            if (!spec_file.empty()) {
                std::ifstream in(spec_file);
                if (!in)
                    throw Error(ErrorKind::io, "spec missing: " + spec_file);
                try {
                    spec = json::parse(in).get<SynthSpec>();
                } catch (const json::exception& e) {
                    throw Error(ErrorKind::validation, std::string("spec: ") + e.what());
                }
            }
            if (s_seed) spec.seed = *s_seed;
            if (s_views) spec.views = *s_views;
            if (s_static) spec.static_count = *s_static;
            if (s_transient) spec.transient_count = *s_transient;
            if (s_noise) spec.noise = *s_noise;
            const auto truth = generate(spec, synth_out);
            int transients = 0, entities = 0;
            for (const auto& v : truth.entities)
                for (const auto& [id, e] : v) {
                    ++entities;
                    transients += !e.is_static;
                }
            std::printf("%d views, %d entity masks, %d transient\n", spec.views, entities, transients);
            return 0;
        }
        if (*eval)
            return cmd_eval(e_priors, e_gt, e_scene, e_renders, e_csv, e_score_frac, e_cd, e_name);
        if (*warm)
            return cmd_warmup(w_iters, w_warmup, w_reg, w_lr, w_seed, w_log);
        if (*sample)
            return cmd_sample(v_scene, v_k, v_seed, v_stride, v_min_shared);
    } catch (const StageError& e) {
        std::fprintf(stderr, "error [%s/%s]: %s\n", e.stage().c_str(), to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", to_string(e.kind()), e.what());
        return exit_code(e.kind());
    }
    return 0;
}
