#include "maskprior/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

namespace maskprior {

using json = nlohmann::json;

namespace {

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(stage, e.kind(), e.what());
    } catch (const json::exception& e) {
        throw StageError(stage, ErrorKind::validation, e.what());
    }
}

// Runs fn(0..n-1) on up to `jobs` threads. The exception of the lowest failing index wins.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            try {
                fn(k);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    const auto threads = static_cast<std::size_t>(std::max(1, jobs));
    if (threads == 1 || n <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, n); ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

std::string view_tag(int v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", v);
    return buf;
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::trunc | std::ios::binary);
    if (!out)
        throw Error(ErrorKind::io, "cannot write " + file.string());
    out << text;
    if (!out)
        throw Error(ErrorKind::io, "write failed: " + file.string());
}

const char* mode_name(VlmMode m) { return m == VlmMode::http ? "http" : "off"; }

json record_json(const MatchRecord& r) {
    return {{"reference_view", r.reference_view},
            {"reference_mask_id", r.reference_mask_id ? json(*r.reference_mask_id) : json(nullptr)},
            {"recall", r.recall},
            {"chamfer", r.chamfer ? json(*r.chamfer) : json(nullptr)},
            {"score", r.score ? json(*r.score) : json(nullptr)},
            {"status", to_string(r.status)}};
}

struct MatchItem {
    int view;
    int entity_id;
    int reference_view;
};

}  // namespace

void PipelineConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::validation, "config: " + what); };
    if (!(recall_threshold >= 0.0 && recall_threshold <= 1.0))
        fail("recall_threshold must lie in [0, 1]");
    if (!(cd_threshold > 0.0))
        fail("cd_threshold must be positive");
    if (!(score_frac >= 0.0 && score_frac <= 1.0))
        fail("score_frac must lie in [0, 1]");
    if (min_region_pixels < 0)
        fail("min_region_pixels must be non-negative");
    if (warmup_iters < 0)
        fail("warmup_iters must be non-negative");
    if (!(occupancy_frac > 0.0 && occupancy_frac <= 1.0))
        fail("occupancy_frac must lie in (0, 1]");
    if (max_cd_points < 1)
        fail("max_cd_points must be positive");
    if (jobs < 1)
        fail("jobs must be positive");
    if (point_stride < 1)
        fail("point_stride must be positive");
    if (vlm.mode == VlmMode::http && vlm.url.empty())
        fail("vlm url is required in http mode");
    if (vlm.attempts < 1 || vlm.timeout.count() <= 0 || vlm.backoff.count() < 0)
        fail("invalid vlm retry settings");
}

MatchOptions PipelineConfig::match_options() const {
    MatchOptions o;
    o.recall_threshold = recall_threshold;
    o.cd_threshold = cd_threshold;
    o.occupancy_frac = occupancy_frac;
    o.max_query_tokens = max_query_tokens;
    o.max_cd_points = max_cd_points;
    o.seed = match_seed;
    return o;
}

json config_to_json(const PipelineConfig& c) {
    return {{"recall_threshold", c.recall_threshold},
            {"cd_threshold", c.cd_threshold},
            {"score_frac", c.score_frac},
            {"min_region_pixels", c.min_region_pixels},
            {"warmup_iters", c.warmup_iters},
            {"occupancy_frac", c.occupancy_frac},
            {"max_query_tokens", c.max_query_tokens},
            {"max_cd_points", c.max_cd_points},
            {"match_seed", c.match_seed},
            {"palette_seed", c.palette_seed},
            {"jobs", c.jobs},
            {"allow_missing_attention", c.allow_missing_attention},
            {"point_stride", c.point_stride},
            {"vlm",
             {{"mode", mode_name(c.vlm.mode)},
              {"url", c.vlm.url},
              {"model", c.vlm.model},
              {"api_key_env", c.vlm.api_key_env},
              {"timeout_ms", c.vlm.timeout.count()},
              {"attempts", c.vlm.attempts},
              {"backoff_ms", c.vlm.backoff.count()}}}};
}

void apply_config_json(const json& j, PipelineConfig& c) {
    if (!j.is_object())
        throw Error(ErrorKind::validation, "config: expected a JSON object");
    static const std::set<std::string> known = {
        "recall_threshold", "cd_threshold", "score_frac",  "min_region_pixels", "warmup_iters",
        "occupancy_frac",   "max_query_tokens", "max_cd_points", "match_seed", "palette_seed",
        "jobs", "allow_missing_attention", "point_stride", "vlm"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw Error(ErrorKind::validation, "config: unknown key " + key);
    try {
        c.recall_threshold = j.value("recall_threshold", c.recall_threshold);
        c.cd_threshold = j.value("cd_threshold", c.cd_threshold);
        c.score_frac = j.value("score_frac", c.score_frac);
        c.min_region_pixels = j.value("min_region_pixels", c.min_region_pixels);
        c.warmup_iters = j.value("warmup_iters", c.warmup_iters);
        c.occupancy_frac = j.value("occupancy_frac", c.occupancy_frac);
        c.max_query_tokens = j.value("max_query_tokens", c.max_query_tokens);
        c.max_cd_points = j.value("max_cd_points", c.max_cd_points);
        c.match_seed = j.value("match_seed", c.match_seed);
        c.palette_seed = j.value("palette_seed", c.palette_seed);
        c.jobs = j.value("jobs", c.jobs);
        c.allow_missing_attention = j.value("allow_missing_attention", c.allow_missing_attention);
        c.point_stride = j.value("point_stride", c.point_stride);
        if (j.contains("vlm")) {
            const auto& v = j.at("vlm");
            if (v.contains("mode")) {
                const auto mode = v.at("mode").get<std::string>();
                if (mode != "off" && mode != "http")
                    throw Error(ErrorKind::validation, "config: vlm mode must be off or http");
                c.vlm.mode = mode == "http" ? VlmMode::http : VlmMode::off;
            }
            c.vlm.url = v.value("url", c.vlm.url);
            c.vlm.model = v.value("model", c.vlm.model);
            c.vlm.api_key_env = v.value("api_key_env", c.vlm.api_key_env);
            c.vlm.timeout = std::chrono::milliseconds(v.value("timeout_ms", c.vlm.timeout.count()));
            c.vlm.attempts = v.value("attempts", c.vlm.attempts);
            c.vlm.backoff = std::chrono::milliseconds(v.value("backoff_ms", c.vlm.backoff.count()));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::validation, std::string("config: ") + e.what());
    }
}

PipelineConfig load_config_file(const fs::path& file, PipelineConfig base) {
    std::ifstream in(file);
    if (!in)
        throw Error(ErrorKind::io, "config missing: " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::validation, std::string("config: ") + e.what());
    }
    apply_config_json(j, base);
    return base;
}

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::attention: return 3;
    case ErrorKind::vlm: return 4;
    case ErrorKind::io: return 5;
    case ErrorKind::validation:
    case ErrorKind::parse:
    case ErrorKind::argument: return 2;
    }
    return 2;
}

void save_priors(const fs::path& dir, const std::vector<PriorMask>& priors) {
    for (const auto& p : priors)
        write_mask_png(dir / (view_tag(p.view) + ".png"), p.static_map);
}

std::vector<PriorMask> load_priors(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw Error(ErrorKind::io, "prior directory missing: " + dir.string());
    static const std::regex name(R"((\d{4})\.png)");
    std::vector<std::pair<int, fs::path>> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string fname = entry.path().filename().string();
        if (std::regex_match(fname, m, name))
            files.emplace_back(std::stoi(m[1].str()), entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<PriorMask> priors;
    for (const auto& [view, path] : files) {
        PriorMask p;
        p.view = view;
        p.static_map = read_mask_png(path);
        priors.push_back(std::move(p));
    }
    return priors;
}

PipelineResult run_pipeline(const fs::path& scene_dir, const fs::path& out_dir, const PipelineConfig& config) {
    in_stage("config", [&] { config.validate(); });

    const SceneBundle scene = in_stage("load", [&] { return load_scene(scene_dir); });
    const AttentionStore store = in_stage("load", [&] { return AttentionStore(scene_dir); });
    const int n = scene.view_count();
    const MatchOptions opts = config.match_options();

    PipelineResult result;
    result.warnings = scene.warnings;

    // tokenize
    std::vector<std::map<int, TokenSet>> tokens(static_cast<std::size_t>(n));
    std::vector<MatchItem> items;
    in_stage("tokenize", [&] {
        for (int v = 0; v < n; ++v)
            for (const auto& m : scene.views[static_cast<std::size_t>(v)].entity_masks) {
                auto ts = query_tokens(scene, v, m, opts);
                if (!ts.empty())
                    for (int j = 0; j < n; ++j)
                        if (j != v)
                            items.push_back({v, m.entity_id, j});
                tokens[static_cast<std::size_t>(v)].emplace(m.entity_id, std::move(ts));
            }
    });

    // match
    std::vector<std::optional<MatchRecord>> records(items.size());
    in_stage("match", [&] {
        parallel_for(items.size(), config.jobs, [&](std::size_t k) {
            const auto& it = items[k];
            const auto& view = scene.views[static_cast<std::size_t>(it.view)];
            try {
                records[k] = match_pair(scene, store, it.view, *view.find_mask(it.entity_id),
                                        tokens[static_cast<std::size_t>(it.view)].at(it.entity_id),
                                        it.reference_view, opts);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::attention || !config.allow_missing_attention)
                    throw;
            }
        });
    });

    // classify
    std::vector<std::map<int, EntityDecision>> decisions(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v)
        for (const auto& m : scene.views[static_cast<std::size_t>(v)].entity_masks) {
            EntityDecision d;
            d.entity_id = m.entity_id;
            d.pixel_count = m.pixel_count;
            d.token_count = tokens[static_cast<std::size_t>(v)].at(m.entity_id).size();
            decisions[static_cast<std::size_t>(v)].emplace(m.entity_id, std::move(d));
        }
    for (std::size_t k = 0; k < items.size(); ++k) {
        auto& d = decisions[static_cast<std::size_t>(items[k].view)].at(items[k].entity_id);
        if (records[k])
            d.records.push_back(*records[k]);
        else
            d.skipped_views.push_back(items[k].reference_view);
    }
    for (int v = 0; v < n; ++v)
        for (auto& [id, d] : decisions[static_cast<std::size_t>(v)]) {
            const auto c = classify(d.records, n, config.score_frac);
            d.score_sum = c.score_sum;
            d.matching = c.classification;
            if (!d.skipped_views.empty())
                result.warnings.push_back("view " + std::to_string(v) + " entity " + std::to_string(id) +
                                          ": attention missing for " + std::to_string(d.skipped_views.size()) +
                                          " reference view(s)");
        }

    // VLM adjudication of large candidates
    std::vector<std::optional<EntityVerdicts>> verdicts(static_cast<std::size_t>(n));
    std::vector<std::vector<std::string>> vlm_warnings(static_cast<std::size_t>(n));
    result.vlm_audit.assign(static_cast<std::size_t>(n), {});
    in_stage("vlm", [&] {
        parallel_for(static_cast<std::size_t>(n), config.jobs, [&](std::size_t v) {
            const auto& view = scene.views[v];
            auto& view_decisions = decisions[v];
            std::vector<EntityMask> candidates;
            for (const auto& m : view.entity_masks)
                if (view_decisions.at(m.entity_id).matching == Classification::transient_candidate)
                    candidates.push_back(m);
            const auto regions = select_regions(candidates, config.min_region_pixels);
            for (const auto& m : candidates)
                view_decisions.at(m.entity_id).vlm = VlmOutcome::below_floor;
            if (regions.empty())
                return;
            if (config.vlm.mode == VlmMode::off) {
                for (const auto& m : regions)
                    view_decisions.at(m.entity_id).vlm = VlmOutcome::disabled;
                return;
            }
            const RegionQuery query = annotate(view.image, regions, config.palette_seed, static_cast<int>(v));
            const std::string reply = VlmClient(config.vlm).query(build_prompt(query), &result.vlm_audit[v]);
            std::vector<int> labels;
            for (const auto& r : query.regions)
                labels.push_back(r.label);
            try {
                const VlmVerdict verdict = parse_verdict(reply, labels);
                for (const auto& w : verdict.warnings)
                    vlm_warnings[v].push_back("view " + std::to_string(v) + ": " + w);
                EntityVerdicts ev;
                for (const auto& r : query.regions)
                    ev[r.entity_id] = verdict.labels.at(r.label);
                verdicts[v] = std::move(ev);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::parse)
                    throw;
                for (const auto& m : regions)
                    view_decisions.at(m.entity_id).vlm = VlmOutcome::parse_failed;
                vlm_warnings[v].push_back("view " + std::to_string(v) + ": " + e.what());
            }
        });
    });
    for (const auto& w : vlm_warnings)
        result.warnings.insert(result.warnings.end(), w.begin(), w.end());

    result.priors = in_stage("assemble", [&] { return assemble_priors(scene, decisions, verdicts); });

    const PointSet kept = in_stage("points", [&] {
        const PointSet all = scene_points(scene, config.point_stride);
        result.points_total = all.size();
        return filter_points(all, result.priors);
    });
    result.points_kept = kept.size();

    ReportInputs ri;
    ri.scene = fs::path(scene_dir).lexically_normal().filename().string();
    if (ri.scene.empty())
        ri.scene = fs::path(scene_dir).lexically_normal().parent_path().filename().string();
    ri.view_count = n;
    ri.score_frac = config.score_frac;
    ri.cd_threshold = config.cd_threshold;
    ri.priors = result.priors;
    result.report = report(ri);

    if (out_dir.empty())
        return result;

    in_stage("save", [&] {
        std::error_code ec;
        fs::create_directories(out_dir / "priors", ec);
        if (ec)
            throw Error(ErrorKind::io, "cannot create " + out_dir.string());
        save_priors(out_dir / "priors", result.priors);

        std::vector<float> xyz;
        xyz.reserve(kept.size() * 3);
        for (const auto& p : kept.points)
            for (int a = 0; a < 3; ++a)
                xyz.push_back(static_cast<float>(p[a]));
        write_binary(out_dir / "points.bin", xyz.data(), xyz.size() * sizeof(float));

        json summary;
        summary["scene"] = ri.scene;
        summary["view_count"] = n;
        summary["points"] = {{"file", "points.bin"}, {"dtype", "float32"},
                             {"shape", {static_cast<int>(kept.size()), 3}},
                             {"total", result.points_total}, {"kept", result.points_kept}};
        summary["warnings"] = result.warnings;
        summary["views"] = json::array();
        for (const auto& prior : result.priors) {
            json vj{{"view", prior.view},
                    {"prior", "priors/" + view_tag(prior.view) + ".png"},
                    {"static_pixels", count_set(prior.static_map)},
                    {"entities", json::array()}};
            for (const auto& [id, d] : prior.per_entity) {
                json ej{{"entity_id", id},
                        {"pixel_count", d.pixel_count},
                        {"token_count", d.token_count},
                        {"score_sum", d.score_sum},
                        {"matching", to_string(d.matching)},
                        {"vlm", to_string(d.vlm)},
                        {"prior", d.is_static() ? "static" : "transient"},
                        {"skipped_views", d.skipped_views},
                        {"records", json::array()}};
                for (const auto& r : d.records)
                    ej["records"].push_back(record_json(r));
                vj["entities"].push_back(std::move(ej));
            }
            summary["views"].push_back(std::move(vj));
        }
        write_text(out_dir / "summary.json", summary.dump(1) + "\n");

        json run{{"tool", "maskprior"},
                 {"version", kVersion},
                 {"scene_dir", scene_dir.string()},
                 {"config", config_to_json(config)},
                 {"seeds", {{"match_seed", config.match_seed}, {"palette_seed", config.palette_seed}}},
                 {"scene", {{"views", n}, {"height", scene.height}, {"width", scene.width},
                            {"patch_size", scene.patch_size}, {"feature_dim", scene.feature_dim}}},
                 {"stages", {"load", "tokenize", "match", "classify", "vlm", "assemble", "points", "save"}}};
        write_text(out_dir / "run.json", run.dump(1) + "\n");

        write_text(out_dir / "report.csv", report_csv(result.report));
        write_text(out_dir / "report.txt", report_text(result.report));

        if (config.vlm.mode == VlmMode::http) {
            std::string lines;
            for (int v = 0; v < n; ++v)
                for (const auto& x : result.vlm_audit[static_cast<std::size_t>(v)])
                    lines += json{{"view", v},     {"attempt", x.attempt}, {"status", x.status},
                                  {"request", x.request}, {"response", x.response}, {"error", x.error}}
                                 .dump() +
                             "\n";
            write_text(out_dir / "vlm_audit.jsonl", lines);
        }
    });
    return result;
}

}  // namespace maskprior
