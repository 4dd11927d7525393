#pragma once

#include "maskprior/attention_match.hpp"
#include "maskprior/eval.hpp"
#include "maskprior/prior_assembly.hpp"
#include "maskprior/scene_io.hpp"
#include "maskprior/vlm_enhance.hpp"
#include "maskprior/warmup.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace maskprior {

inline constexpr const char* kVersion = "0.1.0";

struct PipelineConfig {
    double recall_threshold = 0.5;
    double cd_threshold = 0.2;
    double score_frac = 0.5;  // static iff score sum > score_frac * N
    std::int64_t min_region_pixels = kDefaultMinRegionPixels;
    int warmup_iters = kDefaultWarmupIterations;
    double occupancy_frac = 0.5;
    std::size_t max_query_tokens = 256;
    std::size_t max_cd_points = 2048;
    std::uint64_t match_seed = 0;
    std::uint64_t palette_seed = 0;
    VlmEndpointConfig vlm;
    int jobs = 1;
    bool allow_missing_attention = false;
    int point_stride = 4;

    void validate() const;
    MatchOptions match_options() const;
};

nlohmann::json config_to_json(const PipelineConfig& config);
// Keys present in j override the corresponding fields of config; unknown keys are rejected.
void apply_config_json(const nlohmann::json& j, PipelineConfig& config);
PipelineConfig load_config_file(const fs::path& file, PipelineConfig base = {});

// An Error raised inside a named pipeline stage.
class StageError : public Error {
public:
    StageError(std::string stage, ErrorKind kind, const std::string& what)
        : Error(kind, stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// 0 ok, 2 validation, 3 attention missing, 4 VLM, 5 io.
int exit_code(ErrorKind kind);

struct PipelineResult {
    std::vector<PriorMask> priors;
    std::vector<std::string> warnings;
    std::vector<std::vector<VlmExchange>> vlm_audit;  // per view
    std::size_t points_total = 0;
    std::size_t points_kept = 0;
    EvalReport report;
};

// Runs load, tokenize, match, classify, VLM, assemble and point filtering. When out_dir is
// non-empty the artifacts are written there.
PipelineResult run_pipeline(const fs::path& scene_dir, const fs::path& out_dir, const PipelineConfig& config);

void save_priors(const fs::path& dir, const std::vector<PriorMask>& priors);
// Static maps only; per-entity decisions are not restored.
std::vector<PriorMask> load_priors(const fs::path& dir);

}  // namespace maskprior
