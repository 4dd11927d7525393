#pragma once

#include "maskprior/attention_match.hpp"
#include "maskprior/core.hpp"
#include "maskprior/geometry.hpp"
#include "maskprior/scene_io.hpp"
#include "maskprior/vlm_enhance.hpp"

#include <map>
#include <optional>
#include <vector>

namespace maskprior {

// (threshold - cd) / threshold when cd is strictly below the threshold, otherwise nothing.
std::optional<double> match_score(double cd, double threshold_cd);

enum class Classification { static_entity, transient_candidate };
const char* to_string(Classification c);

enum class VlmOutcome {
    not_candidate,  // matched static, never sent
    below_floor,    // candidate too small to query
    disabled,       // VLM off
    parse_failed,   // reply unusable, kept transient
    static_verdict,
    transient_verdict,
};
const char* to_string(VlmOutcome outcome);

struct ClassificationResult {
    Classification classification = Classification::transient_candidate;
    double score_sum = 0.0;
};

// Sums the best accepted score per reference view; static iff the sum exceeds score_frac * N.
ClassificationResult classify(const std::vector<MatchRecord>& records, int view_count, double score_frac);

struct EntityDecision {
    int entity_id = 0;
    std::int64_t pixel_count = 0;
    std::size_t token_count = 0;
    double score_sum = 0.0;
    Classification matching = Classification::transient_candidate;
    VlmOutcome vlm = VlmOutcome::not_candidate;
    std::vector<MatchRecord> records;
    std::vector<int> skipped_views;

    bool is_static() const noexcept {
        return matching == Classification::static_entity || vlm == VlmOutcome::static_verdict;
    }
};

struct PriorMask {
    int view = 0;
    BinaryMap static_map;  // 1 = static
    std::map<int, EntityDecision> per_entity;
};

// Per-view VLM result: entity id -> label for every queried entity.
using EntityVerdicts = std::map<int, RegionLabel>;

// decisions[v] must hold a matching decision for every entity of view v. Pixels outside every
// entity stay static. Entities with a static verdict are promoted; nothing is ever demoted.
std::vector<PriorMask> assemble_priors(const SceneBundle& scene,
                                       const std::vector<std::map<int, EntityDecision>>& decisions,
                                       const std::vector<std::optional<EntityVerdicts>>& verdicts);

// Keeps points whose source pixel is static in that view's prior.
PointSet filter_points(const PointSet& points, const std::vector<PriorMask>& priors);

}  // namespace maskprior
