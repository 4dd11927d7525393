#pragma once

#include "maskprior/core.hpp"
#include "maskprior/geometry.hpp"
#include "maskprior/scene_io.hpp"
#include "maskprior/tokenizer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace maskprior {

// Layer-averaged attention, [S][h][w].
struct AggregatedAttention {
    std::size_t tokens = 0;
    int grid_height = 0;
    int grid_width = 0;
    std::vector<double> values;

    std::size_t cells() const noexcept { return static_cast<std::size_t>(grid_height) * grid_width; }
    const double* row(std::size_t s) const { return values.data() + s * cells(); }
};

AggregatedAttention aggregate_attention(const AttentionStack& stack);

// Per query token, the reference cell with the highest aggregated attention. Ties go to the
// lowest row-major index.
std::vector<GridIndex> project_tokens(const AggregatedAttention& attention);

struct ProjectionResult {
    TokenSet query_tokens;
    int reference_view = 0;
    std::vector<GridIndex> projected;    // one per query token, in the reference grid
    std::vector<GridIndex> reprojected;  // one per projected token, back in the query grid
    std::vector<bool> valid;             // reprojected token lands in the query token set

    std::size_t valid_count() const;
};

// Query tokens of view i -> view j -> back to view i.
ProjectionResult cycle_project(const AttentionStore& store, const TokenSet& query, int reference_view);

// Valid projected tokens over all projected tokens.
double recall(const ProjectionResult& projection);

// Entity in view j holding the plurality of valid projected tokens' patch centres.
std::optional<int> assign_reference_mask(const ViewRecord& reference, const ProjectionResult& projection,
                                         int patch_size);

struct Candidate {
    int reference_view = 0;
    ProjectionResult projection;
    double recall = 0.0;
    std::optional<int> reference_mask_id;
};

struct MatchOptions {
    double recall_threshold = 0.5;
    double cd_threshold = 0.2;
    double occupancy_frac = 0.5;
    std::size_t max_query_tokens = 256;
    std::size_t max_cd_points = 2048;
    std::uint64_t seed = 0;
};

// Query tokens for an entity under the options' occupancy rule and token cap.
TokenSet query_tokens(const SceneBundle& scene, int view, const EntityMask& mask,
                      const MatchOptions& options);

struct CandidateSearch {
    std::vector<Candidate> candidates;
    std::vector<std::pair<int, double>> recalls;  // (reference view, recall) for every tested view
    std::vector<int> skipped_views;               // reference views without attention
};

// Every j != i whose recall reaches recall_threshold (inclusive).
CandidateSearch candidate_pairs(const SceneBundle& scene, const AttentionStore& store, int view,
                                int mask_id, const MatchOptions& options);

enum class MatchStatus { rejected_recall, rejected_cd, accepted };
const char* to_string(MatchStatus status);

struct MatchRecord {
    int query_view = 0;
    int query_mask_id = 0;
    int reference_view = 0;
    std::optional<int> reference_mask_id;
    double recall = 0.0;
    std::optional<double> chamfer;
    std::optional<double> score;  // present iff accepted
    MatchStatus status = MatchStatus::rejected_recall;
};

// Points used to validate a candidate: the query entity's pixels inside valid query-token
// patches, and the pixels inside valid projected-token patches (restricted to the assigned
// reference entity when one exists).
std::pair<PointSet, PointSet> candidate_point_sets(const SceneBundle& scene, int view,
                                                   const EntityMask& mask, const Candidate& candidate);

// Recall gate, Chamfer validation and scoring of one (query mask, reference view) pair.
// Throws ErrorKind::attention when the pair has no attention.
MatchRecord match_pair(const SceneBundle& scene, const AttentionStore& store, int view,
                       const EntityMask& mask, const TokenSet& tokens, int reference_view,
                       const MatchOptions& options);

}  // namespace maskprior
