#include "maskprior/attention_match.hpp"

#include "maskprior/prior_assembly.hpp"

#include <algorithm>
#include <map>

namespace maskprior {

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    // splitmix64 step over the running hash
    std::uint64_t z = h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

BinaryMap patch_region(const std::vector<GridIndex>& cells, int grid_h, int grid_w, int patch) {
    BinaryMap out(grid_h * patch, grid_w * patch);
    for (const auto& g : cells)
        for (int r = g.row * patch; r < (g.row + 1) * patch; ++r)
            for (int c = g.col * patch; c < (g.col + 1) * patch; ++c)
                out(r, c) = 1;
    return out;
}

void intersect(BinaryMap& region, const BinaryMap& with) {
    for (std::size_t k = 0; k < region.size(); ++k)
        region.data()[k] = region.data()[k] && with.data()[k];
}

}  // namespace

AggregatedAttention aggregate_attention(const AttentionStack& stack) {
    if (stack.layers < 1)
        throw Error(ErrorKind::argument, "attention stack has no layers");
    AggregatedAttention out;
    out.tokens = stack.token_count();
    out.grid_height = stack.grid_height;
    out.grid_width = stack.grid_width;
    const std::size_t cells = out.cells();
    out.values.assign(out.tokens * cells, 0.0);
    for (std::size_t s = 0; s < out.tokens; ++s) {
        double* dst = out.values.data() + s * cells;
        for (int l = 0; l < stack.layers; ++l) {
            const auto src = stack.layer_row(s, l);
            for (std::size_t c = 0; c < cells; ++c)
                dst[c] += src[c];
        }
        for (std::size_t c = 0; c < cells; ++c)
            dst[c] /= stack.layers;
    }
    return out;
}

std::vector<GridIndex> project_tokens(const AggregatedAttention& attention) {
    std::vector<GridIndex> out;
    out.reserve(attention.tokens);
    const std::size_t cells = attention.cells();
    for (std::size_t s = 0; s < attention.tokens; ++s) {
        const double* row = attention.row(s);
        // max_element keeps the first maximum, i.e. the lowest flat index
        const auto best = static_cast<int>(std::max_element(row, row + cells) - row);
        out.push_back({best / attention.grid_width, best % attention.grid_width});
    }
    return out;
}

std::size_t ProjectionResult::valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

ProjectionResult cycle_project(const AttentionStore& store, const TokenSet& query, int reference_view) {
    ProjectionResult result;
    result.query_tokens = query;
    result.reference_view = reference_view;
    if (query.empty())
        return result;
    const auto ids = query.flat_ids();
    const auto forward = store.rows(query.view(), reference_view, ids);
    if (forward.grid_height != query.grid_height() || forward.grid_width != query.grid_width())
        throw Error(ErrorKind::validation, "attention grid differs from the token grid");
    result.projected = project_tokens(aggregate_attention(forward));

    // Reverse rows are fetched once per distinct projected token.
    std::vector<int> unique_ref;
    for (const auto& g : result.projected)
        unique_ref.push_back(g.row * forward.grid_width + g.col);
    std::sort(unique_ref.begin(), unique_ref.end());
    unique_ref.erase(std::unique(unique_ref.begin(), unique_ref.end()), unique_ref.end());
    const auto backward = store.rows(reference_view, query.view(), unique_ref);
    const auto back_targets = project_tokens(aggregate_attention(backward));
    std::map<int, GridIndex> back_of;
    for (std::size_t k = 0; k < unique_ref.size(); ++k)
        back_of[unique_ref[k]] = back_targets[k];

    for (const auto& g : result.projected) {
        const GridIndex back = back_of.at(g.row * forward.grid_width + g.col);
        result.reprojected.push_back(back);
        result.valid.push_back(query.contains(back));
    }
    return result;
}

double recall(const ProjectionResult& projection) {
    if (projection.projected.empty())
        throw Error(ErrorKind::argument, "empty token set");
    return static_cast<double>(projection.valid_count()) /
           static_cast<double>(projection.projected.size());
}

std::optional<int> assign_reference_mask(const ViewRecord& reference, const ProjectionResult& projection,
                                         int patch_size) {
    std::map<int, int> votes;
    for (std::size_t k = 0; k < projection.projected.size(); ++k) {
        if (!projection.valid[k])
            continue;
        const int r = projection.projected[k].row * patch_size + patch_size / 2;
        const int c = projection.projected[k].col * patch_size + patch_size / 2;
        for (const auto& m : reference.entity_masks)
            if (m.pixels(r, c)) {
                ++votes[m.entity_id];
                break;
            }
    }
    std::optional<int> best;
    int best_votes = 0;
    for (const auto& [id, n] : votes)  // ascending ids: ties keep the lowest
        if (n > best_votes) {
            best = id;
            best_votes = n;
        }
    return best;
}

TokenSet query_tokens(const SceneBundle& scene, int view, const EntityMask& mask,
                      const MatchOptions& options) {
    return cap_tokens(tokens_for_mask(mask, scene.patch_size, options.occupancy_frac, view),
                      options.max_query_tokens);
}

CandidateSearch candidate_pairs(const SceneBundle& scene, const AttentionStore& store, int view,
                                int mask_id, const MatchOptions& options) {
    const auto& record = scene.views.at(static_cast<std::size_t>(view));
    const EntityMask* mask = record.find_mask(mask_id);
    if (!mask)
        throw Error(ErrorKind::argument, "view " + std::to_string(view) + " has no entity " +
                                             std::to_string(mask_id));
    const TokenSet tokens = query_tokens(scene, view, *mask, options);
    CandidateSearch out;
    if (tokens.empty())
        return out;
    for (int j = 0; j < scene.view_count(); ++j) {
        if (j == view)
            continue;
        ProjectionResult pr;
        try {
            pr = cycle_project(store, tokens, j);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::attention)
                throw;
            out.skipped_views.push_back(j);
            continue;
        }
        const double r = recall(pr);
        out.recalls.emplace_back(j, r);
        if (r >= options.recall_threshold) {
            Candidate c;
            c.reference_view = j;
            c.recall = r;
            c.reference_mask_id =
                assign_reference_mask(scene.views[static_cast<std::size_t>(j)], pr, scene.patch_size);
            c.projection = std::move(pr);
            out.candidates.push_back(std::move(c));
        }
    }
    return out;
}

const char* to_string(MatchStatus status) {
    switch (status) {
    case MatchStatus::rejected_recall: return "rejected_recall";
    case MatchStatus::rejected_cd: return "rejected_cd";
    case MatchStatus::accepted: return "accepted";
    }
    return "unknown";
}

std::pair<PointSet, PointSet> candidate_point_sets(const SceneBundle& scene, int view,
                                                   const EntityMask& mask, const Candidate& candidate) {
    const auto& pr = candidate.projection;
    std::vector<GridIndex> valid_query;
    std::vector<GridIndex> valid_ref;
    for (std::size_t k = 0; k < pr.projected.size(); ++k)
        if (pr.valid[k]) {
            valid_query.push_back(pr.query_tokens.indices()[k]);
            valid_ref.push_back(pr.projected[k]);
        }
    const int gh = scene.grid_height();
    const int gw = scene.grid_width();
    const int p = scene.patch_size;

    BinaryMap query_region = patch_region(valid_query, gh, gw, p);
    intersect(query_region, mask.pixels);
    BinaryMap ref_region = patch_region(valid_ref, gh, gw, p);
    const auto& ref_view = scene.views.at(static_cast<std::size_t>(candidate.reference_view));
    if (candidate.reference_mask_id)
        if (const EntityMask* ref_mask = ref_view.find_mask(*candidate.reference_mask_id))
            intersect(ref_region, ref_mask->pixels);

    return {unproject(scene.views.at(static_cast<std::size_t>(view)), query_region, view),
            unproject(ref_view, ref_region, candidate.reference_view)};
}

MatchRecord match_pair(const SceneBundle& scene, const AttentionStore& store, int view,
                       const EntityMask& mask, const TokenSet& tokens, int reference_view,
                       const MatchOptions& options) {
    MatchRecord rec;
    rec.query_view = view;
    rec.query_mask_id = mask.entity_id;
    rec.reference_view = reference_view;

    Candidate cand;
    cand.reference_view = reference_view;
    cand.projection = cycle_project(store, tokens, reference_view);
    rec.recall = recall(cand.projection);
    if (rec.recall < options.recall_threshold) {
        rec.status = MatchStatus::rejected_recall;
        return rec;
    }
    cand.recall = rec.recall;
    cand.reference_mask_id = assign_reference_mask(
        scene.views.at(static_cast<std::size_t>(reference_view)), cand.projection, scene.patch_size);
    rec.reference_mask_id = cand.reference_mask_id;

    auto [query_pts, ref_pts] = candidate_point_sets(scene, view, mask, cand);
    if (query_pts.empty() || ref_pts.empty()) {
        rec.status = MatchStatus::rejected_cd;
        return rec;
    }
    std::uint64_t h = mix(mix(mix(options.seed, static_cast<std::uint64_t>(view)),
                              static_cast<std::uint64_t>(mask.entity_id)),
                          static_cast<std::uint64_t>(reference_view));
    query_pts = subsample(query_pts, options.max_cd_points, mix(h, 1));
    ref_pts = subsample(ref_pts, options.max_cd_points, mix(h, 2));
    rec.chamfer = chamfer(query_pts, ref_pts);
    rec.score = match_score(*rec.chamfer, options.cd_threshold);
    rec.status = rec.score ? MatchStatus::accepted : MatchStatus::rejected_cd;
    return rec;
}

}  // namespace maskprior
