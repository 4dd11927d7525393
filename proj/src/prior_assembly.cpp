#include "maskprior/prior_assembly.hpp"

#include <algorithm>

namespace maskprior {

std::optional<double> match_score(double cd, double threshold_cd) {
    if (!(threshold_cd > 0.0))
        throw Error(ErrorKind::argument, "threshold_cd must be positive");
    if (!(cd >= 0.0))
        throw Error(ErrorKind::argument, "chamfer distance must be non-negative");
    if (cd < threshold_cd)
        return (threshold_cd - cd) / threshold_cd;
    return std::nullopt;
}

const char* to_string(Classification c) {
    return c == Classification::static_entity ? "static" : "transient_candidate";
}

const char* to_string(VlmOutcome outcome) {
    switch (outcome) {
    case VlmOutcome::not_candidate: return "not_candidate";
    case VlmOutcome::below_floor: return "below_floor";
    case VlmOutcome::disabled: return "disabled";
    case VlmOutcome::parse_failed: return "parse_failed";
    case VlmOutcome::static_verdict: return "static";
    case VlmOutcome::transient_verdict: return "transient";
    }
    return "unknown";
}

ClassificationResult classify(const std::vector<MatchRecord>& records, int view_count, double score_frac) {
    std::map<int, double> best_per_view;
    for (const auto& r : records) {
        if (r.status != MatchStatus::accepted || !r.score)
            continue;
        auto [it, inserted] = best_per_view.emplace(r.reference_view, *r.score);
        if (!inserted)
            it->second = std::max(it->second, *r.score);
    }
    ClassificationResult out;
    for (const auto& [view, score] : best_per_view)
        out.score_sum += score;
    out.classification = out.score_sum > score_frac * view_count ? Classification::static_entity
                                                                  : Classification::transient_candidate;
    return out;
}

std::vector<PriorMask> assemble_priors(const SceneBundle& scene,
                                       const std::vector<std::map<int, EntityDecision>>& decisions,
                                       const std::vector<std::optional<EntityVerdicts>>& verdicts) {
    const int n = scene.view_count();
    if (static_cast<int>(decisions.size()) != n)
        throw Error(ErrorKind::argument, "one decision map per view is required");
    std::vector<PriorMask> priors;
    priors.reserve(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
        const auto& view = scene.views[static_cast<std::size_t>(v)];
        PriorMask prior;
        prior.view = v;
        prior.static_map = BinaryMap(scene.height, scene.width, 1, 1);
        const auto& view_decisions = decisions[static_cast<std::size_t>(v)];
        const EntityVerdicts* verdict =
            static_cast<std::size_t>(v) < verdicts.size() && verdicts[static_cast<std::size_t>(v)]
                ? &*verdicts[static_cast<std::size_t>(v)]
                : nullptr;
        for (const auto& mask : view.entity_masks) {
            auto it = view_decisions.find(mask.entity_id);
            if (it == view_decisions.end())
                throw Error(ErrorKind::argument, "missing classification for view " + std::to_string(v) +
                                                     ", entity " + std::to_string(mask.entity_id));
            EntityDecision d = it->second;
            if (verdict && d.matching == Classification::transient_candidate) {
                if (auto vit = verdict->find(mask.entity_id); vit != verdict->end())
                    d.vlm = vit->second == RegionLabel::static_region ? VlmOutcome::static_verdict
                                                                      : VlmOutcome::transient_verdict;
            }
            if (!d.is_static())
                for (std::size_t k = 0; k < mask.pixels.size(); ++k)
                    if (mask.pixels.data()[k])
                        prior.static_map.data()[k] = 0;
            prior.per_entity.emplace(mask.entity_id, std::move(d));
        }
        priors.push_back(std::move(prior));
    }
    return priors;
}

PointSet filter_points(const PointSet& points, const std::vector<PriorMask>& priors) {
    if (points.provenance.size() != points.points.size())
        throw Error(ErrorKind::argument, "filter_points needs per-point provenance");
    PointSet out;
    for (std::size_t k = 0; k < points.points.size(); ++k) {
        const auto& src = points.provenance[k];
        if (src.view < 0 || static_cast<std::size_t>(src.view) >= priors.size())
            throw Error(ErrorKind::argument, "point provenance view out of range");
        const auto& map = priors[static_cast<std::size_t>(src.view)].static_map;
        if (!map.in_bounds(src.row, src.col))
            throw Error(ErrorKind::argument, "point provenance pixel out of bounds");
        if (map(src.row, src.col)) {
            out.points.push_back(points.points[k]);
            out.provenance.push_back(src);
        }
    }
    return out;
}

}  // namespace maskprior
