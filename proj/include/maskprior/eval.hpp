#pragma once

#include "maskprior/core.hpp"
#include "maskprior/prior_assembly.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace maskprior {

struct IouCounts {
    std::int64_t intersection = 0;
    std::int64_t union_count = 0;

    // 1.0 when both masks are empty.
    double ratio() const noexcept {
        return union_count == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_count);
    }
};

IouCounts iou_counts(const BinaryMap& pred, const BinaryMap& gt);
double iou(const BinaryMap& pred, const BinaryMap& gt);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// 10 log10(255^2 / MSE) over all channels; kPsnrIdentical when MSE is zero.
double psnr(const Image& a, const Image& b);

// Transient pixels of a prior: the complement of its static map.
BinaryMap transient_map(const PriorMask& prior);

struct ViewEval {
    int view = 0;
    int entity_count = 0;
    std::optional<double> iou;
    std::optional<double> psnr;
};

struct EntityAuditRow {
    int view = 0;
    int entity_id = 0;
    std::int64_t pixel_count = 0;
    double score_sum = 0.0;
    std::string matching;
    std::string vlm;
    bool is_static = true;
};

struct EvalReport {
    std::string scene;
    std::vector<ViewEval> views;
    std::optional<double> mean_iou;
    std::optional<double> mean_psnr;
    double score_threshold = 0.0;  // score_frac * N
    double cd_threshold = 0.0;
    std::vector<EntityAuditRow> entities;
};

struct ReportInputs {
    std::string scene;
    int view_count = 0;
    double score_frac = 0.5;
    double cd_threshold = 0.2;
    std::vector<PriorMask> priors;
    std::optional<std::vector<BinaryMap>> gt_transient;  // one per view
    // Rendered views paired against the reference images for PSNR.
    std::optional<std::vector<Image>> renders;
    std::optional<std::vector<Image>> references;
};

EvalReport report(const ReportInputs& inputs);

// scene,view,entity_count,iou,psnr,score_threshold,cd_threshold plus a trailing mean row.
std::string report_csv(const EvalReport& report);
// Space-aligned plain-text table.
std::string report_table(const EvalReport& report);
// Table followed by the per-entity audit.
std::string report_text(const EvalReport& report);

std::string format_metric(std::optional<double> value);

}  // namespace maskprior
