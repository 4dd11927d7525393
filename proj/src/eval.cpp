#include "maskprior/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace maskprior {

IouCounts iou_counts(const BinaryMap& pred, const BinaryMap& gt) {
    if (!pred.same_shape(gt))
        throw Error(ErrorKind::argument, "iou: mask shapes differ");
    IouCounts c;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const bool a = pred.data()[k] != 0;
        const bool b = gt.data()[k] != 0;
        c.intersection += a && b;
        c.union_count += a || b;
    }
    return c;
}

double iou(const BinaryMap& pred, const BinaryMap& gt) { return iou_counts(pred, gt).ratio(); }

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b))
        throw Error(ErrorKind::argument, "psnr: image shapes differ");
    if (a.empty())
        throw Error(ErrorKind::argument, "psnr: empty images");
    std::uint64_t sse = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const int d = static_cast<int>(a.data()[k]) - static_cast<int>(b.data()[k]);
        sse += static_cast<std::uint64_t>(d * d);
    }
    if (sse == 0)
        return kPsnrIdentical;
    const double mse = static_cast<double>(sse) / static_cast<double>(a.size());
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

BinaryMap transient_map(const PriorMask& prior) {
    BinaryMap out = prior.static_map;
    for (auto& v : out.data())
        v = v ? 0 : 1;
    return out;
}

EvalReport report(const ReportInputs& in) {
    EvalReport r;
    r.scene = in.scene;
    r.score_threshold = in.score_frac * in.view_count;
    r.cd_threshold = in.cd_threshold;
    double iou_sum = 0.0, psnr_sum = 0.0;
    int iou_n = 0, psnr_n = 0;
    bool psnr_inf = false;
    for (std::size_t v = 0; v < in.priors.size(); ++v) {
        const auto& prior = in.priors[v];
        ViewEval ve;
        ve.view = prior.view;
        ve.entity_count = static_cast<int>(prior.per_entity.size());
        if (in.gt_transient && v < in.gt_transient->size()) {
            ve.iou = iou(transient_map(prior), (*in.gt_transient)[v]);
            iou_sum += *ve.iou;
            ++iou_n;
        }
        if (in.renders && in.references && v < in.renders->size() && v < in.references->size()) {
            ve.psnr = psnr((*in.renders)[v], (*in.references)[v]);
            if (std::isinf(*ve.psnr))
                psnr_inf = true;
            else
                psnr_sum += *ve.psnr;
            ++psnr_n;
        }
        r.views.push_back(ve);
        for (const auto& [id, d] : prior.per_entity)
            r.entities.push_back({prior.view, id, d.pixel_count, d.score_sum, to_string(d.matching),
                                  to_string(d.vlm), d.is_static()});
    }
    if (iou_n > 0)
        r.mean_iou = iou_sum / iou_n;
    if (psnr_n > 0)
        r.mean_psnr = psnr_inf ? kPsnrIdentical : psnr_sum / psnr_n;
    return r;
}

std::string format_metric(std::optional<double> value) {
    if (!value)
        return "n/a";
    if (std::isinf(*value))
        return "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", *value);
    return buf;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::vector<std::vector<std::string>> rows_of(const EvalReport& r) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& v : r.views)
        rows.push_back({r.scene, std::to_string(v.view), std::to_string(v.entity_count), format_metric(v.iou),
                        format_metric(v.psnr), fmt(r.score_threshold), fmt(r.cd_threshold)});
    int entities = 0;
    for (const auto& v : r.views)
        entities += v.entity_count;
    rows.push_back({r.scene, "mean", std::to_string(entities), format_metric(r.mean_iou),
                    format_metric(r.mean_psnr), fmt(r.score_threshold), fmt(r.cd_threshold)});
    return rows;
}

const std::vector<std::string> kColumns = {"scene", "view", "entity_count", "iou", "psnr",
                                           "score_threshold", "cd_threshold"};

std::string aligned(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& row : rows)
            width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c > 0)
                s += "  ";
            s += cells[c];
            if (c + 1 < cells.size())
                s.append(width[c] - cells[c].size(), ' ');
        }
        out << s << '\n';
    };
    line(header);
    std::vector<std::string> rule;
    for (auto w : width)
        rule.emplace_back(w, '-');
    line(rule);
    for (const auto& row : rows)
        line(row);
    return out.str();
}

}  // namespace

std::string report_csv(const EvalReport& r) {
    std::ostringstream out;
    for (std::size_t c = 0; c < kColumns.size(); ++c)
        out << (c ? "," : "") << kColumns[c];
    out << '\n';
    for (const auto& row : rows_of(r)) {
        for (std::size_t c = 0; c < row.size(); ++c)
            out << (c ? "," : "") << row[c];
        out << '\n';
    }
    return out.str();
}

std::string report_table(const EvalReport& r) { return aligned(kColumns, rows_of(r)); }

std::string report_text(const EvalReport& r) {
    std::ostringstream out;
    out << report_table(r);
    if (!r.entities.empty()) {
        out << '\n';
        std::vector<std::vector<std::string>> rows;
        for (const auto& e : r.entities)
            rows.push_back({std::to_string(e.view), std::to_string(e.entity_id), std::to_string(e.pixel_count),
                            fmt(e.score_sum), e.matching, e.vlm, e.is_static ? "static" : "transient"});
        out << aligned({"view", "entity", "pixels", "score_sum", "matching", "vlm", "prior"}, rows);
    }
    return out.str();
}

}  // namespace maskprior
