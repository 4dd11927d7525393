#include "maskprior/warmup.hpp"

#include <algorithm>
#include <cmath>

namespace maskprior {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const int half = size / 2;
    double sum = 0.0;
    for (int k = 0; k < size; ++k) {
        const double x = k - half;
        g[static_cast<std::size_t>(k)] = std::exp(-(x * x) / (2.0 * sigma * sigma));
        sum += g[static_cast<std::size_t>(k)];
    }
    for (auto& v : g)
        v /= sum;
    return g;
}

// Separable "same" filtering of one channel with zero padding.
Raster<double> filter(const Raster<double>& in, const std::vector<double>& g) {
    const int h = in.height(), w = in.width();
    const int half = static_cast<int>(g.size()) / 2;
    Raster<double> tmp(h, w), out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0.0;
            for (int k = -half; k <= half; ++k) {
                const int cc = c + k;
                if (cc >= 0 && cc < w)
                    s += g[static_cast<std::size_t>(k + half)] * in(r, cc);
            }
            tmp(r, c) = s;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0.0;
            for (int k = -half; k <= half; ++k) {
                const int rr = r + k;
                if (rr >= 0 && rr < h)
                    s += g[static_cast<std::size_t>(k + half)] * tmp(rr, c);
            }
            out(r, c) = s;
        }
    return out;
}

Raster<double> channel(const FloatImage& img, int ch) {
    Raster<double> out(img.height(), img.width());
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            out(r, c) = img(r, c, ch);
    return out;
}

void check_same(const FloatImage& a, const FloatImage& b) {
    if (!a.same_shape(b))
        throw Error(ErrorKind::argument, "image shapes differ");
}

}  // namespace

FloatImage to_float(const Image& image) {
    FloatImage out(image.height(), image.width(), image.channels());
    for (std::size_t k = 0; k < image.size(); ++k)
        out.data()[k] = image.data()[k] / 255.0;
    return out;
}

Raster<double> box_blur(const Raster<double>& input, int radius) {
    if (radius < 0)
        throw Error(ErrorKind::argument, "blur radius must be non-negative");
    const int h = input.height(), w = input.width();
    // Summed-area table
    std::vector<double> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    auto at = [&](int r, int c) -> double& { return sat[static_cast<std::size_t>(r) * (w + 1) + c]; };
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            at(r + 1, c + 1) = input(r, c) + at(r, c + 1) + at(r + 1, c) - at(r, c);
    Raster<double> out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int r0 = std::max(0, r - radius), r1 = std::min(h, r + radius + 1);
            const int c0 = std::max(0, c - radius), c1 = std::min(w, c + radius + 1);
            const double sum = at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0);
            out(r, c) = sum / static_cast<double>((r1 - r0) * (c1 - c0));
        }
    return out;
}

ResidualFrame ResidualFrame::from_images(const FloatImage& render, const FloatImage& ground_truth,
                                         int blur_radius) {
    check_same(render, ground_truth);
    ResidualFrame f;
    f.render = render;
    f.ground_truth = ground_truth;
    f.residual = Raster<double>(render.height(), render.width());
    for (int r = 0; r < render.height(); ++r)
        for (int c = 0; c < render.width(); ++c) {
            double s = 0.0;
            for (int ch = 0; ch < render.channels(); ++ch)
                s += std::abs(render(r, c, ch) - ground_truth(r, c, ch));
            f.residual(r, c) = s / render.channels();
        }
    for (double v : f.residual.data())
        if (!std::isfinite(v))
            throw Error(ErrorKind::argument, "non-finite residuals");
    f.blurred_residual = box_blur(f.residual, blur_radius);
    return f;
}

ResidualFrame ResidualFrame::from_residual(Raster<double> residual, int blur_radius) {
    for (double v : residual.data())
        if (!std::isfinite(v) || v < 0.0)
            throw Error(ErrorKind::argument, "residuals must be finite and non-negative");
    ResidualFrame f;
    f.blurred_residual = box_blur(residual, blur_radius);
    f.residual = std::move(residual);
    return f;
}

double ssim(const FloatImage& a, const FloatImage& b) {
    check_same(a, b);
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const auto g = gaussian_window(11, 1.5);
    double total = 0.0;
    for (int ch = 0; ch < a.channels(); ++ch) {
        const auto x = channel(a, ch);
        const auto y = channel(b, ch);
        Raster<double> xx(x.height(), x.width()), yy = xx, xy = xx;
        for (std::size_t k = 0; k < x.size(); ++k) {
            xx.data()[k] = x.data()[k] * x.data()[k];
            yy.data()[k] = y.data()[k] * y.data()[k];
            xy.data()[k] = x.data()[k] * y.data()[k];
        }
        const auto mx = filter(x, g), my = filter(y, g);
        const auto sxx = filter(xx, g), syy = filter(yy, g), sxy = filter(xy, g);
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double mux = mx.data()[k], muy = my.data()[k];
            const double vx = sxx.data()[k] - mux * mux;
            const double vy = syy.data()[k] - muy * muy;
            const double cov = sxy.data()[k] - mux * muy;
            total += ((2 * mux * muy + c1) * (2 * cov + c2)) / ((mux * mux + muy * muy + c1) * (vx + vy + c2));
        }
    }
    return total / static_cast<double>(a.size());
}

double image_loss(const FloatImage& render, const FloatImage& ground_truth, const BinaryMap& mask,
                  double ssim_weight) {
    check_same(render, ground_truth);
    if (mask.height() != render.height() || mask.width() != render.width())
        throw Error(ErrorKind::argument, "mask shape differs from the images");
    FloatImage mr = render, mg = ground_truth;
    double l1 = 0.0;
    for (int r = 0; r < render.height(); ++r)
        for (int c = 0; c < render.width(); ++c)
            for (int ch = 0; ch < render.channels(); ++ch) {
                const double m = mask(r, c) ? 1.0 : 0.0;
                mr(r, c, ch) *= m;
                mg(r, c, ch) *= m;
                l1 += std::abs(mr(r, c, ch) - mg(r, c, ch));
            }
    l1 /= static_cast<double>(render.size());
    return (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - ssim(mr, mg));
}

Raster<double> predict_inlier_prob(const std::array<double, 3>& weights, const ResidualFrame& frame) {
    Raster<double> out(frame.residual.height(), frame.residual.width());
    for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = sigmoid(weights[0] * frame.residual.data()[k] +
                                weights[1] * frame.blurred_residual.data()[k] + weights[2]);
    return out;
}

double mask_model_loss(const std::array<double, 3>& weights, const ResidualFrame& frame, double reg_weight) {
    const auto prob = predict_inlier_prob(weights, frame);
    double data = 0.0, reg = 0.0;
    for (std::size_t k = 0; k < prob.size(); ++k) {
        data += prob.data()[k] * frame.residual.data()[k];
        reg += 1.0 - prob.data()[k];
    }
    const auto n = static_cast<double>(prob.size());
    return data / n + reg_weight * reg / n;
}

WarmupState update_mask_model(const WarmupState& state, const ResidualFrame& frame,
                              const MaskModelOptions& options) {
    for (double v : frame.residual.data())
        if (!std::isfinite(v))
            throw Error(ErrorKind::argument, "non-finite residuals");
    if (frame.residual.empty())
        throw Error(ErrorKind::argument, "empty residual frame");

    const auto prob = predict_inlier_prob(state.weights, frame);
    std::array<double, 3> grad{};
    const auto n = static_cast<double>(prob.size());
    for (std::size_t k = 0; k < prob.size(); ++k) {
        const double p = prob.data()[k];
        const double r = frame.residual.data()[k];
        const double dz = (r - options.reg_weight) * p * (1.0 - p) / n;
        grad[0] += dz * r;
        grad[1] += dz * frame.blurred_residual.data()[k];
        grad[2] += dz;
    }

    WarmupState next = state;
    next.adam_steps += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, next.adam_steps);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, next.adam_steps);
    for (std::size_t i = 0; i < 3; ++i) {
        next.adam_m[i] = kAdamBeta1 * next.adam_m[i] + (1.0 - kAdamBeta1) * grad[i];
        next.adam_v[i] = kAdamBeta2 * next.adam_v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
        next.weights[i] -= options.learning_rate * (next.adam_m[i] / bc1) / (std::sqrt(next.adam_v[i] / bc2) + kAdamEps);
    }
    next.mask_prob = predict_inlier_prob(next.weights, frame);
    next.mask_loss = mask_model_loss(next.weights, frame, options.reg_weight);
    return next;
}

std::vector<std::string> mask_model_loss_terms() { return {"masked_image_loss", "mask_regularizer"}; }

std::vector<std::string> scene_model_loss_terms() { return {"masked_image_loss"}; }

BinaryMap effective_mask(const WarmupState& state, const PriorMask* prior,
                         const std::vector<EntityMask>& entity_masks, int warmup_iters) {
    if (state.iteration < 1)
        throw Error(ErrorKind::argument, "iterations start at 1");
    if (state.iteration <= warmup_iters) {
        if (!prior)
            throw Error(ErrorKind::argument, "warm-up iteration without a mask prior");
        return prior->static_map;
    }
    if (state.mask_prob.empty())
        throw Error(ErrorKind::argument, "mask model has not produced a prediction yet");
    BinaryMap out(state.mask_prob.height(), state.mask_prob.width());
    for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = state.mask_prob.data()[k] >= 0.5 ? 1 : 0;
    const BinaryMap binarized = out;
    for (const auto& m : entity_masks) {
        if (m.pixels.height() != out.height() || m.pixels.width() != out.width())
            throw Error(ErrorKind::argument, "entity mask shape differs from the mask model");
        std::size_t ones = 0, total = 0;
        for (std::size_t k = 0; k < out.size(); ++k)
            if (m.pixels.data()[k]) {
                ++total;
                ones += binarized.data()[k];
            }
        if (total == 0)
            continue;
        const std::uint8_t value = 2 * ones >= total ? 1 : 0;
        for (std::size_t k = 0; k < out.size(); ++k)
            if (m.pixels.data()[k])
                out.data()[k] = value;
    }
    return out;
}

WarmupScheduler::WarmupScheduler(PriorMask prior, std::vector<EntityMask> entity_masks, int warmup_iters,
                                 MaskModelOptions options)
    : prior_(std::move(prior)), entity_masks_(std::move(entity_masks)), warmup_iters_(warmup_iters),
      options_(options) {}

const BinaryMap& WarmupScheduler::step(const ResidualFrame& frame) {
    if (started_)
        state_.iteration += 1;
    started_ = true;
    state_ = update_mask_model(state_, frame, options_);
    state_.effective_mask = effective_mask(state_, &prior_, entity_masks_, warmup_iters_);
    if (!frame.render.empty())
        state_.training_loss = image_loss(frame.render, frame.ground_truth, state_.effective_mask);

    WarmupLogRow row;
    row.iteration = state_.iteration;
    row.mask_loss = state_.mask_loss;
    row.training_loss = state_.training_loss;
    double sum = 0.0;
    for (double p : state_.mask_prob.data())
        sum += p;
    row.mean_mask_prob = sum / static_cast<double>(state_.mask_prob.size());
    row.effective_fraction = static_cast<double>(count_set(state_.effective_mask)) /
                             static_cast<double>(state_.effective_mask.size());
    log_.push_back(row);
    return state_.effective_mask;
}

}  // namespace maskprior
