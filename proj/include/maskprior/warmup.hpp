#pragma once

#include "maskprior/core.hpp"
#include "maskprior/prior_assembly.hpp"
#include "maskprior/scene_io.hpp"

#include <array>
#include <string>
#include <vector>

namespace maskprior {

// Colour image with channels in [0, 1].
using FloatImage = Raster<double>;

FloatImage to_float(const Image& image);

struct ResidualFrame {
    FloatImage render;
    FloatImage ground_truth;
    Raster<double> residual;          // mean absolute channel difference
    Raster<double> blurred_residual;  // box blur of residual

    static ResidualFrame from_images(const FloatImage& render, const FloatImage& ground_truth,
                                     int blur_radius = 8);
    // For fixtures that prescribe residuals directly; render and ground truth stay empty.
    static ResidualFrame from_residual(Raster<double> residual, int blur_radius = 8);
};

// Mean over a (2r+1)^2 window clipped at the borders.
Raster<double> box_blur(const Raster<double>& input, int radius);

// Mean SSIM with an 11x11 Gaussian window (sigma 1.5) and zero padding.
double ssim(const FloatImage& a, const FloatImage& b);

inline constexpr double kSsimWeight = 0.2;

// (1 - lambda) * mean(mask * |render - gt|) + lambda * (1 - SSIM(mask * render, mask * gt)).
double image_loss(const FloatImage& render, const FloatImage& ground_truth, const BinaryMap& mask,
                  double ssim_weight = kSsimWeight);

struct MaskModelOptions {
    double reg_weight = 0.5;
    double learning_rate = 0.1;  // Adam step size
    int blur_radius = 8;
};

// Logistic inlier model over (residual, blurred residual, bias) plus its Adam moments.
struct WarmupState {
    int iteration = 1;
    std::array<double, 3> weights{0.0, 0.0, 0.0};
    std::array<double, 3> adam_m{};
    std::array<double, 3> adam_v{};
    int adam_steps = 0;
    Raster<double> mask_prob;  // M-hat, inlier probability per pixel
    BinaryMap effective_mask;
    double mask_loss = 0.0;        // objective of the mask-model step
    double training_loss = 0.0;    // masked image loss seen by the scene model
};

Raster<double> predict_inlier_prob(const std::array<double, 3>& weights, const ResidualFrame& frame);

// One Adam step on mean(M-hat * residual) + reg_weight * mean(1 - M-hat). Only the mask model
// moves; the frame is read-only.
WarmupState update_mask_model(const WarmupState& state, const ResidualFrame& frame,
                              const MaskModelOptions& options = {});

// The mask-model objective evaluated at the given weights.
double mask_model_loss(const std::array<double, 3>& weights, const ResidualFrame& frame, double reg_weight);

// The loss terms each of the two back-propagation passes optimises.
std::vector<std::string> mask_model_loss_terms();
std::vector<std::string> scene_model_loss_terms();

inline constexpr int kDefaultWarmupIterations = 500;

// Up to warmup_iters the prior's static map is returned unchanged. Afterwards M-hat is binarised
// at 0.5 and every entity takes its majority value; pixels outside entities keep theirs.
BinaryMap effective_mask(const WarmupState& state, const PriorMask* prior,
                         const std::vector<EntityMask>& entity_masks,
                         int warmup_iters = kDefaultWarmupIterations);

struct WarmupLogRow {
    int iteration = 0;
    double mask_loss = 0.0;
    double training_loss = 0.0;
    double mean_mask_prob = 0.0;
    double effective_fraction = 0.0;
};

// Per-view training-loop stand-in: each step refreshes the mask model from the frame's
// residuals, then picks the mask the scene model would train with.
class WarmupScheduler {
public:
    WarmupScheduler(PriorMask prior, std::vector<EntityMask> entity_masks, int warmup_iters,
                    MaskModelOptions options);

    const WarmupState& state() const noexcept { return state_; }
    const std::vector<WarmupLogRow>& log() const noexcept { return log_; }

    // Consumes one (render, gt) pair and returns the mask used at this iteration.
    const BinaryMap& step(const ResidualFrame& frame);

private:
    PriorMask prior_;
    std::vector<EntityMask> entity_masks_;
    int warmup_iters_;
    MaskModelOptions options_;
    WarmupState state_;
    std::vector<WarmupLogRow> log_;
    bool started_ = false;
};

}  // namespace maskprior
