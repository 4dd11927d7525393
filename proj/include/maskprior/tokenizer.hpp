#pragma once

#include "maskprior/core.hpp"
#include "maskprior/scene_io.hpp"

#include <vector>

namespace maskprior {

// Patch-grid tokens of one view, sorted row-major and deduplicated.
class TokenSet {
public:
    TokenSet() = default;
    TokenSet(int view, int grid_height, int grid_width, int patch_size,
             std::vector<GridIndex> indices);

    int view() const noexcept { return view_; }
    int grid_height() const noexcept { return grid_height_; }
    int grid_width() const noexcept { return grid_width_; }
    int patch_size() const noexcept { return patch_size_; }
    std::size_t size() const noexcept { return indices_.size(); }
    bool empty() const noexcept { return indices_.empty(); }

    const std::vector<GridIndex>& indices() const noexcept { return indices_; }
    std::vector<int> flat_ids() const;
    bool contains(GridIndex index) const;

    int flat(GridIndex index) const noexcept { return index.row * grid_width_ + index.col; }
    GridIndex unflat(int id) const noexcept { return {id / grid_width_, id % grid_width_}; }

private:
    int view_ = 0;
    int grid_height_ = 0;
    int grid_width_ = 0;
    int patch_size_ = 1;
    std::vector<GridIndex> indices_;
};

// A token is kept when the fraction of its patch covered by the mask reaches occupancy_frac.
// A non-empty mask that keeps nothing falls back to every patch it touches.
TokenSet tokens_for_mask(const EntityMask& mask, int patch_size, double occupancy_frac,
                         int view = 0);

BinaryMap mask_for_tokens(const TokenSet& tokens);

// Uniform stride subsampling down to max_tokens (0 disables the cap).
TokenSet cap_tokens(const TokenSet& tokens, std::size_t max_tokens);

}  // namespace maskprior
