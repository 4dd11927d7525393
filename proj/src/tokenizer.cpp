#include "maskprior/tokenizer.hpp"

#include <algorithm>

namespace maskprior {

TokenSet::TokenSet(int view, int grid_height, int grid_width, int patch_size,
                   std::vector<GridIndex> indices)
    : view_(view), grid_height_(grid_height), grid_width_(grid_width), patch_size_(patch_size),
      indices_(std::move(indices)) {
    for (const auto& g : indices_)
        if (g.row < 0 || g.col < 0 || g.row >= grid_height_ || g.col >= grid_width_)
            throw Error(ErrorKind::argument, "token index outside the grid");
    std::sort(indices_.begin(), indices_.end());
    indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
}

std::vector<int> TokenSet::flat_ids() const {
    std::vector<int> ids;
    ids.reserve(indices_.size());
    for (const auto& g : indices_)
        ids.push_back(flat(g));
    return ids;
}

bool TokenSet::contains(GridIndex index) const {
    return std::binary_search(indices_.begin(), indices_.end(), index);
}

TokenSet tokens_for_mask(const EntityMask& mask, int patch_size, double occupancy_frac, int view) {
    if (!(occupancy_frac > 0.0 && occupancy_frac <= 1.0))
        throw Error(ErrorKind::argument, "occupancy_frac must lie in (0, 1]");
    const auto& px = mask.pixels;
    if (patch_size < 1 || px.height() % patch_size || px.width() % patch_size)
        throw Error(ErrorKind::argument, "mask dimensions are not divisible by patch_size");
    const int gh = px.height() / patch_size;
    const int gw = px.width() / patch_size;

    std::vector<int> counts(static_cast<std::size_t>(gh) * gw, 0);
    for (int r = 0; r < px.height(); ++r)
        for (int c = 0; c < px.width(); ++c)
            if (px(r, c))
                ++counts[static_cast<std::size_t>(r / patch_size) * gw + c / patch_size];

    const double area = static_cast<double>(patch_size) * patch_size;
    std::vector<GridIndex> kept;
    std::vector<GridIndex> touched;
    for (int gr = 0; gr < gh; ++gr)
        for (int gc = 0; gc < gw; ++gc) {
            const int n = counts[static_cast<std::size_t>(gr) * gw + gc];
            if (n == 0)
                continue;
            touched.push_back({gr, gc});
            if (static_cast<double>(n) >= occupancy_frac * area)
                kept.push_back({gr, gc});
        }
    return TokenSet(view, gh, gw, patch_size, kept.empty() ? std::move(touched) : std::move(kept));
}

BinaryMap mask_for_tokens(const TokenSet& tokens) {
    const int p = tokens.patch_size();
    BinaryMap out(tokens.grid_height() * p, tokens.grid_width() * p);
    for (const auto& g : tokens.indices())
        for (int r = g.row * p; r < (g.row + 1) * p; ++r)
            for (int c = g.col * p; c < (g.col + 1) * p; ++c)
                out(r, c) = 1;
    return out;
}

TokenSet cap_tokens(const TokenSet& tokens, std::size_t max_tokens) {
    if (max_tokens == 0 || tokens.size() <= max_tokens)
        return tokens;
    const auto& all = tokens.indices();
    std::vector<GridIndex> picked;
    picked.reserve(max_tokens);
    for (std::size_t k = 0; k < max_tokens; ++k)
        picked.push_back(all[k * all.size() / max_tokens]);
    return TokenSet(tokens.view(), tokens.grid_height(), tokens.grid_width(), tokens.patch_size(),
                    std::move(picked));
}

}  // namespace maskprior
