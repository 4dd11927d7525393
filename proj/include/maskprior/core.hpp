#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskprior {

enum class ErrorKind {
    io,          // missing or unwritable files
    validation,  // shape, dtype or invariant violations
    attention,   // requested attention dump not present
    vlm,         // endpoint transport or timeout failures
    parse,       // unparsable VLM replies
    argument,    // caller violated a precondition
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Row-major H x W x C array.
template <typename T>
class Raster {
public:
    Raster() = default;
    Raster(int height, int width, int channels = 1, T fill = T{})
        : height_(height), width_(width), channels_(channels), data_(checked_size(height, width, channels), fill) {}

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int row, int col, int ch = 0) { return data_[offset(row, col, ch)]; }
    const T& operator()(int row, int col, int ch = 0) const { return data_[offset(row, col, ch)]; }

    bool in_bounds(int row, int col) const noexcept {
        return row >= 0 && col >= 0 && row < height_ && col < width_;
    }
    bool same_shape(const Raster& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool operator==(const Raster&) const = default;

private:
    static std::size_t checked_size(int height, int width, int channels) {
        if (height < 0 || width < 0 || channels < 1)
            throw Error(ErrorKind::argument, "raster dimensions must be non-negative");
        return static_cast<std::size_t>(height) * width * channels;
    }
    std::size_t offset(int row, int col, int ch) const noexcept {
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 1;
    std::vector<T> data_;
};

// Single-channel map holding 0 or 1.
using BinaryMap = Raster<std::uint8_t>;
// Three-channel 8-bit color image.
using Image = Raster<std::uint8_t>;
using DepthMap = Raster<float>;

std::size_t count_set(const BinaryMap& map);

struct GridIndex {
    int row = 0;
    int col = 0;
    auto operator<=>(const GridIndex&) const = default;
};

}  // namespace maskprior
