#pragma once

#include "maskprior/core.hpp"
#include "maskprior/scene_io.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace maskprior {

inline constexpr std::int64_t kDefaultMinRegionPixels = 20000;
inline constexpr const char* kVlmDisabled = "vlm-disabled";
inline constexpr const char* kVlmKeyEnv = "MASKPRIOR_VLM_KEY";

// Masks whose pixel_count reaches the floor.
std::vector<EntityMask> select_regions(const std::vector<EntityMask>& candidates,
                                       std::int64_t min_region_pixels = kDefaultMinRegionPixels);

struct Region {
    int label = 0;  // identifier drawn on the image, 1-based
    int entity_id = 0;
    GridIndex anchor;  // label position, always a mask pixel
    std::int64_t pixel_count = 0;
    std::array<std::uint8_t, 3> color{};
};

struct RegionQuery {
    int view = 0;
    std::vector<Region> regions;
    Image annotated_image;
};

// Tints each region with a seeded palette colour at alpha 0.4 and stamps its label at the mask
// centroid (moved to the nearest mask pixel when the centroid falls outside). Glyphs are clipped
// to the region's bounding box.
RegionQuery annotate(const Image& image, const std::vector<EntityMask>& regions, std::uint64_t seed,
                     int view = 0);

struct Prompt {
    std::string text;
    std::string image_png;  // encoded annotated image
};

Prompt build_prompt(const RegionQuery& query);

enum class VlmMode { off, http };

struct VlmEndpointConfig {
    VlmMode mode = VlmMode::off;
    std::string url;  // scheme://host[:port]/path of a chat-completions endpoint
    std::string model;
    std::string api_key_env = kVlmKeyEnv;
    std::chrono::milliseconds timeout{60000};
    int attempts = 3;
    std::chrono::milliseconds backoff{500};  // doubled after every failed attempt
};

struct VlmExchange {
    int attempt = 0;
    int status = 0;
    std::string request;  // JSON body with the image payload elided and secrets redacted
    std::string response;
    std::string error;
};

// Chat-completions client. Holds no state between calls apart from the audit log.
class VlmClient {
public:
    explicit VlmClient(VlmEndpointConfig config);

    const VlmEndpointConfig& config() const noexcept { return config_; }

    // Returns the assistant message text, or kVlmDisabled when mode is off.
    std::string query(const Prompt& prompt, std::vector<VlmExchange>* audit = nullptr) const;

private:
    VlmEndpointConfig config_;
};

std::string query_vlm(const VlmEndpointConfig& config, const Prompt& prompt,
                      std::vector<VlmExchange>* audit = nullptr);

enum class RegionLabel { static_region, transient_region };
const char* to_string(RegionLabel label);

struct VlmVerdict {
    std::map<int, RegionLabel> labels;  // keyed by region label id
    std::map<int, std::string> rationale;
    std::vector<std::string> warnings;
};

// Reads "ID: static|transient - reason" lines. Expected ids the reply never mentions default to
// transient; unexpected ids are ignored with a warning. Throws ErrorKind::parse when no line parses.
VlmVerdict parse_verdict(const std::string& response, const std::vector<int>& expected_ids);

}  // namespace maskprior
