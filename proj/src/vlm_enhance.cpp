#include "maskprior/vlm_enhance.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

namespace maskprior {

using json = nlohmann::json;

namespace {

constexpr double kOverlayAlpha = 0.4;

// 3x5 bitmaps for 0-9, one row per 3-bit group, MSB left.
constexpr std::array<std::array<std::uint8_t, 5>, 10> kDigits{{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
}};

std::array<std::uint8_t, 3> hue_color(double hue) {
    // Fully saturated HSV -> RGB
    const double h = hue * 6.0;
    const int sector = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const auto up = static_cast<std::uint8_t>(std::lround(255.0 * f));
    const auto down = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - f)));
    switch (sector) {
    case 0: return {255, up, 0};
    case 1: return {down, 255, 0};
    case 2: return {0, 255, up};
    case 3: return {0, down, 255};
    case 4: return {up, 0, 255};
    default: return {255, 0, down};
    }
}

GridIndex label_anchor(const BinaryMap& mask) {
    double sr = 0, sc = 0;
    std::size_t n = 0;
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c)
            if (mask(r, c)) {
                sr += r;
                sc += c;
                ++n;
            }
    if (n == 0)
        throw Error(ErrorKind::argument, "cannot anchor a label on an empty mask");
    const double cr = sr / static_cast<double>(n);
    const double cc = sc / static_cast<double>(n);
    const int rr = static_cast<int>(std::lround(cr));
    const int rc = static_cast<int>(std::lround(cc));
    if (mask.in_bounds(rr, rc) && mask(rr, rc))
        return {rr, rc};
    GridIndex best{};
    double best_d = std::numeric_limits<double>::infinity();
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c)
            if (mask(r, c)) {
                const double d = (r - cr) * (r - cr) + (c - cc) * (c - cc);
                if (d < best_d) {
                    best_d = d;
                    best = {r, c};
                }
            }
    return best;
}

struct Box {
    int r0, c0, r1, c1;  // inclusive
};

Box bounding_box(const BinaryMap& mask) {
    Box b{mask.height(), mask.width(), -1, -1};
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c)
            if (mask(r, c)) {
                b.r0 = std::min(b.r0, r);
                b.c0 = std::min(b.c0, c);
                b.r1 = std::max(b.r1, r);
                b.c1 = std::max(b.c1, c);
            }
    return b;
}

void draw_label(Image& img, int label, GridIndex anchor, const Box& clip) {
    const std::string text = std::to_string(label);
    const int scale = std::max(2, std::min(img.height(), img.width()) / 96);
    const int glyph_w = 3 * scale;
    const int gap = scale;
    const int text_w = static_cast<int>(text.size()) * glyph_w + (static_cast<int>(text.size()) - 1) * gap;
    const int text_h = 5 * scale;
    const int top = anchor.row - text_h / 2 - scale;
    const int left = anchor.col - text_w / 2 - scale;
    auto put = [&](int r, int c, std::uint8_t v) {
        if (r < clip.r0 || r > clip.r1 || c < clip.c0 || c > clip.c1 || !img.in_bounds(r, c))
            return;
        for (int ch = 0; ch < 3; ++ch)
            img(r, c, ch) = v;
    };
    for (int r = top; r < top + text_h + 2 * scale; ++r)
        for (int c = left; c < left + text_w + 2 * scale; ++c)
            put(r, c, 0);
    for (std::size_t d = 0; d < text.size(); ++d) {
        const auto& glyph = kDigits[static_cast<std::size_t>(text[d] - '0')];
        const int gx = left + scale + static_cast<int>(d) * (glyph_w + gap);
        for (int gr = 0; gr < 5; ++gr)
            for (int gc = 0; gc < 3; ++gc)
                if (glyph[static_cast<std::size_t>(gr)] & (4 >> gc))
                    for (int dy = 0; dy < scale; ++dy)
                        for (int dx = 0; dx < scale; ++dx)
                            put(top + scale + gr * scale + dy, gx + gc * scale + dx, 255);
    }
}

struct Url {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Url parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(url, m, re))
        throw Error(ErrorKind::argument, "VLM endpoint URL must look like http(s)://host[:port]/path");
    return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

std::string message_text(const std::string& body) {
    const json reply = json::parse(body, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() || !reply.contains("choices"))
        return body;
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    if (content.is_string())
        return content.get<std::string>();
    std::string text;
    for (const auto& part : content)
        if (part.value("type", std::string()) == "text")
            text += part.value("text", std::string());
    return text;
}

}  // namespace

std::vector<EntityMask> select_regions(const std::vector<EntityMask>& candidates,
                                       std::int64_t min_region_pixels) {
    std::vector<EntityMask> out;
    for (const auto& m : candidates)
        if (m.pixel_count >= min_region_pixels)
            out.push_back(m);
    return out;
}

RegionQuery annotate(const Image& image, const std::vector<EntityMask>& regions, std::uint64_t seed,
                     int view) {
    RegionQuery query;
    query.view = view;
    query.annotated_image = image;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> hue(0.0, 1.0);
    for (std::size_t k = 0; k < regions.size(); ++k) {
        const auto& mask = regions[k];
        if (mask.pixels.height() != image.height() || mask.pixels.width() != image.width())
            throw Error(ErrorKind::argument, "region mask does not match the image");
        Region region;
        region.label = static_cast<int>(k) + 1;
        region.entity_id = mask.entity_id;
        region.pixel_count = mask.pixel_count;
        region.color = hue_color(hue(rng));
        region.anchor = label_anchor(mask.pixels);
        for (int r = 0; r < image.height(); ++r)
            for (int c = 0; c < image.width(); ++c)
                if (mask.pixels(r, c))
                    for (int ch = 0; ch < 3; ++ch) {
                        const double blended = (1.0 - kOverlayAlpha) * image(r, c, ch) +
                                               kOverlayAlpha * region.color[static_cast<std::size_t>(ch)];
                        query.annotated_image(r, c, ch) = static_cast<std::uint8_t>(std::lround(blended));
                    }
        query.regions.push_back(region);
    }
    // Labels go on after every tint so a later overlay cannot wash out an earlier label.
    for (std::size_t k = 0; k < regions.size(); ++k)
        draw_label(query.annotated_image, query.regions[k].label, query.regions[k].anchor,
                   bounding_box(regions[k].pixels));
    return query;
}

Prompt build_prompt(const RegionQuery& query) {
    if (query.regions.empty())
        throw Error(ErrorKind::argument, "prompt needs at least one region");
    std::ostringstream ids;
    for (std::size_t k = 0; k < query.regions.size(); ++k)
        ids << (k ? ", " : "") << query.regions[k].label;

    std::ostringstream text;
    text << "You are looking at one photograph from a set of images of the same scene, taken from "
            "different viewpoints and used to build a 3D reconstruction.\n"
            "Some regions of the photograph are highlighted with a colored overlay, and each highlighted "
            "region has a numeric identifier drawn at its center.\n\n"
            "For every identifier, decide whether the highlighted region belongs to the static scene "
            "structure (permanent surfaces and fixed objects that stay in place between photographs, "
            "including floors, walls, ceilings, sky and large background areas) or is a transient, "
            "movable occluder (people, animals, vehicles, or objects that could be moved between "
            "photographs).\n\n"
            "Identifiers to classify: "
         << ids.str()
         << ".\n\n"
            "Answer with exactly one line per identifier, in this format:\n"
            "ID: static - short reason\n"
            "ID: transient - short reason\n"
            "where ID is the number drawn on the region. Use only the words static or transient. "
            "After these lines, add a brief, accurate analysis of the image that supports your "
            "decisions.\n";
    return {text.str(), encode_png(query.annotated_image)};
}

VlmClient::VlmClient(VlmEndpointConfig config) : config_(std::move(config)) {
    if (config_.mode == VlmMode::http) {
        parse_url(config_.url);
        if (config_.attempts < 1)
            throw Error(ErrorKind::argument, "VLM attempts must be at least 1");
    }
}

std::string VlmClient::query(const Prompt& prompt, std::vector<VlmExchange>* audit) const {
    if (config_.mode == VlmMode::off)
        return kVlmDisabled;
    const Url url = parse_url(config_.url);

    json body;
    body["model"] = config_.model;
    body["temperature"] = 0;
    body["messages"] = json::array(
        {{{"role", "user"},
          {"content",
           json::array({{{"type", "text"}, {"text", prompt.text}},
                        {{"type", "image_url"},
                         {"image_url",
                          {{"url", "data:image/png;base64," + httplib::detail::base64_encode(prompt.image_png)}}}}})}}});
    json logged = body;
    logged["messages"][0]["content"][1]["image_url"]["url"] =
        "data:image/png;base64,<" + std::to_string(prompt.image_png.size()) + " png bytes elided>";
    const std::string payload = body.dump();

    httplib::Headers headers;
    const char* key = config_.api_key_env.empty() ? nullptr : std::getenv(config_.api_key_env.c_str());
    if (key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
        logged["authorization"] = "Bearer <redacted>";
    }

    httplib::Client client(url.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    std::string last_error;
    bool timed_out = false;
    auto backoff = config_.backoff;
    for (int attempt = 1; attempt <= config_.attempts; ++attempt) {
        VlmExchange ex;
        ex.attempt = attempt;
        ex.request = logged.dump();
        const auto start = std::chrono::steady_clock::now();
        auto res = client.Post(url.path, headers, payload, "application/json");
        const auto elapsed = std::chrono::steady_clock::now() - start;
        if (!res) {
            timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                        (res.error() == httplib::Error::Read && elapsed >= config_.timeout * 9 / 10);
            ex.error = timed_out ? "timeout" : httplib::to_string(res.error());
            last_error = ex.error;
        } else {
            ex.status = res->status;
            ex.response = res->body;
            timed_out = false;
            if (res->status >= 200 && res->status < 300) {
                if (audit)
                    audit->push_back(ex);
                return message_text(res->body);
            }
            last_error = "HTTP " + std::to_string(res->status);
        }
        if (audit)
            audit->push_back(std::move(ex));
        if (attempt < config_.attempts) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
    if (timed_out)
        throw Error(ErrorKind::vlm, "VLM request timeout after " + std::to_string(config_.attempts) + " attempts");
    throw Error(ErrorKind::vlm, "VLM request failed after " + std::to_string(config_.attempts) +
                                    " attempts: " + last_error);
}

std::string query_vlm(const VlmEndpointConfig& config, const Prompt& prompt, std::vector<VlmExchange>* audit) {
    return VlmClient(config).query(prompt, audit);
}

const char* to_string(RegionLabel label) {
    return label == RegionLabel::static_region ? "static" : "transient";
}

VlmVerdict parse_verdict(const std::string& response, const std::vector<int>& expected_ids) {
    // "3: static - wall", "ID 3: Transient", "**2**: static", "Region 1 - transient"
    static const std::regex line_re(
        R"((?:^|[^0-9A-Za-z])(?:id|region)?\s*#?\s*\**(\d+)\**\s*[:.)-]\s*\**\s*(static|transient)\b\**\s*[-:,]*\s*(.*))",
        std::regex::icase);
    VlmVerdict verdict;
    std::size_t parsed = 0;
    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) {
        // en and em dashes read as '-'
        for (const char* dash : {"\xE2\x80\x93", "\xE2\x80\x94"})
            for (auto pos = line.find(dash); pos != std::string::npos; pos = line.find(dash, pos))
                line.replace(pos, 3, "-");
        std::smatch m;
        if (!std::regex_search(line, m, line_re))
            continue;
        ++parsed;
        const int id = std::stoi(m[1].str());
        std::string word = m[2].str();
        std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
        if (std::find(expected_ids.begin(), expected_ids.end(), id) == expected_ids.end()) {
            verdict.warnings.push_back("ignored verdict for unexpected id " + std::to_string(id));
            continue;
        }
        if (verdict.labels.count(id)) {
            verdict.warnings.push_back("duplicate verdict for id " + std::to_string(id) + " ignored");
            continue;
        }
        verdict.labels[id] = word == "static" ? RegionLabel::static_region : RegionLabel::transient_region;
        std::string reason = m[3].str();
        while (!reason.empty() && std::isspace(static_cast<unsigned char>(reason.back())))
            reason.pop_back();
        verdict.rationale[id] = reason;
    }
    if (parsed == 0)
        throw Error(ErrorKind::parse, "VLM reply contains no 'ID: static|transient' line");
    for (int id : expected_ids)
        if (!verdict.labels.count(id)) {
            verdict.labels[id] = RegionLabel::transient_region;
            verdict.warnings.push_back("no verdict for id " + std::to_string(id) + ", kept transient");
        }
    return verdict;
}

}  // namespace maskprior
