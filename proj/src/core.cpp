#include "maskprior/core.hpp"

#include <algorithm>

namespace maskprior {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::validation: return "validation";
    case ErrorKind::attention: return "attention";
    case ErrorKind::vlm: return "vlm";
    case ErrorKind::parse: return "parse";
    case ErrorKind::argument: return "argument";
    }
    return "unknown";
}

std::size_t count_set(const BinaryMap& map) {
    return static_cast<std::size_t>(
        std::count_if(map.data().begin(), map.data().end(), [](std::uint8_t v) { return v != 0; }));
}

}  // namespace maskprior
