#pragma once

#include <array>
#include <string_view>
#include <utility>

namespace embedheight {

inline constexpr std::string_view kLibraryVersion = "1.0.0";

/// Per-module format/behavior versions, recorded in run manifests so a
/// result can be traced back to the code that produced it.
inline constexpr std::array<std::pair<std::string_view, int>, 11> kModuleVersions{{
    {"grid-core", 1},
    {"ingest", 1},
    {"preprocess", 1},
    {"patchset", 1},
    {"autodiff", 1},
    {"nets", 1},
    {"trainer", 1},
    {"baseline-ridge", 1},
    {"metrics", 1},
    {"synthgen", 1},
    {"cli", 1},
}};

}  // namespace embedheight
