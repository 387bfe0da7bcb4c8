#pragma once

#include "moelrc/offload_sim.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace moelrc {

/// Expert-layer dimensions of a named model: "mixtral-8x7b", "mixtral-8x22b",
/// "deepseek-16b", or "toy" (the 2-layer desk-scale model). Dimensions only.
/// Throws ConfigError on an unknown name.
ModelDims dims_preset(std::string_view name);
std::vector<std::string> dims_preset_names();

}  // namespace moelrc
