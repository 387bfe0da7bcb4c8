#include "moelrc/presets.hpp"

namespace moelrc {

namespace {

// name, hidden, ffn, layers, experts, top-k, shared
const std::vector<ModelDims>& table() {
  static const std::vector<ModelDims> t{
      {"mixtral-8x7b", 4096, 14336, 32, 8, 2, 0},
      {"mixtral-8x22b", 6144, 16384, 56, 8, 2, 0},
      {"deepseek-16b", 2048, 11008, 28, 64, 6, 2},
      {"toy", 64, 128, 2, 8, 2, 0},
  };
  return t;
}

}  // namespace

ModelDims dims_preset(std::string_view name) {
  for (const ModelDims& d : table())
    if (d.name == name) return d;
  std::string known;
  for (const ModelDims& d : table()) known += (known.empty() ? "" : ", ") + d.name;
  throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

std::vector<std::string> dims_preset_names() {
  std::vector<std::string> out;
  for (const ModelDims& d : table()) out.push_back(d.name);
  return out;
}

}  // namespace moelrc
