#include "moelrc/types.hpp"

namespace moelrc {

std::string_view to_string(Projection p) {
  switch (p) {
    case Projection::w1:
      return "w1";
    case Projection::w2:
      return "w2";
    case Projection::w3:
      return "w3";
  }
  return "?";
}

Projection projection_from_string(std::string_view name) {
  if (name == "w1") return Projection::w1;
  if (name == "w2") return Projection::w2;
  if (name == "w3") return Projection::w3;
  throw FormatError("unknown projection '" + std::string(name) + "'");
}

std::string MatrixKey::str() const {
  return "(layer " + std::to_string(layer) + ", expert " + std::to_string(expert) + ", " +
         std::string(to_string(projection)) + ")";
}

}  // namespace moelrc
