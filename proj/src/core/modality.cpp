#include "specalign/core/modality.hpp"

#include <algorithm>
#include <cctype>

#include "specalign/core/errors.hpp"

namespace specalign {

Modality modality_from_index(int index) {
  if (index < 0 || index >= kNumModalities) {
    throw RoutingError("modality index " + std::to_string(index) + " outside {0,1,2,3}");
  }
  return static_cast<Modality>(index);
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::rgb:
      return "rgb";
    case Modality::nir:
      return "nir";
    case Modality::swir:
      return "swir";
    case Modality::lwir:
      return "lwir";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Modality m : kAllModalities) {
    if (lower == to_string(m)) return m;
  }
  throw RoutingError("unknown modality '" + std::string(name) + "'");
}

}  // namespace specalign
