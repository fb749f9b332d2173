#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace specalign {

/// Spectral band index; the routing key for stems, adapters and modality embeddings.
enum class Modality : std::uint8_t { rgb = 0, nir = 1, swir = 2, lwir = 3 };

inline constexpr int kNumModalities = 4;
inline constexpr std::array<Modality, 4> kAllModalities{Modality::rgb, Modality::nir, Modality::swir,
                                                        Modality::lwir};
/// Round-robin cycle order of the multispectral bands.
inline constexpr std::array<Modality, 3> kSpectralModalities{Modality::nir, Modality::swir, Modality::lwir};

/// Throws RoutingError for values outside {0,1,2,3}.
Modality modality_from_index(int index);
constexpr int index_of(Modality m) { return static_cast<int>(m); }
constexpr int channels_for(Modality m) { return m == Modality::rgb ? 3 : 1; }

std::string_view to_string(Modality m);
/// Accepts "rgb", "nir", "swir", "lwir" (case-insensitive).
Modality parse_modality(std::string_view name);

}  // namespace specalign
