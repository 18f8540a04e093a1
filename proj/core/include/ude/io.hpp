#pragma once

#include <string>

namespace ude {

/// Shortest-roundtrip-safe text for a double: 17 significant digits.
std::string format_double(double value);

}  // namespace ude
