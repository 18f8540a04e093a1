#pragma once

// Binary model checkpoints. Layout (host byte order, little-endian on the
// supported targets):
//
//   8 bytes   magic "UDECKPT1"
//   u64       encoder seed
//   u64       length of the model config text, then that many bytes
//             (the [model]/[delay]/[encoder] key-value text)
//   u64       parameter count
//   per parameter, in declaration order:
//     u64 name length, name bytes, u64 rows, u64 cols,
//     rows*cols f64 values in column-major order
//
// Loading reproduces every parameter bit for bit.

#include <filesystem>
#include <iosfwd>

#include "ude/encoder.hpp"

namespace ude {

void write_checkpoint(std::ostream& out, const EncoderModel& model);
EncoderModel read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model);
EncoderModel load_checkpoint(const std::filesystem::path& path);

}  // namespace ude
