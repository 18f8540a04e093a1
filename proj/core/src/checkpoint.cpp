#include "ude/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "ude/config.hpp"
#include "ude/error.hpp"

namespace ude {

namespace {

constexpr char kMagic[8] = {'U', 'D', 'E', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    fail(ErrorCode::Parse, "checkpoint truncated");
  }
  return v;
}

std::string get_string(std::istream& in, std::uint64_t max_len) {
  const std::uint64_t n = get_u64(in);
  if (n > max_len) fail(ErrorCode::Parse, "checkpoint string length out of range");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    fail(ErrorCode::Parse, "checkpoint truncated");
  }
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const EncoderModel& model) {
  out.write(kMagic, sizeof(kMagic));
  put_u64(out, model.config().encoder.seed);
  const std::string cfg = model_config_text(model.config());
  put_u64(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_u64(out, model.parameters().size());
  for (const auto& p : model.parameters()) {
    put_u64(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u64(out, static_cast<std::uint64_t>(p.value.rows()));
    put_u64(out, static_cast<std::uint64_t>(p.value.cols()));
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
}

EncoderModel read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::Parse, "not a ude checkpoint (bad magic)");
  }
  const std::uint64_t seed = get_u64(in);
  ModelConfig cfg = parse_model_config_text(get_string(in, 1 << 20));
  cfg.encoder.seed = seed;
  EncoderModel model(cfg);
  auto& params = model.parameters();
  const std::uint64_t count = get_u64(in);
  if (count != params.size()) {
    fail(ErrorCode::Parse, "checkpoint holds " + std::to_string(count) +
                               " parameters, config implies " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = get_string(in, 4096);
    const std::uint64_t rows = get_u64(in);
    const std::uint64_t cols = get_u64(in);
    if (name != p.name || rows != static_cast<std::uint64_t>(p.value.rows()) ||
        cols != static_cast<std::uint64_t>(p.value.cols())) {
      fail(ErrorCode::Parse, "checkpoint parameter '" + name + "' does not match '" + p.name + "'");
    }
    if (!in.read(reinterpret_cast<char*>(p.value.data()),
                 static_cast<std::streamsize>(p.value.size() * sizeof(double)))) {
      fail(ErrorCode::Parse, "checkpoint truncated in parameter '" + name + "'");
    }
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(out, model);
  if (!out) fail(ErrorCode::Io, "writing checkpoint '" + path.string() + "' failed");
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace ude
