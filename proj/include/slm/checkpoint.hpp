#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "linear_predictor.hpp"
#include "schedule.hpp"

namespace slm {

// Checkpoint layout, all integers little-endian:
//   "SLMCKPT\0" | u32 version | u64 K, L, C, time_features, hidden, S
//   | u64 model fingerprint | u64 run-config hash | u32 layout length | layout bytes
//   | u64 param count | f64 params...
inline constexpr std::array<char, 8> kCheckpointMagic{'S', 'L', 'M', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Identity of everything a checkpoint's parameters depend on.
inline std::uint64_t model_fingerprint(const PredictorConfig& m, const Schedule& s) {
  const std::string key = "K=" + std::to_string(m.categories) + ";L=" + std::to_string(m.length) +
                          ";C=" + std::to_string(m.classes) + ";F=" + std::to_string(m.time_features) +
                          ";H=" + std::to_string(m.hidden) + ";S=" + std::to_string(s.steps) +
                          ";kind=" + to_string(s.kind) + ";layout=" + m.layout();
  return fnv1a64(key);
}

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  PredictorConfig model;
  std::size_t steps = 1;
  std::uint64_t fingerprint = 0;
  std::uint64_t run_hash = 0;
  std::string layout;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<double> params;
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}
inline void put_u32(std::ostream& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}
inline std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) {
    const int c = in.get();
    if (c == EOF) throw invalid_input("checkpoint: truncated file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}
inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) {
    const int c = in.get();
    if (c == EOF) throw invalid_input("checkpoint: truncated file");
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const ReferencePredictor& model,
                             const Schedule& schedule, std::uint64_t run_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw invalid_input("checkpoint: cannot write " + path);
  const auto& m = model.config();
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(out, kCheckpointVersion);
  for (std::uint64_t v : {m.categories, m.length, m.classes, m.time_features, m.hidden, schedule.steps})
    detail::put_u64(out, v);
  detail::put_u64(out, model_fingerprint(m, schedule));
  detail::put_u64(out, run_hash);
  const std::string layout = m.layout();
  detail::put_u32(out, static_cast<std::uint32_t>(layout.size()));
  out.write(layout.data(), static_cast<std::streamsize>(layout.size()));
  detail::put_u64(out, model.params().size());
  for (double p : model.params()) detail::put_u64(out, std::bit_cast<std::uint64_t>(p));
  if (!out) throw invalid_input("checkpoint: write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("checkpoint: cannot open " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw invalid_input("checkpoint: bad magic in " + path);
  Checkpoint ck;
  auto& h = ck.header;
  h.version = detail::get_u32(in);
  if (h.version != kCheckpointVersion)
    throw invalid_input("checkpoint: unsupported version " + std::to_string(h.version));
  h.model.categories = detail::get_u64(in);
  h.model.length = detail::get_u64(in);
  h.model.classes = detail::get_u64(in);
  h.model.time_features = detail::get_u64(in);
  h.model.hidden = detail::get_u64(in);
  h.steps = detail::get_u64(in);
  h.fingerprint = detail::get_u64(in);
  h.run_hash = detail::get_u64(in);
  const auto layout_len = detail::get_u32(in);
  h.layout.resize(layout_len);
  in.read(h.layout.data(), layout_len);
  const auto count = detail::get_u64(in);
  h.model.validate();
  if (count != h.model.param_count()) throw invalid_input("checkpoint: parameter count does not match header");
  ck.params.resize(count);
  for (auto& p : ck.params) p = std::bit_cast<double>(detail::get_u64(in));
  for (double p : ck.params)
    if (!std::isfinite(p)) throw numeric_fault("checkpoint: non-finite parameter");
  return ck;
}

}  // namespace slm
