// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fbsnn/errors.hpp"
#include "fbsnn/net.hpp"
#include "fbsnn/optimizer.hpp"
#include "fbsnn/tensor.hpp"

namespace fbsnn {

// Binary layout, all integers little-endian:
//   "FBSN" | u32 version | u64 meta length | meta (UTF-8 "key=value\n" lines)
//   | u32 tensor count | per tensor: u64 rows, u64 cols, rows*cols f64
// Tensors: network W0,b0,W1,b1,..., then Adam first moments, then second
// moments, in the same order.

inline constexpr std::array<char, 4> kCheckpointMagic{'F', 'B', 'S', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  NetParams params;
  AdamState adam;
  Metadata meta;  // caller-supplied keys (problem, seed, iteration, ...)
};

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw ConfigError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

template <typename Int>
Int parse_unsigned(std::string_view s) {
  Int v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw ConfigError("not a non-negative integer: '" + std::string(s) + "'");
  }
  return v;
}

inline std::string join_sizes(const std::vector<std::size_t>& sizes) {
  std::string out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(sizes[i]);
  }
  return out;
}

inline std::vector<std::size_t> split_sizes(std::string_view s) {
  std::vector<std::size_t> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    std::string_view item = s.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    out.push_back(parse_unsigned<std::size_t>(item));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw IoError(std::string("checkpoint truncated while reading ") + what);
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string meta_value(const Metadata& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw IoError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace detail

/// Serializes to bytes; the network-describing keys (layer_sizes,
/// activation, input_*, adam_step) are added to `meta`.
inline std::string encode_checkpoint(const NetParams& params,
                                     const AdamState& adam, Metadata meta) {
  params.check_shapes();
  meta["layer_sizes"] = join_sizes(params.layer_sizes);
  meta["activation"] = std::string(to_string(params.activation));
  meta["input_t_shift"] = format_double(params.scaling.t_shift);
  meta["input_t_scale"] = format_double(params.scaling.t_scale);
  meta["input_x_shift"] = format_double(params.scaling.x_shift);
  meta["input_x_scale"] = format_double(params.scaling.x_scale);
  meta["adam_step"] = std::to_string(adam.step);

  std::string text;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos ||
        v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint metadata entry '" + k + "' not encodable");
    }
    text += k + "=" + v + "\n";
  }

  std::vector<const Tensor*> tensors = params.flat();
  if (adam.first_moment.size() != tensors.size() ||
      adam.second_moment.size() != tensors.size()) {
    throw ContractError("checkpoint: optimizer state does not match network");
  }
  for (const auto& t : adam.first_moment) tensors.push_back(&t);
  for (const auto& t : adam.second_moment) tensors.push_back(&t);

  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, text.size());
  out += text;
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) {
    detail::put_u64(out, t->rows());
    detail::put_u64(out, t->cols());
    for (double v : t->values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::Reader in(bytes);
  auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin())) {
    throw IoError("not a checkpoint file (bad magic bytes)");
  }
  const auto version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto meta_len = in.u64("metadata length");
  std::string_view text = in.take(meta_len, "metadata");

  Metadata meta;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    if (nl == std::string_view::npos) throw IoError("checkpoint metadata unterminated");
    std::string_view line = text.substr(0, nl);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw IoError("checkpoint metadata line without '='");
    }
    meta.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    text.remove_prefix(nl + 1);
  }

  Checkpoint ck;
  try {
    ck.params.layer_sizes = split_sizes(detail::meta_value(meta, "layer_sizes"));
    validate_layer_sizes(ck.params.layer_sizes);
    ck.params.activation = parse_activation(detail::meta_value(meta, "activation"));
    ck.params.scaling.t_shift = parse_double(detail::meta_value(meta, "input_t_shift"));
    ck.params.scaling.t_scale = parse_double(detail::meta_value(meta, "input_t_scale"));
    ck.params.scaling.x_shift = parse_double(detail::meta_value(meta, "input_x_shift"));
    ck.params.scaling.x_scale = parse_double(detail::meta_value(meta, "input_x_scale"));
    ck.adam.step = parse_unsigned<std::uint64_t>(detail::meta_value(meta, "adam_step"));
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint metadata invalid: ") + e.what());
  }

  const std::size_t layers = ck.params.layer_sizes.size() - 1;
  const auto count = in.u32("tensor count");
  if (count != 6 * layers) {
    throw IoError("checkpoint holds " + std::to_string(count) +
                  " tensors, layer sizes imply " + std::to_string(6 * layers));
  }
  std::vector<Tensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rows = in.u64("tensor shape");
    const auto cols = in.u64("tensor shape");
    const std::size_t slot = k % (2 * layers);
    const std::size_t layer = slot / 2;
    const std::size_t want_rows = slot % 2 == 0 ? ck.params.layer_sizes[layer] : 1;
    const std::size_t want_cols = ck.params.layer_sizes[layer + 1];
    if (rows != want_rows || cols != want_cols) {
      throw IoError("checkpoint tensor " + std::to_string(k) + " is " +
                    std::to_string(rows) + "x" + std::to_string(cols) +
                    ", expected " + std::to_string(want_rows) + "x" +
                    std::to_string(want_cols));
    }
    Tensor t(rows, cols);
    for (double& v : t.values()) v = std::bit_cast<double>(in.u64("tensor data"));
    tensors.push_back(std::move(t));
  }
  if (!in.done()) throw IoError("checkpoint has trailing bytes");

  for (std::size_t l = 0; l < layers; ++l) {
    ck.params.weights.push_back(std::move(tensors[2 * l]));
    ck.params.biases.push_back(std::move(tensors[2 * l + 1]));
  }
  for (std::size_t k = 0; k < 2 * layers; ++k) {
    ck.adam.first_moment.push_back(std::move(tensors[2 * layers + k]));
    ck.adam.second_moment.push_back(std::move(tensors[4 * layers + k]));
  }
  for (const char* key : {"layer_sizes", "activation", "input_t_shift", "input_t_scale",
                          "input_x_shift", "input_x_scale", "adam_step"}) {
    meta.erase(key);
  }
  ck.meta = std::move(meta);
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const NetParams& params, const AdamState& adam,
                            const Metadata& meta) {
  const std::string bytes = encode_checkpoint(params, adam, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fbsnn
