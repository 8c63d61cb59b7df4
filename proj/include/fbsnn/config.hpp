// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fbsnn/checkpoint.hpp"
#include "fbsnn/errors.hpp"
#include "fbsnn/trainer.hpp"

namespace fbsnn {

/// High bit reserved for evaluation seeds so test paths never reuse a
/// training batch.
inline constexpr std::uint64_t kTestSeedBit = 1ULL << 63;

/// Everything a CLI run needs: training settings plus evaluation settings.
struct RunConfig {
  TrainConfig train;
  std::size_t test_paths = 100;        // M_test
  std::uint64_t test_seed = 1;         // below 2^63; high bit added on use
  std::size_t oracle_samples = 10000;  // HJB Monte-Carlo samples per point
  std::string output_dir = "fbsnn_out";

  std::uint64_t effective_test_seed() const { return test_seed | kTestSeedBit; }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<Stage> parse_schedule(std::string_view s) {
  std::vector<Stage> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    std::string_view item = trim(s.substr(0, comma));
    const auto at = item.find('@');
    if (at == std::string_view::npos) {
      throw ConfigError("schedule entry '" + std::string(item) +
                        "' is not <iterations>@<learning rate>");
    }
    out.push_back({parse_unsigned<std::size_t>(trim(item.substr(0, at))),
                   parse_double(trim(item.substr(at + 1)))});
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

inline std::string format_schedule(const std::vector<Stage>& stages) {
  std::string out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(stages[i].iterations) + "@" +
           format_double(stages[i].learning_rate);
  }
  return out;
}

struct ProblemDefaults {
  std::size_t dim;
  std::size_t steps;
};

inline ProblemDefaults problem_defaults(const std::string& problem) {
  if (problem == "bsb" || problem == "hjb") return {100, 50};
  if (problem == "ac") return {20, 15};
  throw ConfigError("unknown problem '" + problem + "' (expected bsb, hjb or ac)");
}

}  // namespace detail

/// Strict `key = value` parser; `#` starts a comment. `source` names the
/// input in error messages.
inline RunConfig parse_config_text(std::string_view text,
                                   const std::string& source = "<config>") {
  RunConfig c;
  std::set<std::string> seen;
  std::map<std::string, std::size_t> line_of;
  std::string checkpoint;
  std::size_t line_no = 0;

  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(where + "expected 'key = value'");
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError(where + "duplicate key '" + key + "'");
    }
    line_of[key] = line_no;

    try {
      TrainConfig& t = c.train;
      if (key == "problem") {
        t.problem = std::string(value);
        detail::problem_defaults(t.problem);
      } else if (key == "d") {
        t.dim = parse_unsigned<std::size_t>(value);
      } else if (key == "N") {
        t.steps = parse_unsigned<std::size_t>(value);
      } else if (key == "M") {
        t.batch = parse_unsigned<std::size_t>(value);
      } else if (key == "hidden") {
        t.hidden = value == "none" ? std::vector<std::size_t>{} : split_sizes(value);
      } else if (key == "activation") {
        t.activation = parse_activation(value);
      } else if (key == "seed") {
        t.seed = parse_unsigned<std::uint64_t>(value);
      } else if (key == "schedule") {
        t.schedule = detail::parse_schedule(value);
      } else if (key == "log_every") {
        t.log_every = parse_unsigned<std::size_t>(value);
      } else if (key == "batch_blocks") {
        t.batch_blocks = parse_unsigned<std::size_t>(value);
      } else if (key == "input_t_shift") {
        t.scaling.t_shift = parse_double(value);
      } else if (key == "input_t_scale") {
        t.scaling.t_scale = parse_double(value);
      } else if (key == "input_x_shift") {
        t.scaling.x_shift = parse_double(value);
      } else if (key == "input_x_scale") {
        t.scaling.x_scale = parse_double(value);
      } else if (key == "checkpoint") {
        checkpoint = std::string(value);
      } else if (key == "output_dir") {
        c.output_dir = std::string(value);
      } else if (key == "M_test") {
        c.test_paths = parse_unsigned<std::size_t>(value);
      } else if (key == "test_seed") {
        c.test_seed = parse_unsigned<std::uint64_t>(value);
      } else if (key == "hjb_samples") {
        c.oracle_samples = parse_unsigned<std::size_t>(value);
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      if (std::string_view(e.what()).starts_with("unknown key")) {
        throw ConfigError(where + e.what());
      }
      throw ConfigError(where + key + ": " + e.what());
    }
  }

  auto at = [&](const std::string& key) {
    auto it = line_of.find(key);
    return source + (it == line_of.end() ? "" : ":" + std::to_string(it->second)) + ": ";
  };
  if (!seen.contains("problem")) throw ConfigError(source + ": missing key 'problem'");
  const auto defaults = detail::problem_defaults(c.train.problem);
  if (!seen.contains("d")) c.train.dim = defaults.dim;
  if (!seen.contains("N")) c.train.steps = defaults.steps;
  if (c.output_dir.empty()) throw ConfigError(at("output_dir") + "output_dir is empty");
  const std::filesystem::path out(c.output_dir);
  c.train.checkpoint_path =
      checkpoint.empty() ? (out / "checkpoint.fbsn").string() : checkpoint;
  c.train.log_path = (out / "train_log.csv").string();

  if (c.train.seed & kTestSeedBit) {
    throw ConfigError(at("seed") +
                      "seed must be below 2^63 (the high bit marks test seeds)");
  }
  if (c.test_seed & kTestSeedBit) {
    throw ConfigError(at("test_seed") +
                      "test_seed must be below 2^63 (the high bit is added internally)");
  }
  if (c.test_paths < 1) throw ConfigError(at("M_test") + "M_test must be >= 1");
  if (c.oracle_samples < 1) {
    throw ConfigError(at("hjb_samples") + "hjb_samples must be >= 1");
  }
  if (c.train.problem == "bsb" && c.train.dim % 2 != 0) {
    throw ConfigError(at("d") + "bsb needs an even dimension");
  }
  try {
    c.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

/// Fully resolved config; parse_config_text() of this text reproduces `c`.
inline std::string to_config_text(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::ostringstream o;
  o << "problem = " << t.problem << '\n'
    << "d = " << t.dim << '\n'
    << "N = " << t.steps << '\n'
    << "M = " << t.batch << '\n'
    << "hidden = " << (t.hidden.empty() ? "none" : join_sizes(t.hidden)) << '\n'
    << "activation = " << to_string(t.activation) << '\n'
    << "seed = " << t.seed << '\n'
    << "schedule = " << detail::format_schedule(t.schedule) << '\n'
    << "log_every = " << t.log_every << '\n'
    << "batch_blocks = " << t.batch_blocks << '\n'
    << "input_t_shift = " << format_double(t.scaling.t_shift) << '\n'
    << "input_t_scale = " << format_double(t.scaling.t_scale) << '\n'
    << "input_x_shift = " << format_double(t.scaling.x_shift) << '\n'
    << "input_x_scale = " << format_double(t.scaling.x_scale) << '\n'
    << "output_dir = " << c.output_dir << '\n'
    << "checkpoint = " << t.checkpoint_path << '\n'
    << "M_test = " << c.test_paths << '\n'
    << "test_seed = " << c.test_seed << '\n'
    << "hjb_samples = " << c.oracle_samples << '\n';
  return o.str();
}

/// Worker cap from FBSNN_THREADS (default: hardware concurrency).
inline std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FBSNN_THREADS")) {
    try {
      n = std::max<std::size_t>(1, parse_unsigned<std::size_t>(env));
    } catch (const ConfigError&) {
      throw ConfigError("FBSNN_THREADS must be a positive integer");
    }
  }
  return n;
}

}  // namespace fbsnn
