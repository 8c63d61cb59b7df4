// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fbsnn/checkpoint.hpp"
#include "fbsnn/errors.hpp"
#include "fbsnn/net.hpp"
#include "fbsnn/optimizer.hpp"
#include "fbsnn/paths.hpp"
#include "fbsnn/problems.hpp"
#include "fbsnn/tape.hpp"

namespace fbsnn {

/// Discretized FBSDE loss, summed over paths and steps:
///   sum_m sum_n |Y^{n+1} - Y^n - phi^n dt - (Z^n)' sigma^n dW^n|^2
///   + sum_m |Y^N - g(X^N)|^2
inline Var compute_loss(const TrajectoryBatch& tr, const ProblemSpec& prob) {
  const std::size_t steps = tr.grid.steps;
  if (tr.y.size() != steps + 1 || tr.sigma_dw.size() != steps) {
    throw ContractError("compute_loss: trajectory is incomplete");
  }
  Var total;
  for (std::size_t n = 0; n < steps; ++n) {
    Var phi = prob.generator(tr.grid.t[n], tr.x[n], tr.y[n], tr.z[n]);
    Var martingale = row_sum(hadamard(tr.z[n], tr.sigma_dw[n]));
    Var resid = sub(sub(sub(tr.y[n + 1], tr.y[n]), scale(phi, tr.grid.dt[n])),
                    martingale);
    Var term = sum(hadamard(resid, resid));
    total = n == 0 ? term : add(total, term);
  }
  Var terminal = sub(tr.y[steps], prob.terminal(tr.x[steps]));
  return add(total, sum(hadamard(terminal, terminal)));
}

struct Stage {
  std::size_t iterations = 0;
  double learning_rate = 0.0;
  friend bool operator==(const Stage&, const Stage&) = default;
};

/// Four-stage schedule for full-scale 100-dimensional runs.
inline std::vector<Stage> reference_schedule() {
  return {{20000, 1e-3}, {30000, 1e-4}, {30000, 1e-5}, {20000, 1e-6}};
}

struct TrainConfig {
  std::string problem = "bsb";
  std::size_t dim = 100;
  std::size_t steps = 50;   // N
  std::size_t batch = 100;  // M
  std::vector<std::size_t> hidden{256, 256, 256, 256};
  Activation activation = Activation::Sine;
  InputScaling scaling;
  std::uint64_t seed = 1;
  std::vector<Stage> schedule = reference_schedule();
  std::string checkpoint_path;  // empty: no checkpoints
  std::string log_path;         // empty: no CSV log
  std::size_t log_every = 100;
  std::size_t batch_blocks = 1;  // rollout blocks; fixes the reduction order
  std::size_t threads = 1;       // workers for the blocks
  std::size_t max_divergence_retries = 10;

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s{dim + 1};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(1);
    return s;
  }

  std::size_t total_iterations() const {
    std::size_t n = 0;
    for (const auto& s : schedule) n += s.iterations;
    return n;
  }

  void validate() const {
    if (schedule.empty()) throw ConfigError("schedule must not be empty");
    for (const auto& s : schedule) {
      if (s.iterations == 0) {
        throw ConfigError("schedule stage with zero iterations");
      }
      if (!(s.learning_rate > 0.0)) {
        throw ConfigError("schedule learning rates must be > 0");
      }
    }
    if (dim < 1) throw ConfigError("d must be >= 1");
    if (steps < 1) throw ConfigError("N must be >= 1");
    if (batch < 1) throw ConfigError("M must be >= 1");
    if (batch_blocks < 1 || batch_blocks > batch) {
      throw ConfigError("batch_blocks must be in [1, M]");
    }
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    for (std::size_t h : hidden) {
      if (h < 1) throw ConfigError("hidden layer sizes must be >= 1");
    }
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainRecord {
  std::size_t iteration = 0;  // iterations completed
  double loss = 0.0;          // loss of the batch used in that iteration
  double learning_rate = 0.0;
  double y0_pred = 0.0;       // u(0, xi) after the update
  double elapsed_s = 0.0;
  std::uint64_t seed = 0;     // Brownian batch seed
};

struct TrainHistory {
  std::vector<TrainRecord> records;
};

inline constexpr const char* kTrainLogHeader = "iteration,loss,lr,y0_pred,elapsed_s";

/// Value of u(0, xi).
inline double predict_y0(const NetParams& p, const ProblemSpec& prob) {
  return forward_u(p, Tensor(1, 1), prob.xi)(0, 0);
}

/// Sequential Adam training on fresh Brownian batches.
///
/// Iteration k uses the batch keyed by (seed, draw); `draw` advances once
/// per attempted batch, so a divergent batch is skipped deterministically.
class Trainer {
 public:
  Trainer(TrainConfig cfg, ProblemSpec prob)
      : cfg_(std::move(cfg)), prob_(std::move(prob)) {
    setup();
    params_ = init_params(cfg_.layer_sizes(), cfg_.activation, cfg_.seed);
    params_.scaling = cfg_.scaling;
    adam_ = AdamState::zeros_like(params_);
  }

  /// Continues from a checkpoint written by this class.
  Trainer(TrainConfig cfg, ProblemSpec prob, Checkpoint resume)
      : cfg_(std::move(cfg)), prob_(std::move(prob)) {
    setup();
    if (resume.params.layer_sizes != cfg_.layer_sizes()) {
      throw ConfigError("checkpoint layer sizes " +
                        join_sizes(resume.params.layer_sizes) +
                        " do not match config " + join_sizes(cfg_.layer_sizes()));
    }
    params_ = std::move(resume.params);
    adam_ = std::move(resume.adam);
    try {
      iteration_ = parse_unsigned<std::size_t>(detail::meta_value(resume.meta, "iteration"));
      draw_ = parse_unsigned<std::uint64_t>(detail::meta_value(resume.meta, "draw"));
    } catch (const ConfigError& e) {
      throw IoError(std::string("checkpoint cannot be resumed: ") + e.what());
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const ProblemSpec& problem() const { return prob_; }
  const NetParams& params() const { return params_; }
  const AdamState& adam() const { return adam_; }
  const TrainHistory& history() const { return history_; }
  std::size_t iteration() const { return iteration_; }
  bool done() const { return iteration_ >= cfg_.total_iterations(); }

  /// Learning rate of the (0-based) iteration index.
  double learning_rate_at(std::size_t iteration) const {
    std::size_t end = 0;
    for (const auto& s : cfg_.schedule) {
      end += s.iterations;
      if (iteration < end) return s.learning_rate;
    }
    return cfg_.schedule.back().learning_rate;
  }

  /// Loss and parameter gradients on one Brownian batch.
  std::pair<double, ParamGrads> loss_and_grads(std::uint64_t batch_seed) const {
    auto batch = std::make_shared<const BrownianBatch>(
        sample_brownian(cfg_.batch, grid_, prob_.dim, batch_seed));
    const std::size_t blocks = cfg_.batch_blocks;
    std::vector<double> losses(blocks);
    std::vector<ParamGrads> grads(blocks);
    std::vector<std::exception_ptr> errors(blocks);

    auto run_block = [&](std::size_t b) {
      try {
        const std::size_t begin = b * cfg_.batch / blocks;
        const std::size_t end = (b + 1) * cfg_.batch / blocks;
        auto part = blocks == 1 ? batch
                                : std::make_shared<const BrownianBatch>(
                                      batch->block(begin, end - begin));
        Tape tape;
        NetVars net = bind(tape, params_);
        TrajectoryBatch tr = roll_forward(net, prob_, part, grid_);
        Var loss = compute_loss(tr, prob_);
        losses[b] = loss.value().scalar();
        grads[b] = gather(net, tape.backward(loss));
      } catch (...) {
        errors[b] = std::current_exception();
      }
    };

    const std::size_t workers = std::clamp<std::size_t>(cfg_.threads, 1, blocks);
    if (workers == 1) {
      for (std::size_t b = 0; b < blocks; ++b) run_block(b);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t b = w; b < blocks; b += workers) run_block(b);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    double loss = losses[0];
    ParamGrads total = std::move(grads[0]);
    for (std::size_t b = 1; b < blocks; ++b) {
      loss += losses[b];
      for (std::size_t k = 0; k < total.weights.size(); ++k) {
        total.weights[k].mat() += grads[b].weights[k].mat();
        total.biases[k].mat() += grads[b].biases[k].mat();
      }
    }
    return {loss, std::move(total)};
  }

  /// Runs one iteration, retrying divergent batches.
  TrainRecord step() {
    if (done()) throw ContractError("training schedule already complete");
    const double lr = learning_rate_at(iteration_);
    std::size_t failures = 0;
    while (true) {
      const std::uint64_t batch_seed = stream_key(cfg_.seed, 0x6261746368ULL, draw_++);
      try {
        auto [loss, grads] = loss_and_grads(batch_seed);
        if (!std::isfinite(loss)) {
          throw DivergenceError(grid_.steps, "non-finite loss");
        }
        auto upd = adam_step(params_, grads, adam_, lr);
        params_ = std::move(upd.params);
        adam_ = std::move(upd.state);
        ++iteration_;
        TrainRecord rec;
        rec.iteration = iteration_;
        rec.loss = loss;
        rec.learning_rate = lr;
        rec.y0_pred = predict_y0(params_, prob_);
        rec.seed = batch_seed;
        return rec;
      } catch (const DivergenceError& e) {
        if (++failures >= cfg_.max_divergence_retries) {
          throw DivergenceError(
              e.step(), "training diverged: " + std::to_string(failures) +
                            " consecutive divergent batches at iteration " +
                            std::to_string(iteration_ + 1) + " (last: " +
                            e.what() + ")");
        }
      }
    }
  }

  /// Trains until the schedule completes or `max_iterations` more have run.
  /// Logs every `log_every` iterations (and the first and last), and writes
  /// a checkpoint at each stage boundary.
  void run(std::size_t max_iterations = std::numeric_limits<std::size_t>::max()) {
    std::ofstream log;
    if (!cfg_.log_path.empty()) {
      const bool fresh = iteration_ == 0 || !std::filesystem::exists(cfg_.log_path);
      log.open(cfg_.log_path, fresh ? std::ios::trunc : std::ios::app);
      if (!log) throw IoError("cannot write training log " + cfg_.log_path);
      if (fresh) log << kTrainLogHeader << '\n';
    }
    const auto start = std::chrono::steady_clock::now();
    const std::size_t total = cfg_.total_iterations();
    for (std::size_t k = 0; k < max_iterations && !done(); ++k) {
      TrainRecord rec = step();
      rec.elapsed_s = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start)
                          .count();
      if (rec.iteration % cfg_.log_every == 0 || rec.iteration == 1 ||
          rec.iteration == total) {
        history_.records.push_back(rec);
        if (log) {
          log << rec.iteration << ',' << format_double(rec.loss) << ','
              << format_double(rec.learning_rate) << ','
              << format_double(rec.y0_pred) << ',' << rec.elapsed_s << '\n';
          log.flush();
        }
      }
      if (!cfg_.checkpoint_path.empty() && at_stage_boundary()) {
        save_checkpoint(cfg_.checkpoint_path, params_, adam_, metadata());
      }
    }
  }

  Metadata metadata() const {
    return {{"problem", prob_.name},
            {"d", std::to_string(prob_.dim)},
            {"N", std::to_string(cfg_.steps)},
            {"M", std::to_string(cfg_.batch)},
            {"seed", std::to_string(cfg_.seed)},
            {"iteration", std::to_string(iteration_)},
            {"draw", std::to_string(draw_)}};
  }

  Checkpoint checkpoint() const { return {params_, adam_, metadata()}; }

 private:
  void setup() {
    cfg_.validate();
    prob_.validate();
    if (prob_.dim != cfg_.dim) {
      throw ConfigError("config d = " + std::to_string(cfg_.dim) +
                        " but problem has d = " + std::to_string(prob_.dim));
    }
    grid_ = uniform_grid(prob_.horizon, cfg_.steps);
    for (const std::string& path : {cfg_.checkpoint_path, cfg_.log_path}) {
      if (path.empty()) continue;
      const bool existed = std::filesystem::exists(path);
      std::ofstream probe(path, std::ios::app);
      if (!probe) throw IoError("cannot write " + path);
      probe.close();
      if (!existed) std::filesystem::remove(path);
    }
  }

  bool at_stage_boundary() const {
    std::size_t end = 0;
    for (const auto& s : cfg_.schedule) {
      end += s.iterations;
      if (iteration_ == end) return true;
    }
    return false;
  }

  TrainConfig cfg_;
  ProblemSpec prob_;
  TimeGrid grid_;
  NetParams params_;
  AdamState adam_;
  TrainHistory history_;
  std::size_t iteration_ = 0;
  std::uint64_t draw_ = 0;
};

struct TrainResult {
  NetParams params;
  TrainHistory history;
};

inline TrainResult train(const TrainConfig& cfg, const ProblemSpec& prob) {
  Trainer t(cfg, prob);
  t.run();
  return {t.params(), t.history()};
}

inline TrainResult train(const TrainConfig& cfg) {
  return train(cfg, make_problem(cfg.problem, cfg.dim));
}

}  // namespace fbsnn
