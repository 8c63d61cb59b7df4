// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>

#include "fbsnn/checkpoint.hpp"
#include "fbsnn/config.hpp"
#include "fbsnn/errors.hpp"
#include "fbsnn/evaluation.hpp"
#include "fbsnn/problems.hpp"
#include "fbsnn/trainer.hpp"

namespace fbsnn {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2 };

using ProblemFactory = std::function<ProblemSpec(const RunConfig&)>;

inline ProblemSpec builtin_problem(const RunConfig& c) {
  return make_problem(c.train.problem, c.train.dim, c.oracle_samples);
}

namespace detail {

template <typename Body>
int guarded(std::ostream& err, const char* command, Body&& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "fbsnn " << command << ": configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "fbsnn " << command << ": divergence: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "fbsnn " << command << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

/// Names the first field where a checkpoint disagrees with the config.
inline void check_compatible(const Checkpoint& ck, const RunConfig& c) {
  auto mismatch = [](const std::string& field, const std::string& have,
                     const std::string& want) {
    throw ContractError("checkpoint/config mismatch in '" + field +
                        "': checkpoint has " + have + ", config has " + want);
  };
  auto meta = [&](const char* key) {
    auto it = ck.meta.find(key);
    return it == ck.meta.end() ? std::string("<missing>") : it->second;
  };
  if (meta("problem") != c.train.problem) {
    mismatch("problem", meta("problem"), c.train.problem);
  }
  if (ck.params.dim() != c.train.dim) {
    mismatch("d", std::to_string(ck.params.dim()), std::to_string(c.train.dim));
  }
  if (ck.params.layer_sizes != c.train.layer_sizes()) {
    mismatch("hidden", join_sizes(ck.params.layer_sizes),
             join_sizes(c.train.layer_sizes()));
  }
  if (ck.params.activation != c.train.activation) {
    mismatch("activation", std::string(to_string(ck.params.activation)),
             std::string(to_string(c.train.activation)));
  }
  if (!(ck.params.scaling == c.train.scaling)) {
    auto text = [](const InputScaling& s) {
      return format_double(s.t_shift) + "," + format_double(s.t_scale) + "," +
             format_double(s.x_shift) + "," + format_double(s.x_scale);
    };
    mismatch("input scaling", text(ck.params.scaling), text(c.train.scaling));
  }
}

}  // namespace detail

/// Trains, writing the checkpoint, `train_log.csv` and `resolved_config.txt`.
inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err,
                     const ProblemFactory& factory = builtin_problem) {
  return detail::guarded(err, "train", [&] {
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    {
      auto echo = detail::open_output(dir / "resolved_config.txt");
      echo << to_config_text(cfg);
    }
    Trainer trainer(cfg.train, factory(cfg));
    trainer.run();
    const auto& records = trainer.history().records;
    out << "trained " << trainer.iteration() << " iterations";
    if (!records.empty()) {
      out << ", final loss " << records.back().loss << ", y0 "
          << records.back().y0_pred;
    }
    out << "\ncheckpoint: " << cfg.train.checkpoint_path << '\n';
  });
}

/// Writes `trajectories.csv`, `error_curves.csv` (only when an exact
/// solution exists) and `summary.csv` for fresh test paths.
inline int cmd_evaluate(const RunConfig& cfg,
                        const std::filesystem::path& checkpoint,
                        std::ostream& out, std::ostream& err,
                        const ProblemFactory& factory = builtin_problem) {
  return detail::guarded(err, "evaluate", [&] {
    const Checkpoint ck = load_checkpoint(checkpoint);
    detail::check_compatible(ck, cfg);
    const ProblemSpec prob = factory(cfg);
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);

    const TrajectoryBatch tr = predict_trajectories(
        ck.params, prob, cfg.test_paths, cfg.train.steps,
        cfg.effective_test_seed());
    std::optional<ReferenceValues> ref;
    if (prob.has_exact()) ref = reference_along(tr, prob);
    const bool with_se = ref && ref->std_errors.front().has_value();

    {
      auto csv = detail::open_output(dir / "trajectories.csv");
      csv << "path_id,step,t";
      for (std::size_t i = 0; i < prob.dim; ++i) csv << ",x_" << i;
      csv << ",y_pred";
      if (ref) csv << ",y_exact";
      if (with_se) csv << ",exact_stderr";
      csv << '\n';
      for (std::size_t m = 0; m < tr.samples(); ++m) {
        for (std::size_t n = 0; n < tr.x.size(); ++n) {
          csv << m << ',' << n << ',' << tr.grid.t[n];
          for (std::size_t i = 0; i < prob.dim; ++i) csv << ',' << tr.x[n].value()(m, i);
          csv << ',' << tr.y[n].value()(m, 0);
          if (ref) csv << ',' << ref->values[n](m, 0);
          if (with_se) csv << ',' << (*ref->std_errors[n])(m, 0);
          csv << '\n';
        }
      }
    }

    const std::filesystem::path curves_path = dir / "error_curves.csv";
    if (ref) {
      const ErrorCurves curves = error_curves(tr.grid.t, predicted_values(tr), *ref);
      auto csv = detail::open_output(curves_path);
      csv << "t,mean_rel_err,mean_plus_2std\n";
      for (std::size_t n = 0; n < curves.times.size(); ++n) {
        csv << curves.times[n] << ',' << curves.mean_rel_err[n] << ','
            << curves.mean_plus_2std[n] << '\n';
      }
    } else {
      std::filesystem::remove(curves_path);
    }

    const Y0Summary s = y0_summary(ck.params, prob);
    {
      auto csv = detail::open_output(dir / "summary.csv");
      csv << "y0_pred,y0_ref,rel_err\n" << s.y0_pred << ',';
      if (s.y0_ref) csv << *s.y0_ref;
      csv << ',';
      if (s.rel_err) csv << *s.rel_err;
      csv << '\n';
    }
    out << "y0_pred " << s.y0_pred;
    if (s.y0_ref) out << ", y0_ref " << *s.y0_ref << ", rel_err " << *s.rel_err;
    out << '\n';
  });
}

/// One line per metadata entry, then one line per network tensor with its
/// shape and Frobenius norm.
inline int cmd_export(const std::filesystem::path& checkpoint, std::ostream& out,
                      std::ostream& err) {
  return detail::guarded(err, "export", [&] {
    const Checkpoint ck = load_checkpoint(checkpoint);
    out << std::setprecision(17);
    out << "layer_sizes=" << join_sizes(ck.params.layer_sizes) << '\n'
        << "activation=" << to_string(ck.params.activation) << '\n'
        << "parameters=" << ck.params.parameter_count() << '\n'
        << "adam_step=" << ck.adam.step << '\n';
    for (const auto& [k, v] : ck.meta) out << k << '=' << v << '\n';
    for (std::size_t l = 0; l < ck.params.layers(); ++l) {
      const Tensor& w = ck.params.weights[l];
      const Tensor& b = ck.params.biases[l];
      out << "weight[" << l << "] " << w.shape_string() << " frobenius="
          << frobenius_norm(w) << '\n';
      out << "bias[" << l << "] " << b.shape_string() << " frobenius="
          << frobenius_norm(b) << '\n';
    }
  });
}

}  // namespace fbsnn
