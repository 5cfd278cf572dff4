// Command-line front end for the polymatch library: entropic multi-marginal
// matching, the multiway matching-gap loss, and the desk-scale experiment
// drivers (gradient flow, synthetic training, solver scaling grid).
//
// Exit codes: 0 on success, 1 for invalid arguments or malformed inputs,
// 2 when a computation hits non-finite values.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "polymatch/bench.hpp"
#include "polymatch/costs.hpp"
#include "polymatch/errors.hpp"
#include "polymatch/flow.hpp"
#include "polymatch/io.hpp"
#include "polymatch/m3g.hpp"
#include "polymatch/pairwise.hpp"
#include "polymatch/solver.hpp"
#include "polymatch/train.hpp"

namespace {

using nlohmann::json;
using namespace polymatch;

constexpr const char* kTopDescription =
    "polymatch: entropic multi-marginal matching and the multiway matching-gap loss.\n"
    "\n"
    "Tensors travel as PMT1 files (one-line JSON header, then row-major\n"
    "little-endian f64), embeddings and gradients as PME1 files (header, then\n"
    "[view][point][dim] f64). JSON results go to stdout unless --out is given;\n"
    "for flow, --out is the trajectory CSV and the summary stays on stdout.\n"
    "Set POLYMATCH_THREADS to pin the worker count; with a fixed seed, config,\n"
    "and thread count every output except bench wall-times is byte-identical\n"
    "across runs. Exit codes: 0 ok, 1 invalid input, 2 numerical failure.";

void write_text_file(const std::string& path, const std::string& text, const char* who) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::invalid_argument(std::string(who) + ": cannot open '" + path +
                                "' for writing");
  }
  out << text;
  if (!out) throw std::invalid_argument(std::string(who) + ": failed writing '" + path + "'");
}

void emit_json(const json& j, const std::string& out_path) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text_file(out_path, text, "output");
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

MultiwayCost cost_by_label(const std::string& label) {
  if (label == "cv") return MultiwayCost::circular_variance();
  if (label == "csd") return MultiwayCost::circular_stddev();
  throw std::invalid_argument("--cost must be \"cv\" or \"csd\", got \"" + label + "\"");
}

/// Fills option values from a JSON config file; explicit command-line flags
/// win over file values. Keys are the long option names without the leading
/// dashes. Unknown keys are rejected so typos do not pass silently.
class ConfigMerge {
 public:
  ConfigMerge(CLI::App* cmd, const std::string& path) : cmd_(cmd) {
    if (path.empty()) return;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    cfg_ = json::parse(buffer.str(), nullptr, false);
    if (cfg_.is_discarded() || !cfg_.is_object()) {
      throw std::invalid_argument("config: '" + path + "' is not a JSON object");
    }
  }

  template <class T>
  void apply(const std::string& key, T& value) {
    known_.insert(key);
    if (!cfg_.is_object() || !cfg_.contains(key)) return;
    if (cmd_->count("--" + key) > 0) return;
    try {
      value = cfg_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config: field \"" + key + "\" has the wrong type");
    }
  }

  void finish() const {
    if (!cfg_.is_object()) return;
    for (const auto& item : cfg_.items()) {
      if (known_.find(item.key()) == known_.end()) {
        throw std::invalid_argument("config: unknown field \"" + item.key() + "\"");
      }
    }
  }

 private:
  CLI::App* cmd_;
  json cfg_;
  std::set<std::string> known_;
};

// ---------------------------------------------------------------------------
// solve

struct SolveArgs {
  std::string cost_file, config, out, coupling_out;
  double epsilon = 1.0;
  double tol = 1e-3;
  int max_iters = 1000;
  int check_every = 1;
};

void register_solve(CLI::App& app, SolveArgs& a) {
  CLI::App* cmd = app.add_subcommand(
      "solve", "Solve entropic transport between the uniform marginals of a cost tensor");
  cmd->add_option("--cost-file", a.cost_file, "Cost tensor (PMT1)");
  cmd->add_option("--epsilon", a.epsilon, "Entropic strength (> 0)");
  cmd->add_option("--tol", a.tol, "Marginal-deviation stopping tolerance");
  cmd->add_option("--max-iters", a.max_iters, "Sweep budget");
  cmd->add_option("--check-every", a.check_every, "Sweeps between convergence checks");
  cmd->add_option("--coupling-out", a.coupling_out, "Write the coupling here (PMT1)");
  cmd->add_option("--config", a.config, "JSON config file (flags override its fields)");
  cmd->add_option("--out", a.out, "Write the JSON result here instead of stdout");
  cmd->callback([cmd, &a] {
    ConfigMerge merge(cmd, a.config);
    merge.apply("cost-file", a.cost_file);
    merge.apply("epsilon", a.epsilon);
    merge.apply("tol", a.tol);
    merge.apply("max-iters", a.max_iters);
    merge.apply("check-every", a.check_every);
    merge.apply("coupling-out", a.coupling_out);
    merge.apply("out", a.out);
    merge.finish();
    if (a.cost_file.empty())
      throw std::invalid_argument("solve: --cost-file is required (flag or config field)");

    const DenseTensor cost = read_tensor(a.cost_file);
    SolverConfig cfg;
    cfg.epsilon = a.epsilon;
    cfg.tolerance = a.tol;
    cfg.max_iterations = a.max_iters;
    cfg.check_every = a.check_every;
    const SolveReport rep = mm_sinkhorn(cost, cfg);
    if (!a.coupling_out.empty()) write_tensor(a.coupling_out, rep.coupling);
    emit_json(json{{"k", cost.shape().k},
                   {"n", cost.shape().n},
                   {"epsilon", a.epsilon},
                   {"ot_value", rep.ot_value},
                   {"iterations", rep.iterations},
                   {"delta", rep.deviation},
                   {"converged", rep.converged}},
              a.out);
  });
}

// ---------------------------------------------------------------------------
// m3g

struct M3gArgs {
  std::string embeddings, config, out, grad_out, coupling_out;
  std::string cost = "cv";
  double epsilon = 0.2;
  double tol = 1e-6;
  int max_iters = 2000;
};

void register_m3g(CLI::App& app, M3gArgs& a) {
  CLI::App* cmd = app.add_subcommand(
      "m3g", "Evaluate the multiway matching-gap loss (and optionally its gradient)");
  cmd->add_option("--embeddings", a.embeddings, "Embedding batch (PME1)");
  cmd->add_option("--cost", a.cost, "Multiway cost: cv or csd");
  cmd->add_option("--epsilon", a.epsilon, "Entropic strength (> 0)");
  cmd->add_option("--tol", a.tol, "Solver stopping tolerance");
  cmd->add_option("--max-iters", a.max_iters, "Solver sweep budget");
  cmd->add_option("--grad", a.grad_out, "Write the loss gradient here (PME1)");
  cmd->add_option("--coupling-out", a.coupling_out, "Write the coupling here (PMT1)");
  cmd->add_option("--config", a.config, "JSON config file (flags override its fields)");
  cmd->add_option("--out", a.out, "Write the JSON result here instead of stdout");
  cmd->callback([cmd, &a] {
    ConfigMerge merge(cmd, a.config);
    merge.apply("embeddings", a.embeddings);
    merge.apply("cost", a.cost);
    merge.apply("epsilon", a.epsilon);
    merge.apply("tol", a.tol);
    merge.apply("max-iters", a.max_iters);
    merge.apply("grad", a.grad_out);
    merge.apply("coupling-out", a.coupling_out);
    merge.apply("out", a.out);
    merge.finish();
    if (a.embeddings.empty())
      throw std::invalid_argument("m3g: --embeddings is required (flag or config field)");

    const EmbeddingBatch x = read_embeddings(a.embeddings);
    const MultiwayCost cost = cost_by_label(a.cost);
    SolverConfig cfg;
    cfg.epsilon = a.epsilon;
    cfg.tolerance = a.tol;
    cfg.max_iterations = a.max_iters;

    json j{{"k", x.views()}, {"n", x.points()}, {"d", x.dim()},
           {"cost", a.cost}, {"epsilon", a.epsilon}};
    if (a.grad_out.empty()) {
      const M3GResult r = m3g(x, cost, cfg);
      if (!a.coupling_out.empty()) write_tensor(a.coupling_out, r.coupling());
      j["loss"] = r.loss;
      j["ground_truth_cost"] = r.ground_truth_cost;
      j["ot_value"] = r.ot_value;
      j["iterations"] = r.diagnostics.iterations;
      j["delta"] = r.diagnostics.delta;
      j["converged"] = r.diagnostics.converged;
      j["cost_clamp_count"] = r.diagnostics.cost_clamp_count;
    } else {
      const M3GEvaluation ev = m3g_with_gradient(x, cost, cfg);
      write_gradient(a.grad_out, ev.gradient);
      if (!a.coupling_out.empty()) write_tensor(a.coupling_out, ev.result.coupling());
      j["loss"] = ev.result.loss;
      j["ground_truth_cost"] = ev.result.ground_truth_cost;
      j["ot_value"] = ev.result.ot_value;
      j["iterations"] = ev.result.diagnostics.iterations;
      j["delta"] = ev.result.diagnostics.delta;
      j["converged"] = ev.result.diagnostics.converged;
      j["cost_clamp_count"] = ev.result.diagnostics.cost_clamp_count;
      j["gradient_approximate"] = ev.result.diagnostics.gradient_approximate;
    }
    emit_json(j, a.out);
  });
}

// ---------------------------------------------------------------------------
// compare

struct CompareArgs {
  std::string embeddings, config, out;
  double epsilon = 0.2;
  double tau = 0.1;
  double tol = 1e-6;
  int max_iters = 2000;
};

void register_compare(CLI::App& app, CompareArgs& a) {
  CLI::App* cmd = app.add_subcommand(
      "compare", "Evaluate the matching-gap loss and all pairwise baselines on one batch");
  cmd->add_option("--embeddings", a.embeddings, "Embedding batch (PME1)");
  cmd->add_option("--epsilon", a.epsilon, "Entropic strength for the matching-gap loss");
  cmd->add_option("--tau", a.tau, "InfoNCE temperature");
  cmd->add_option("--tol", a.tol, "Solver stopping tolerance");
  cmd->add_option("--max-iters", a.max_iters, "Solver sweep budget");
  cmd->add_option("--config", a.config, "JSON config file (flags override its fields)");
  cmd->add_option("--out", a.out, "Write the JSON result here instead of stdout");
  cmd->callback([cmd, &a] {
    ConfigMerge merge(cmd, a.config);
    merge.apply("embeddings", a.embeddings);
    merge.apply("epsilon", a.epsilon);
    merge.apply("tau", a.tau);
    merge.apply("tol", a.tol);
    merge.apply("max-iters", a.max_iters);
    merge.apply("out", a.out);
    merge.finish();
    if (a.embeddings.empty())
      throw std::invalid_argument("compare: --embeddings is required (flag or config field)");

    const EmbeddingBatch x = read_embeddings(a.embeddings);
    SolverConfig cfg;
    cfg.epsilon = a.epsilon;
    cfg.tolerance = a.tol;
    cfg.max_iterations = a.max_iters;
    const M3GResult r = m3g(x, MultiwayCost::circular_variance(), cfg);
    emit_json(json{{"k", x.views()},
                   {"n", x.points()},
                   {"d", x.dim()},
                   {"epsilon", a.epsilon},
                   {"tau", a.tau},
                   {"m3g", r.loss},
                   {"m3g_converged", r.diagnostics.converged},
                   {"infonce_pwe", aggregate_pwe(x, PairwiseLossKind::infonce(a.tau))},
                   {"infonce_ave", aggregate_ave(x, PairwiseLossKind::infonce(a.tau))},
                   {"byol_pwe", aggregate_pwe(x, PairwiseLossKind::byol())},
                   {"byol_ave", aggregate_ave(x, PairwiseLossKind::byol())}},
              a.out);
  });
}

// ---------------------------------------------------------------------------
// flow

struct FlowArgs {
  std::string preset = "circle4";
  std::string cost = "cv";
  std::string config, out, final_out;
  int n = 4, k = 3, d = 2;
  double epsilon = 0.1;
  double step_size = 0.05;
  int steps = 500;
  std::uint64_t seed = 1;
};

void register_flow(CLI::App& app, FlowArgs& a) {
  CLI::App* cmd = app.add_subcommand(
      "flow", "Projected gradient descent on the matching-gap loss");
  cmd->add_option("--preset", a.preset,
                  "Initial state: circle4 (pinned fixture) or random (seeded sphere)");
  cmd->add_option("--n", a.n, "Points per view (random preset)");
  cmd->add_option("--k", a.k, "Views (random preset)");
  cmd->add_option("--d", a.d, "Embedding dimension (random preset)");
  cmd->add_option("--epsilon", a.epsilon, "Entropic strength (> 0)");
  cmd->add_option("--cost", a.cost, "Multiway cost: cv or csd");
  cmd->add_option("--step-size", a.step_size, "Gradient step size (>= 0)");
  cmd->add_option("--steps", a.steps, "Number of gradient updates");
  cmd->add_option("--seed", a.seed, "Seed for the random preset");
  cmd->add_option("--final-out", a.final_out, "Write the final embeddings here (PME1)");
  cmd->add_option("--config", a.config, "JSON config file (flags override its fields)");
  cmd->add_option("--out", a.out,
                  "Write the trajectory CSV here (columns: step,loss,delta,iters); "
                  "the JSON summary always prints to stdout");
  cmd->callback([cmd, &a] {
    ConfigMerge merge(cmd, a.config);
    merge.apply("preset", a.preset);
    merge.apply("n", a.n);
    merge.apply("k", a.k);
    merge.apply("d", a.d);
    merge.apply("epsilon", a.epsilon);
    merge.apply("cost", a.cost);
    merge.apply("step-size", a.step_size);
    merge.apply("steps", a.steps);
    merge.apply("seed", a.seed);
    merge.apply("final-out", a.final_out);
    merge.apply("out", a.out);
    merge.finish();

    FlowConfig fc;
    if (a.preset == "circle4") {
      fc.init = FlowInit::circle4;
    } else if (a.preset == "random") {
      fc.init = FlowInit::random_sphere;
    } else {
      throw std::invalid_argument("flow: --preset must be \"circle4\" or \"random\", got \"" +
                                  a.preset + "\"");
    }
    fc.n = a.n;
    fc.k = a.k;
    fc.d = a.d;
    fc.epsilon = a.epsilon;
    fc.cost = a.cost;
    fc.step_size = a.step_size;
    fc.steps = a.steps;
    fc.seed = a.seed;

    const FlowResult r = run_flow(fc);
    if (!a.out.empty()) {
      std::string csv = "step,loss,delta,iters\n";
      for (const FlowStep& s : r.trajectory) {
        csv += std::to_string(s.step) + ',' + format_double(s.loss) + ',' +
               format_double(s.delta) + ',' + std::to_string(s.iterations) + '\n';
      }
      write_text_file(a.out, csv, "flow");
    }
    if (!a.final_out.empty()) write_embeddings(a.final_out, r.final_embeddings);
    json j{{"preset", a.preset},
           {"epsilon", a.epsilon},
           {"step_size", a.step_size},
           {"steps_logged", r.trajectory.size()},
           {"diverged", r.diverged}};
    if (r.diverged) j["diverged_at"] = r.diverged_at;
    if (!r.trajectory.empty()) {
      j["initial_loss"] = r.trajectory.front().loss;
      j["final_loss"] = r.trajectory.back().loss;
    }
    emit_json(j, "");
  });
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string loss = "m3g";
  std::string config, out, curve;
  SyntheticTrainConfig tc;
};

void register_train(CLI::App& app, TrainArgs& a) {
  CLI::App* cmd = app.add_subcommand(
      "train", "Train a small encoder on synthetic clusters with a matching loss");
  cmd->add_option("--loss", a.loss,
                  "Objective: m3g, infonce_pwe, infonce_ave, byol_pwe, byol_ave");
  cmd->add_option("--clusters", a.tc.clusters, "Number of clusters");
  cmd->add_option("--samples", a.tc.samples_per_cluster, "Training samples per cluster");
  cmd->add_option("--views", a.tc.views, "Views per sample (k)");
  cmd->add_option("--input-dim", a.tc.input_dim, "Input dimension");
  cmd->add_option("--hidden-dim", a.tc.hidden_dim, "Hidden width");
  cmd->add_option("--embed-dim", a.tc.embed_dim, "Embedding dimension");
  cmd->add_option("--base-noise", a.tc.base_noise, "Within-cluster noise");
  cmd->add_option("--view-noise", a.tc.view_noise, "Per-view augmentation noise");
  cmd->add_option("--epochs", a.tc.epochs, "Training epochs");
  cmd->add_option("--batch", a.tc.batch, "Points per matching batch");
  cmd->add_option("--lr", a.tc.learning_rate, "Learning rate");
  cmd->add_option("--rho", a.tc.ema_rho, "Teacher EMA retention, in [0, 1]");
  cmd->add_option("--epsilon", a.tc.epsilon, "Entropic strength for the m3g loss");
  cmd->add_option("--tau", a.tc.tau, "InfoNCE temperature");
  cmd->add_option("--seed", a.tc.seed, "Run seed");
  cmd->add_option("--curve", a.curve, "Write per-epoch mean losses here (columns: epoch,loss)");
  cmd->add_option("--config", a.config, "JSON config file (flags override its fields)");
  cmd->add_option("--out", a.out, "Write the JSON metrics here instead of stdout");
  cmd->callback([cmd, &a] {
    ConfigMerge merge(cmd, a.config);
    merge.apply("loss", a.loss);
    merge.apply("clusters", a.tc.clusters);
    merge.apply("samples", a.tc.samples_per_cluster);
    merge.apply("views", a.tc.views);
    merge.apply("input-dim", a.tc.input_dim);
    merge.apply("hidden-dim", a.tc.hidden_dim);
    merge.apply("embed-dim", a.tc.embed_dim);
    merge.apply("base-noise", a.tc.base_noise);
    merge.apply("view-noise", a.tc.view_noise);
    merge.apply("epochs", a.tc.epochs);
    merge.apply("batch", a.tc.batch);
    merge.apply("lr", a.tc.learning_rate);
    merge.apply("rho", a.tc.ema_rho);
    merge.apply("epsilon", a.tc.epsilon);
    merge.apply("tau", a.tc.tau);
    merge.apply("seed", a.tc.seed);
    merge.apply("curve", a.curve);
    merge.apply("out", a.out);
    merge.finish();

    a.tc.loss = train_loss_from_name(a.loss);
    const TrainMetrics m = run_train(a.tc);
    if (!a.curve.empty()) {
      std::string csv = "epoch,loss\n";
      for (std::size_t e = 0; e < m.epoch_losses.size(); ++e) {
        csv += std::to_string(e) + ',' + format_double(m.epoch_losses[e]) + '\n';
      }
      write_text_file(a.curve, csv, "train");
    }
    emit_json(json{{"loss", a.loss},
                   {"epochs", a.tc.epochs},
                   {"seed", a.tc.seed},
                   {"final_loss", m.final_loss},
                   {"view_alignment", m.view_alignment},
                   {"probe_accuracy", m.probe_accuracy},
                   {"baseline_accuracy", m.baseline_accuracy}},
              a.out);
  });
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string config, out, csv;
  BenchOptions bo;
};

void register_bench(CLI::App& app, BenchArgs& a) {
  CLI::App* cmd = app.add_subcommand(
      "bench", "Time the solver across an (n, k, epsilon) grid");
  cmd->add_option("--ns", a.bo.ns, "Points-per-view values");
  cmd->add_option("--ks", a.bo.ks, "Marginal counts");
  cmd->add_option("--epsilons", a.bo.epsilons, "Entropic strengths");
  cmd->add_option("--tol", a.bo.tolerance, "Solver stopping tolerance");
  cmd->add_option("--max-iters", a.bo.max_iterations, "Sweep budget per cell");
  cmd->add_option("--dim", a.bo.dim, "Embedding dimension of the seeded batches");
  cmd->add_option("--seed", a.bo.seed, "Run seed");
  cmd->add_option("--csv", a.csv,
                  "Stream records here as CSV "
                  "(columns: n,k,epsilon,iterations,delta,converged,wall_time_s; "
                  "wall_time_s is the one nondeterministic column)");
  cmd->add_option("--config", a.config, "JSON config file (flags override its fields)");
  cmd->add_option("--out", a.out, "Write the JSON summary here instead of stdout");
  cmd->callback([cmd, &a] {
    ConfigMerge merge(cmd, a.config);
    merge.apply("ns", a.bo.ns);
    merge.apply("ks", a.bo.ks);
    merge.apply("epsilons", a.bo.epsilons);
    merge.apply("tol", a.bo.tolerance);
    merge.apply("max-iters", a.bo.max_iterations);
    merge.apply("dim", a.bo.dim);
    merge.apply("seed", a.bo.seed);
    merge.apply("csv", a.csv);
    merge.apply("out", a.out);
    merge.finish();

    std::ofstream csv_out;
    if (!a.csv.empty()) {
      csv_out.open(a.csv, std::ios::binary);
      if (!csv_out)
        throw std::invalid_argument("bench: cannot open '" + a.csv + "' for writing");
      csv_out << "n,k,epsilon,iterations,delta,converged,wall_time_s\n" << std::flush;
      a.bo.on_record = [&csv_out](const BenchRecord& r) {
        BenchSummary one;
        one.records.push_back(r);
        const std::string all = bench_csv(one);
        csv_out << all.substr(all.find('\n') + 1) << std::flush;
      };
    }
    const BenchSummary s = run_bench(a.bo);
    json skipped = json::array();
    for (const BenchSkip& sk : s.skipped) {
      skipped.push_back(json{{"n", sk.n}, {"k", sk.k}, {"reason", sk.reason}});
    }
    emit_json(json{{"cells", s.records.size()},
                   {"skipped", skipped},
                   {"iterations_monotone", s.iterations_monotone}},
              a.out);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{kTopDescription};
  app.require_subcommand(1);

  SolveArgs solve_args;
  M3gArgs m3g_args;
  CompareArgs compare_args;
  FlowArgs flow_args;
  TrainArgs train_args;
  BenchArgs bench_args;
  register_solve(app, solve_args);
  register_m3g(app, m3g_args);
  register_compare(app, compare_args);
  register_flow(app, flow_args);
  register_train(app, train_args);
  register_bench(app, bench_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const polymatch::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
