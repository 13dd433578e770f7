// Command-line front end: generate, train, eval, sweep, plot.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "smp/data.hpp"
#include "smp/runner.hpp"

namespace {

constexpr int kValidationError = 1;
constexpr int kRuntimeError = 2;

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("malformed JSON in " + path + ": " + e.what());
  }
}

void log_line(std::int64_t it, const smp::losses::LossBreakdown& b, smp::Real lr) {
  std::printf("iter %lld la %.6g lb %.6g ld %.6g lfl %.6g lfu %.6g total %.6g lr %.3g\n",
              static_cast<long long>(it), b.la, b.lb, b.ld, b.lfl, b.lfu, b.total, lr);
}

int run_generate(const std::string& spec_path, const std::string& out, bool embed) {
  smp::data::DatasetSpec spec;
  if (!spec_path.empty()) spec = read_json(spec_path).get<smp::data::DatasetSpec>();
  spec.validate();
  const auto ds = smp::data::generate_dataset(spec);
  smp::data::write_dataset(ds, out, embed ? smp::data::ImageStorage::Embedded : smp::data::ImageStorage::RawFile);
  std::printf("wrote %zu pool, %zu unlabeled, %zu test frames to %s\n", ds.pool.size(), ds.unlabeled.size(),
              ds.test.size(), out.c_str());
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir, const std::string& out, int log_every) {
  const auto cfg_json = read_json(config_path);
  auto cfg = cfg_json.get<smp::runner::TrainConfig>();
  const auto ds = smp::data::read_dataset(data_dir);
  const auto n_labeled = cfg_json.value("n_labeled", ds.spec.n_labeled);
  if (cfg_json.contains("method")) {
    cfg.weights = smp::runner::method_weights(cfg, smp::runner::method_from_string(cfg_json.at("method")), n_labeled);
  }
  cfg.validate();
  const auto splits = smp::data::make_splits(ds, n_labeled, cfg_json.value("split_seed", cfg.seed));
  std::printf("train: %zu labeled, %zu unlabeled, %zu test frames; alpha %g beta %g\n", splits.labeled.size(),
              splits.unlabeled.size(), splits.test.size(), cfg.weights.alpha, cfg.weights.beta);
  smp::runner::TrainOptions opts;
  opts.out_dir = out;
  opts.on_iteration = [&](std::int64_t it, const smp::losses::LossBreakdown& b, smp::Real lr) {
    if (log_every > 0 && it % log_every == 0) log_line(it, b, lr);
  };
  opts.on_eval = [](const smp::runner::EvalPoint& e) {
    std::printf("eval iter %lld test_ap %.6f\n", static_cast<long long>(e.iteration), e.test_ap);
    std::fflush(stdout);
  };
  const auto rec = smp::runner::train(cfg, splits, opts);
  std::printf("final test_ap %.6f checkpoint %s\n", rec.final_ap(), rec.final_checkpoint.string().c_str());
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data_dir, double sigma2, const std::string& predictions,
             const std::string& report_path) {
  const auto ds = smp::data::read_dataset(data_dir);
  std::optional<std::filesystem::path> pred_out;
  if (!predictions.empty()) pred_out = predictions;
  const auto report = smp::runner::evaluate(ckpt, ds, {sigma2, {}}, pred_out);
  const nlohmann::json j = report;
  if (!report_path.empty()) std::ofstream(report_path) << j.dump(2) << '\n';
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& data_dir, const std::string& out) {
  const auto spec = read_json(config_path).get<smp::runner::SweepSpec>();
  spec.validate();
  const auto ds = data_dir.empty() ? smp::data::generate_dataset(spec.data) : smp::data::read_dataset(data_dir);
  const auto result = smp::runner::sweep(spec, ds, std::filesystem::path(out), [](const smp::runner::RunResult& r) {
    if (r.ok) {
      std::printf("run %s n=%lld seed=%llu final_ap %.6f\n", smp::runner::to_string(r.method).c_str(),
                  static_cast<long long>(r.labeled), static_cast<unsigned long long>(r.seed), r.final_ap);
    } else {
      std::printf("run %s n=%lld seed=%llu FAILED: %s\n", smp::runner::to_string(r.method).c_str(),
                  static_cast<long long>(r.labeled), static_cast<unsigned long long>(r.seed), r.error.c_str());
    }
    std::fflush(stdout);
  });
  for (const auto& c : result.cells) {
    std::printf("%-15s n=%-3lld ap %.4f +- %.4f (%lld runs, %lld failed)\n", smp::runner::to_string(c.method).c_str(),
                static_cast<long long>(c.labeled), c.mean_ap, c.std_error, static_cast<long long>(c.runs),
                static_cast<long long>(c.failed));
  }
  return 0;
}

int run_plot(const std::string& runs_dir, const std::string& out) {
  const auto result = smp::runner::read_curves_csv(std::filesystem::path(runs_dir) / "curves.csv");
  for (const auto& p : smp::runner::plot_sweep(result, out)) std::printf("wrote %s\n", p.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised multi-instance keypoint estimation"};
  app.require_subcommand(1);

  std::string spec_path, out, config, data_dir, ckpt, predictions, report, runs;
  bool embed = false;
  int log_every = 50;
  double sigma2 = 1.0;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Dataset spec JSON (defaults when omitted)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_flag("--embed", embed, "Embed pixels in the annotation JSON");

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config, "Train config JSON")->required();
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_option("--log-every", log_every, "Iterations between log lines (0 disables)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--sigma2", sigma2, "OKS sigma^2")->check(CLI::PositiveNumber);
  ev->add_option("--predictions", predictions, "Write the prediction file here");
  ev->add_option("--report", report, "Write the JSON report here");

  auto* sw = app.add_subcommand("sweep", "Run a method x labeled-size x seed sweep");
  sw->add_option("--config", config, "Sweep config JSON")->required();
  sw->add_option("--data", data_dir, "Dataset directory (generated from the config when omitted)");
  sw->add_option("--out", out, "Results directory")->required();

  auto* pl = app.add_subcommand("plot", "Render AP curves from a sweep directory");
  pl->add_option("--runs", runs, "Sweep results directory")->required();
  pl->add_option("--out", out, "Figure directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationError;
  }

  try {
    if (*gen) return run_generate(spec_path, out, embed);
    if (*tr) return run_train(config, data_dir, out, log_every);
    if (*ev) return run_eval(ckpt, data_dir, sigma2, predictions, report);
    if (*sw) return run_sweep(config, data_dir, out);
    if (*pl) return run_plot(runs, out);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationError;
  } catch (const smp::data::AnnotationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationError;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: invalid config: %s\n", e.what());
    return kValidationError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed: %s\n", e.what());
    return kRuntimeError;
  }
  return kValidationError;
}
