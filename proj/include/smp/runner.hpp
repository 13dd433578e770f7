#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smp/data.hpp"
#include "smp/eval.hpp"
#include "smp/fusion.hpp"
#include "smp/model.hpp"

// Training orchestration: staged schedule, batch assembly, periodic test AP,
// checkpoints and multi-seed sweeps.
namespace smp::runner {

enum class Method { Supervised, LabeledFusion, FullSemi };

std::string to_string(Method m);
/// "supervised", "labeled-fusion" or "full-semi".
Method method_from_string(const std::string& s);

struct TrainConfig {
  std::int64_t total_iters = 1500;
  std::int64_t batch_size = 3;
  Real lr = 0.05;
  Real lr_decay_factor = 100;
  std::int64_t lr_decay_at = 500;
  std::int64_t fl_start_iter = 200;
  std::int64_t fu_start_iter = 500;
  losses::LossWeights weights;
  std::int64_t eval_every = 100;
  std::uint64_t seed = 0;

  /// Heavy-ball momentum; 0 is plain SGD.
  Real momentum = 0.9;
  /// Global gradient-norm clip; 0 disables.
  Real max_grad_norm = 1;
  /// Mixed batches after fu_start: labeled : unlabeled.
  std::int64_t ratio_labeled = 2;
  std::int64_t ratio_unlabeled = 1;
  /// alpha is raised to sparse_alpha when the labeled set has at most this many frames.
  std::int64_t sparse_label_threshold = 5;
  Real sparse_alpha = 5;
  std::int64_t window_halfwidth = 1;
  losses::FusionGradient fusion_mode = losses::FusionGradient::Cut;
  /// Random flips and 90-degree turns of unlabeled frames on every visit.
  bool augment_unlabeled = false;
  /// Checkpoint at stage boundaries and every eval_every iterations when an output dir is given.
  bool save_checkpoints = true;
  /// OpenMP threads for the kernels; results do not depend on it.
  int threads = 1;
  Real oks_sigma2 = 1;
  model::ModelConfig model;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  Real lr_at(std::int64_t iter) const { return iter < lr_decay_at ? lr : lr / lr_decay_factor; }
  /// Number of labeled and unlabeled frames drawn at `iter`.
  std::pair<std::int64_t, std::int64_t> batch_split(std::int64_t iter) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// alpha/beta for a method; alpha escalates for sparse labeled sets.
losses::LossWeights method_weights(const TrainConfig& config, Method method, std::int64_t n_labeled);

/// Indices into the labeled and unlabeled pools.
struct Batch {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

/// Each stream walks a fresh seeded permutation of its pool per epoch, so
/// frames repeat only across epochs. Deterministic in (seed, iter); no state.
/// Unlabeled frames are drawn only from fu_start_iter on and only when beta > 0.
Batch assemble_batch(std::size_t labeled_pool, std::size_t unlabeled_pool, std::int64_t iter,
                     const TrainConfig& config);

struct DivergenceError : std::runtime_error {
  DivergenceError(std::int64_t iteration, const losses::LossBreakdown& terms, const std::string& what);
  std::int64_t iteration;
  losses::LossBreakdown terms;
};

struct EvalPoint {
  std::int64_t iteration = 0;  // optimizer steps taken
  losses::LossBreakdown losses;
  Real lr = 0;
  Real test_ap = 0;
};

struct RunRecord {
  std::vector<EvalPoint> evals;
  /// Loss terms and lr of every iteration.
  std::vector<losses::LossBreakdown> trajectory;
  std::vector<Real> lrs;
  /// Scene ids that entered each batch.
  std::vector<std::vector<std::int64_t>> labeled_ids;
  std::vector<std::vector<std::int64_t>> unlabeled_ids;
  std::filesystem::path final_checkpoint;
  model::ModelParams final_params;
  fusion::DecodeParams decode;

  Real final_ap() const { return evals.empty() ? Real(0) : evals.back().test_ap; }
};

nlohmann::json record_json(const RunRecord& r);

/// Default NMS radius: half the mean pseudo-box diagonal of the labeled
/// instances, in grid units.
fusion::DecodeParams default_decode(std::span<const data::Scene> labeled, std::int64_t stride, Real delta);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;
  /// Called after every iteration with the running record; line logging hook.
  std::function<void(std::int64_t iteration, const losses::LossBreakdown&, Real lr)> on_iteration;
  std::function<void(const EvalPoint&)> on_eval;
};

RunRecord train(const TrainConfig& config, const data::Splits& splits, const TrainOptions& options = {});

/// Frames stacked into [N,H,W,C].
Tensor stack_images(std::span<const Tensor> images);

/// Forward + decode on each frame, predictions in pixel units.
std::vector<Prediction> predict(const model::ModelParams& params, std::span<const data::Scene> scenes,
                                const fusion::DecodeParams& decode);

eval::ApReport evaluate_params(const model::ModelParams& params, std::span<const data::Scene> test,
                               const fusion::DecodeParams& decode, const eval::OksParams& oks);

/// Loads a checkpoint, predicts every test frame, writes the prediction file
/// (annotation JSON with per-instance scores) when a path is given, and
/// returns the AP report. Throws std::invalid_argument on a K or channel mismatch.
eval::ApReport evaluate(const std::filesystem::path& checkpoint, const data::Dataset& dataset,
                        const eval::OksParams& oks, const std::optional<std::filesystem::path>& predictions_out);

/// AP of a prediction file against the test annotations of a dataset.
eval::ApReport evaluate_prediction_file(const std::filesystem::path& predictions, const data::Dataset& dataset,
                                        const eval::OksParams& oks);

struct SweepSpec {
  data::DatasetSpec data;
  TrainConfig train;
  std::vector<Method> methods{Method::Supervised, Method::LabeledFusion, Method::FullSemi};
  std::vector<std::int64_t> labeled_sizes{5};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Worker threads running independent cells.
  int workers = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const SweepSpec& s);
void from_json(const nlohmann::json& j, SweepSpec& s);

struct RunResult {
  Method method = Method::Supervised;
  std::int64_t labeled = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Real final_ap = 0;
  std::vector<EvalPoint> curve;
};

struct CellSummary {
  Method method = Method::Supervised;
  std::int64_t labeled = 0;
  std::int64_t runs = 0;
  std::int64_t failed = 0;
  Real mean_ap = 0;
  Real std_error = 0;  // sample standard deviation / sqrt(runs); 0 for one run
};

struct SweepResult {
  std::vector<RunResult> runs;  // (method, labeled, seed) order
  std::vector<CellSummary> cells;

  const CellSummary& cell(Method method, std::int64_t labeled) const;
};

/// Mean and standard error of a sample.
std::pair<Real, Real> mean_and_std_error(std::span<const Real> values);

/// Runs every (method, labeled size, seed) cell on `dataset`. Splits and
/// initial weights depend on the seed only, so methods are paired. A failing
/// cell is recorded and the sweep continues. With out_dir, writes table.csv,
/// curves.csv, runs.json and per-method AP curve plots.
SweepResult sweep(const SweepSpec& spec, const data::Dataset& dataset,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const RunResult&)>& on_run = {});

void write_table_csv(const SweepResult& result, const std::filesystem::path& path);
void write_curves_csv(const SweepResult& result, const std::filesystem::path& path);
/// One PNG per labeled size, one curve per method (mean over seeds).
std::vector<std::filesystem::path> plot_sweep(const SweepResult& result, const std::filesystem::path& dir);
/// Reads curves.csv back into a result (runs only, ok rows).
SweepResult read_curves_csv(const std::filesystem::path& path);

}  // namespace smp::runner
