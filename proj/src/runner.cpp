#include "smp/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "smp/kernels.hpp"
#include "smp/ops.hpp"
#include "smp/optim.hpp"
#include "smp/plot.hpp"
#include "smp/targets.hpp"

namespace smp::runner {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x2545f4914f6cdd1dULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Element `pos` of an endless stream of per-epoch permutations of [0, n).
std::size_t stream_at(std::uint64_t seed, std::uint64_t stream, std::size_t n, std::uint64_t pos) {
  const auto epoch = pos / n;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(mix(mix(seed, stream), epoch));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm[pos % n];
}

const char* fusion_mode_name(losses::FusionGradient m) { return m == losses::FusionGradient::Soft ? "soft" : "cut"; }

losses::FusionGradient fusion_mode_from(const std::string& s) {
  if (s == "soft") return losses::FusionGradient::Soft;
  if (s == "cut") return losses::FusionGradient::Cut;
  throw std::invalid_argument("fusion_mode must be \"cut\" or \"soft\", got \"" + s + "\"");
}

nlohmann::json breakdown_json(const losses::LossBreakdown& b) {
  return {{"la", b.la}, {"lb", b.lb}, {"ld", b.ld}, {"lfl", b.lfl}, {"lfu", b.lfu}, {"total", b.total}};
}

std::string breakdown_text(const losses::LossBreakdown& b) {
  std::ostringstream os;
  os << std::setprecision(6) << "la=" << b.la << " lb=" << b.lb << " ld=" << b.ld << " lfl=" << b.lfl
     << " lfu=" << b.lfu << " total=" << b.total;
  return os.str();
}

std::vector<Instance> to_grid(const std::vector<Instance>& instances, std::int64_t stride) {
  std::vector<Instance> out;
  for (const auto& inst : instances) out.push_back(inst.scaled(Real(1) / static_cast<Real>(stride)));
  return out;
}

model::ModelParams frozen(const model::ModelParams& params) {
  model::ModelParams out{params.config, params.seed, {}};
  for (const auto& t : params.tensors) out.tensors.push_back({t.name, t.value.detach()});
  return out;
}

// Horizontal/vertical flips and, for square frames, transposition.
Tensor augment_image(const Tensor& image, std::mt19937_64& rng) {
  const auto h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  const auto code = std::uniform_int_distribution<int>(0, h == w ? 7 : 3)(rng);
  const bool flip_r = code & 1, flip_c = code & 2, transpose = code & 4;
  std::vector<Real> out(static_cast<std::size_t>(image.size()));
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      auto sr = flip_r ? h - 1 - r : r, sc = flip_c ? w - 1 - c : c;
      if (transpose) std::swap(sr, sc);
      for (std::int64_t k = 0; k < ch; ++k)
        out[static_cast<std::size_t>((r * w + c) * ch + k)] = image[(sr * w + sc) * ch + k];
    }
  return Tensor(image.shape(), std::move(out));
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::Supervised:
      return "supervised";
    case Method::LabeledFusion:
      return "labeled-fusion";
    case Method::FullSemi:
      return "full-semi";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "supervised") return Method::Supervised;
  if (s == "labeled-fusion") return Method::LabeledFusion;
  if (s == "full-semi") return Method::FullSemi;
  throw std::invalid_argument("unknown method \"" + s + "\"");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (total_iters < 1) fail("total_iters must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0)) fail("lr must be > 0");
  if (!(lr_decay_factor > 0)) fail("lr_decay_factor must be > 0");
  if (lr_decay_at < 0) fail("lr_decay_at must be >= 0");
  if (!(0 <= fl_start_iter && fl_start_iter <= fu_start_iter && fu_start_iter <= total_iters)) {
    fail("need 0 <= fl_start_iter <= fu_start_iter <= total_iters");
  }
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must lie in [0,1)");
  if (!(max_grad_norm >= 0)) fail("max_grad_norm must be >= 0");
  if (ratio_labeled < 1 || ratio_unlabeled < 0) fail("ratio_labeled must be >= 1, ratio_unlabeled >= 0");
  if (weights.beta > 0 && ratio_unlabeled > 0 && batch_size < 2) fail("mixed batches need batch_size >= 2");
  if (!(sparse_alpha >= 0)) fail("sparse_alpha must be >= 0");
  if (window_halfwidth < 0) fail("window_halfwidth must be >= 0");
  if (threads < 1) fail("threads must be >= 1");
  if (!(oks_sigma2 > 0)) fail("oks_sigma2 must be > 0");
  weights.validate();
  model.validate();
}

std::pair<std::int64_t, std::int64_t> TrainConfig::batch_split(std::int64_t iter) const {
  if (iter < fu_start_iter || !(weights.beta > 0) || ratio_unlabeled == 0) return {batch_size, 0};
  const auto total = ratio_labeled + ratio_unlabeled;
  auto labeled = (batch_size * ratio_labeled + total / 2) / total;
  labeled = std::clamp<std::int64_t>(labeled, 1, batch_size - 1);
  return {labeled, batch_size - labeled};
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"total_iters", c.total_iters},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"lr_decay_factor", c.lr_decay_factor},
       {"lr_decay_at", c.lr_decay_at},
       {"fl_start_iter", c.fl_start_iter},
       {"fu_start_iter", c.fu_start_iter},
       {"weights",
        {{"alpha", c.weights.alpha},
         {"beta", c.weights.beta},
         {"kappa", c.weights.kappa},
         {"gamma", c.weights.gamma},
         {"delta", c.weights.delta}}},
       {"eval_every", c.eval_every},
       {"seed", c.seed},
       {"momentum", c.momentum},
       {"max_grad_norm", c.max_grad_norm},
       {"ratio_labeled", c.ratio_labeled},
       {"ratio_unlabeled", c.ratio_unlabeled},
       {"sparse_label_threshold", c.sparse_label_threshold},
       {"sparse_alpha", c.sparse_alpha},
       {"window_halfwidth", c.window_halfwidth},
       {"fusion_mode", fusion_mode_name(c.fusion_mode)},
       {"augment_unlabeled", c.augment_unlabeled},
       {"save_checkpoints", c.save_checkpoints},
       {"threads", c.threads},
       {"oks_sigma2", c.oks_sigma2},
       {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.total_iters = j.value("total_iters", d.total_iters);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.lr_decay_factor = j.value("lr_decay_factor", d.lr_decay_factor);
  c.lr_decay_at = j.value("lr_decay_at", d.lr_decay_at);
  c.fl_start_iter = j.value("fl_start_iter", d.fl_start_iter);
  c.fu_start_iter = j.value("fu_start_iter", d.fu_start_iter);
  c.weights = d.weights;
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.alpha = w.value("alpha", d.weights.alpha);
    c.weights.beta = w.value("beta", d.weights.beta);
    c.weights.kappa = w.value("kappa", d.weights.kappa);
    c.weights.gamma = w.value("gamma", d.weights.gamma);
    c.weights.delta = w.value("delta", d.weights.delta);
  }
  c.eval_every = j.value("eval_every", d.eval_every);
  c.seed = j.value("seed", d.seed);
  c.momentum = j.value("momentum", d.momentum);
  c.max_grad_norm = j.value("max_grad_norm", d.max_grad_norm);
  c.ratio_labeled = j.value("ratio_labeled", d.ratio_labeled);
  c.ratio_unlabeled = j.value("ratio_unlabeled", d.ratio_unlabeled);
  c.sparse_label_threshold = j.value("sparse_label_threshold", d.sparse_label_threshold);
  c.sparse_alpha = j.value("sparse_alpha", d.sparse_alpha);
  c.window_halfwidth = j.value("window_halfwidth", d.window_halfwidth);
  c.fusion_mode = fusion_mode_from(j.value("fusion_mode", std::string(fusion_mode_name(d.fusion_mode))));
  c.augment_unlabeled = j.value("augment_unlabeled", d.augment_unlabeled);
  c.save_checkpoints = j.value("save_checkpoints", d.save_checkpoints);
  c.threads = j.value("threads", d.threads);
  c.oks_sigma2 = j.value("oks_sigma2", d.oks_sigma2);
  c.model = j.value("model", d.model);
}

losses::LossWeights method_weights(const TrainConfig& config, Method method, std::int64_t n_labeled) {
  auto w = config.weights;
  if (n_labeled <= config.sparse_label_threshold) w.alpha = config.sparse_alpha;
  if (method == Method::Supervised) w.alpha = 0;
  if (method != Method::FullSemi) w.beta = 0;
  return w;
}

Batch assemble_batch(std::size_t labeled_pool, std::size_t unlabeled_pool, std::int64_t iter,
                     const TrainConfig& config) {
  if (labeled_pool == 0) throw std::invalid_argument("assemble_batch: empty labeled pool");
  if (iter < 0) throw std::invalid_argument("assemble_batch: negative iteration");
  const auto [n_l, n_u] = config.batch_split(iter);
  if (n_u > 0 && unlabeled_pool == 0) throw std::invalid_argument("assemble_batch: empty unlabeled pool");

  // Stream positions in closed form: full labeled batches before fu_start, split batches after.
  const auto pre = std::min(iter, config.fu_start_iter);
  const auto post = iter - pre;
  const auto split = config.batch_split(config.fu_start_iter);
  const auto l_pos = static_cast<std::uint64_t>(pre * config.batch_size + post * split.first);
  const auto u_pos = static_cast<std::uint64_t>(post * split.second);

  Batch b;
  for (std::int64_t i = 0; i < n_l; ++i)
    b.labeled.push_back(stream_at(config.seed, 1, labeled_pool, l_pos + static_cast<std::uint64_t>(i)));
  for (std::int64_t i = 0; i < n_u; ++i)
    b.unlabeled.push_back(stream_at(config.seed, 2, unlabeled_pool, u_pos + static_cast<std::uint64_t>(i)));
  return b;
}

DivergenceError::DivergenceError(std::int64_t it, const losses::LossBreakdown& t, const std::string& what)
    : std::runtime_error("diverged at iteration " + std::to_string(it) + " (" + breakdown_text(t) + "): " + what),
      iteration(it),
      terms(t) {}

nlohmann::json record_json(const RunRecord& r) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : r.evals) {
    evals.push_back({{"iteration", e.iteration}, {"lr", e.lr}, {"test_ap", e.test_ap}, {"losses", breakdown_json(e.losses)}});
  }
  nlohmann::json traj = nlohmann::json::array();
  for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
    auto row = breakdown_json(r.trajectory[i]);
    row["lr"] = r.lrs[i];
    traj.push_back(std::move(row));
  }
  return {{"evals", evals},
          {"trajectory", traj},
          {"final_checkpoint", r.final_checkpoint.string()},
          {"decode", {{"delta", r.decode.delta}, {"nms_radius", r.decode.nms_radius}, {"vote_radius", r.decode.vote_radius},
                      {"top_n", r.decode.top_n}}}};
}

fusion::DecodeParams default_decode(std::span<const data::Scene> labeled, std::int64_t stride, Real delta) {
  fusion::DecodeParams d;
  d.delta = delta;
  Real sum = 0;
  std::int64_t n = 0;
  for (const auto& s : labeled)
    for (const auto& inst : s.instances) {
      if (inst.num_visible() == 0) continue;
      const auto box = targets::pseudo_box(inst, s.image.dim(0), s.image.dim(1));
      sum += std::hypot(box.height(), box.width()) / static_cast<Real>(stride);
      ++n;
    }
  if (n > 0) d.nms_radius = std::max(d.vote_radius, Real(0.5) * sum / static_cast<Real>(n));
  return d;
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no frames");
  Shape shape = images[0].shape();
  std::vector<Real> data;
  data.reserve(static_cast<std::size_t>(images[0].size()) * images.size());
  for (const auto& im : images) {
    if (im.shape() != shape) throw ShapeError("stack_images: frames differ in shape");
    data.insert(data.end(), im.data().begin(), im.data().end());
  }
  shape.insert(shape.begin(), static_cast<std::int64_t>(images.size()));
  return Tensor(std::move(shape), std::move(data));
}

std::vector<Prediction> predict(const model::ModelParams& params, std::span<const data::Scene> scenes,
                                const fusion::DecodeParams& decode) {
  std::vector<Prediction> out;
  if (scenes.empty()) return out;
  const auto net = frozen(params);
  const auto stride = static_cast<Real>(params.config.stride);
  std::vector<Tensor> images;
  for (const auto& s : scenes) images.push_back(s.image);
  const auto outs = model::forward(net, stack_images(images));
  for (std::size_t n = 0; n < scenes.size(); ++n) {
    const auto i = static_cast<std::int64_t>(n);
    auto pred = fusion::decode_instances(ops::select(outs.boxes, i), ops::select(outs.vectors, i), decode);
    const Real hmax = static_cast<Real>(scenes[n].image.dim(0) - 1), wmax = static_cast<Real>(scenes[n].image.dim(1) - 1);
    for (auto& inst : pred.instances) {
      inst = inst.scaled(stride);
      // Vectors can point past the border; keep predictions on the frame.
      for (auto& p : inst.keypoints) p.row = std::clamp(p.row, Real(0), hmax), p.col = std::clamp(p.col, Real(0), wmax);
    }
    out.push_back(std::move(pred));
  }
  return out;
}

eval::ApReport evaluate_params(const model::ModelParams& params, std::span<const data::Scene> test,
                               const fusion::DecodeParams& decode, const eval::OksParams& oks) {
  const auto preds = predict(params, test, decode);
  std::vector<std::vector<Instance>> gts;
  for (const auto& s : test) gts.push_back(s.instances);
  return eval::average_precision(preds, gts, oks);
}

RunRecord train(const TrainConfig& config, const data::Splits& splits, const TrainOptions& options) {
  config.validate();
  if (splits.labeled.empty()) throw std::invalid_argument("train: empty labeled split");
  const auto& mc = config.model;
  const auto& first = splits.labeled.front().image;
  if (first.rank() != 3 || first.dim(2) != mc.in_channels) {
    throw std::invalid_argument("train: frames have shape " + smp::to_string(first.shape()) + ", model expects " +
                                std::to_string(mc.in_channels) + " channels");
  }
  for (const auto& s : splits.labeled)
    for (const auto& inst : s.instances)
      if (static_cast<std::int64_t>(inst.num_parts()) != mc.parts) {
        throw std::invalid_argument("train: scene " + std::to_string(s.id) + " has instances with " +
                                    std::to_string(inst.num_parts()) + " parts, model expects " +
                                    std::to_string(mc.parts));
      }
  kernels::set_num_threads(config.threads);

  const auto height = first.dim(0) / mc.stride, width = first.dim(1) / mc.stride;
  const auto grid = targets::grid_coordinates(height, width);
  const auto& w = config.weights;

  RunRecord record;
  record.decode = default_decode(splits.labeled, mc.stride, w.delta);
  const eval::OksParams oks{config.oks_sigma2, {}};
  auto params = model::init(mc, config.seed);
  auto trainable = params.trainable();
  MomentumSgd opt(config.momentum, config.max_grad_norm);
  std::mt19937_64 aug_rng(mix(config.seed, 0x617567ULL));

  auto checkpoint = [&](std::int64_t steps) {
    if (!options.out_dir || !config.save_checkpoints) return;
    std::ostringstream name;
    name << "ckpt_" << std::setw(6) << std::setfill('0') << steps << ".bin";
    const auto path = *options.out_dir / name.str();
    model::Checkpoint ckpt{params, steps, {{"train", config},
                                           {"decode",
                                            {{"delta", record.decode.delta},
                                             {"nms_radius", record.decode.nms_radius},
                                             {"vote_radius", record.decode.vote_radius},
                                             {"top_n", record.decode.top_n}}}}};
    model::save_checkpoint(ckpt, path);
    record.final_checkpoint = path;
  };

  for (std::int64_t it = 0; it < config.total_iters; ++it) {
    const Real lr = config.lr_at(it);
    const auto batch = assemble_batch(splits.labeled.size(), splits.unlabeled.size(), it, config);
    losses::LossBreakdown terms;
    try {
      std::vector<Tensor> images;
      std::vector<std::vector<Instance>> instances;
      std::vector<std::int64_t> ids;
      for (auto i : batch.labeled) {
        images.push_back(splits.labeled[i].image);
        instances.push_back(to_grid(splits.labeled[i].instances, mc.stride));
        ids.push_back(splits.labeled[i].id);
      }
      record.labeled_ids.push_back(std::move(ids));
      const auto maps = targets::build_targets(instances, height, width, mc.parts, config.window_halfwidth);
      const auto outs = model::forward(params, stack_images(images));

      auto pseudo_of = [&](const BranchOutputs& o, std::size_t n) {
        std::vector<PseudoLabels> out;
        for (std::size_t f = 0; f < n; ++f) {
          const auto i = static_cast<std::int64_t>(f);
          out.push_back(fusion::extract_pseudo_labels(ops::select(o.boxes, i).detach(), ops::select(o.vectors, i),
                                                      grid, w.delta));
        }
        return out;
      };

      std::vector<PseudoLabels> pseudo_l, pseudo_u;
      std::optional<losses::FusionInput> lf, uf;
      if (w.alpha > 0 && it >= config.fl_start_iter) {
        pseudo_l = pseudo_of(outs, batch.labeled.size());
        lf = losses::FusionInput{&outs, pseudo_l};
      }
      BranchOutputs outs_u;
      std::vector<std::int64_t> uids;
      if (!batch.unlabeled.empty()) {
        std::vector<Tensor> uimages;
        for (auto i : batch.unlabeled) {
          const auto& im = splits.unlabeled[i].image;
          uimages.push_back(config.augment_unlabeled ? augment_image(im, aug_rng) : im);
          uids.push_back(splits.unlabeled[i].id);
        }
        outs_u = model::forward(params, stack_images(uimages));
        pseudo_u = pseudo_of(outs_u, batch.unlabeled.size());
        uf = losses::FusionInput{&outs_u, pseudo_u};
      }
      record.unlabeled_ids.push_back(std::move(uids));

      auto obj = losses::semi_objective(outs, maps, lf, uf, w, config.window_halfwidth, config.fusion_mode);
      terms = obj.terms;
      if (!std::isfinite(terms.total)) throw NumericError("non-finite objective");
      backward(obj.total);
      opt.step(trainable, lr);
    } catch (const NumericError& e) {
      throw DivergenceError(it, terms, e.what());
    }
    record.trajectory.push_back(terms);
    record.lrs.push_back(lr);
    if (options.on_iteration) options.on_iteration(it, terms, lr);

    const auto steps = it + 1;
    const bool eval_now = steps % config.eval_every == 0 || steps == config.total_iters;
    if (eval_now) {
      EvalPoint point{steps, terms, lr, 0};
      if (!splits.test.empty()) point.test_ap = evaluate_params(params, splits.test, record.decode, oks).ap;
      record.evals.push_back(point);
      if (options.on_eval) options.on_eval(point);
    }
    if (eval_now || steps == config.fl_start_iter || steps == config.fu_start_iter) checkpoint(steps);
  }
  record.final_params = params;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    std::ofstream os(*options.out_dir / "record.json");
    os << record_json(record).dump(1) << '\n';
  }
  return record;
}

eval::ApReport evaluate(const std::filesystem::path& checkpoint, const data::Dataset& dataset,
                        const eval::OksParams& oks, const std::optional<std::filesystem::path>& predictions_out) {
  const auto ckpt = model::load_checkpoint(checkpoint);
  const auto& mc = ckpt.params.config;
  if (mc.parts != dataset.spec.parts) {
    throw std::invalid_argument("evaluate: checkpoint has K=" + std::to_string(mc.parts) + ", dataset has K=" +
                                std::to_string(dataset.spec.parts));
  }
  if (mc.in_channels != dataset.spec.channels) {
    throw std::invalid_argument("evaluate: checkpoint expects " + std::to_string(mc.in_channels) +
                                " channels, dataset has " + std::to_string(dataset.spec.channels));
  }
  fusion::DecodeParams decode = default_decode(dataset.pool, mc.stride, fusion::DecodeParams{}.delta);
  if (ckpt.metadata.contains("decode")) {
    const auto& d = ckpt.metadata.at("decode");
    decode.delta = d.value("delta", decode.delta);
    decode.nms_radius = d.value("nms_radius", decode.nms_radius);
    decode.vote_radius = d.value("vote_radius", decode.vote_radius);
    decode.top_n = d.value("top_n", decode.top_n);
  }
  const auto preds = predict(ckpt.params, dataset.test, decode);
  if (predictions_out) {
    std::vector<data::Scene> scenes;
    std::vector<std::vector<Real>> scores;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      scenes.push_back({dataset.test[i].id, dataset.test[i].image, preds[i].instances});
      scores.push_back(preds[i].scores);
    }
    data::write_annotations(scenes, {dataset.spec.parts, dataset.spec.part_names}, *predictions_out,
                            data::ImageStorage::RawFile, scores);
  }
  std::vector<std::vector<Instance>> gts;
  for (const auto& s : dataset.test) gts.push_back(s.instances);
  return eval::average_precision(preds, gts, oks);
}

eval::ApReport evaluate_prediction_file(const std::filesystem::path& predictions, const data::Dataset& dataset,
                                        const eval::OksParams& oks) {
  const auto file = data::read_annotations(predictions);
  std::vector<Prediction> preds;
  std::vector<std::vector<Instance>> gts;
  for (const auto& gt : dataset.test) {
    auto it = std::find_if(file.scenes.begin(), file.scenes.end(), [&](const data::Scene& s) { return s.id == gt.id; });
    Prediction p;
    if (it != file.scenes.end()) {
      p.instances = it->instances;
      const auto idx = static_cast<std::size_t>(it - file.scenes.begin());
      p.scores = file.scores.empty() ? std::vector<Real>(p.instances.size(), Real(1)) : file.scores[idx];
    }
    preds.push_back(std::move(p));
    gts.push_back(gt.instances);
  }
  return eval::average_precision(preds, gts, oks);
}

void SweepSpec::validate() const {
  data.validate();
  train.validate();
  if (methods.empty() || labeled_sizes.empty() || seeds.empty()) {
    throw std::invalid_argument("sweep: methods, labeled_sizes and seeds must be non-empty");
  }
  for (auto n : labeled_sizes)
    if (n < 1 || n > data.n_pool) {
      throw std::invalid_argument("sweep: labeled size " + std::to_string(n) + " outside [1, n_pool]");
    }
  if (workers < 1) throw std::invalid_argument("sweep: workers must be >= 1");
}

void to_json(nlohmann::json& j, const SweepSpec& s) {
  std::vector<std::string> methods;
  for (auto m : s.methods) methods.push_back(to_string(m));
  j = {{"data", s.data},       {"train", s.train}, {"methods", methods},
       {"labeled_sizes", s.labeled_sizes}, {"seeds", s.seeds}, {"workers", s.workers}};
}

void from_json(const nlohmann::json& j, SweepSpec& s) {
  const SweepSpec d;
  s.data = j.value("data", d.data);
  s.train = j.value("train", d.train);
  s.methods.clear();
  if (j.contains("methods")) {
    for (const auto& m : j.at("methods")) s.methods.push_back(method_from_string(m.get<std::string>()));
  } else {
    s.methods = d.methods;
  }
  s.labeled_sizes = j.value("labeled_sizes", d.labeled_sizes);
  s.seeds = j.value("seeds", d.seeds);
  s.workers = j.value("workers", d.workers);
}

const CellSummary& SweepResult::cell(Method method, std::int64_t labeled) const {
  for (const auto& c : cells)
    if (c.method == method && c.labeled == labeled) return c;
  throw std::out_of_range("sweep: no cell " + to_string(method) + "/" + std::to_string(labeled));
}

std::pair<Real, Real> mean_and_std_error(std::span<const Real> values) {
  if (values.empty()) return {0, 0};
  const auto n = static_cast<Real>(values.size());
  const Real mean = std::accumulate(values.begin(), values.end(), Real(0)) / n;
  if (values.size() < 2) return {mean, 0};
  Real ss = 0;
  for (auto v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

SweepResult sweep(const SweepSpec& spec, const data::Dataset& dataset, const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const RunResult&)>& on_run) {
  spec.validate();
  struct Job {
    Method method;
    std::int64_t labeled;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto m : spec.methods)
    for (auto n : spec.labeled_sizes)
      for (auto s : spec.seeds) jobs.push_back({m, n, s});

  std::vector<RunResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (auto j = next++; j < jobs.size(); j = next++) {
      const auto& job = jobs[j];
      RunResult r{job.method, job.labeled, job.seed, false, {}, 0, {}};
      try {
        auto cfg = spec.train;
        cfg.seed = job.seed;
        cfg.weights = method_weights(spec.train, job.method, job.labeled);
        if (spec.workers > 1) cfg.threads = 1;
        const auto splits = data::make_splits(dataset, job.labeled, job.seed);
        TrainOptions opts;
        if (out_dir) {
          opts.out_dir = *out_dir / "runs" / (to_string(job.method) + "_n" + std::to_string(job.labeled) + "_s" +
                                              std::to_string(job.seed));
        }
        const auto rec = train(cfg, splits, opts);
        r.ok = true;
        r.final_ap = rec.final_ap();
        r.curve = rec.evals;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      std::lock_guard lock(report);
      results[j] = r;
      if (on_run) on_run(r);
    }
  };
  if (spec.workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < spec.workers; ++i) pool.emplace_back(worker);
  }

  SweepResult out;
  out.runs = std::move(results);
  for (auto m : spec.methods)
    for (auto n : spec.labeled_sizes) {
      CellSummary c{m, n, 0, 0, 0, 0};
      std::vector<Real> aps;
      for (const auto& r : out.runs) {
        if (r.method != m || r.labeled != n) continue;
        ++c.runs;
        if (r.ok) {
          aps.push_back(r.final_ap);
        } else {
          ++c.failed;
        }
      }
      std::tie(c.mean_ap, c.std_error) = mean_and_std_error(aps);
      out.cells.push_back(c);
    }
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_table_csv(out, *out_dir / "table.csv");
    write_curves_csv(out, *out_dir / "curves.csv");
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : out.runs) {
      runs.push_back({{"method", to_string(r.method)}, {"labeled", r.labeled}, {"seed", r.seed}, {"ok", r.ok},
                      {"error", r.error}, {"final_ap", r.final_ap}});
    }
    std::ofstream(*out_dir / "runs.json") << runs.dump(1) << '\n';
    plot_sweep(out, *out_dir);
  }
  return out;
}

void write_table_csv(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(10) << "method,labeled,runs,failed,mean_ap,std_error\n";
  for (const auto& c : result.cells) {
    os << to_string(c.method) << ',' << c.labeled << ',' << c.runs << ',' << c.failed << ',' << c.mean_ap << ','
       << c.std_error << '\n';
  }
}

void write_curves_csv(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(10) << "method,labeled,seed,iteration,test_ap,la,lb,ld,lfl,lfu,total,lr\n";
  for (const auto& r : result.runs) {
    if (!r.ok) continue;
    for (const auto& e : r.curve) {
      os << to_string(r.method) << ',' << r.labeled << ',' << r.seed << ',' << e.iteration << ',' << e.test_ap << ','
         << e.losses.la << ',' << e.losses.lb << ',' << e.losses.ld << ',' << e.losses.lfl << ',' << e.losses.lfu
         << ',' << e.losses.total << ',' << e.lr << '\n';
    }
  }
}

SweepResult read_curves_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  SweepResult out;
  std::map<std::tuple<int, std::int64_t, std::uint64_t>, std::size_t> index;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 12) throw std::runtime_error("curves.csv: malformed row: " + line);
    const auto m = method_from_string(f[0]);
    const auto n = std::stoll(f[1]);
    const auto seed = std::stoull(f[2]);
    const auto key = std::make_tuple(static_cast<int>(m), n, seed);
    auto [it, inserted] = index.try_emplace(key, out.runs.size());
    if (inserted) out.runs.push_back({m, n, seed, true, {}, 0, {}});
    auto& r = out.runs[it->second];
    EvalPoint e;
    e.iteration = std::stoll(f[3]);
    e.test_ap = std::stod(f[4]);
    e.losses = {std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stod(f[8]), std::stod(f[9]), std::stod(f[10])};
    e.lr = std::stod(f[11]);
    r.curve.push_back(e);
    r.final_ap = e.test_ap;
  }
  return out;
}

std::vector<std::filesystem::path> plot_sweep(const SweepResult& result, const std::filesystem::path& dir) {
  static const std::array<plot::Rgb, 3> kColors{plot::Rgb{110, 110, 110}, plot::Rgb{40, 90, 200},
                                                plot::Rgb{210, 60, 40}};
  std::vector<std::int64_t> sizes;
  for (const auto& r : result.runs)
    if (std::find(sizes.begin(), sizes.end(), r.labeled) == sizes.end()) sizes.push_back(r.labeled);
  std::vector<std::filesystem::path> written;
  std::filesystem::create_directories(dir);
  for (auto n : sizes) {
    plot::Chart chart;
    chart.title = "TEST AP, " + std::to_string(n) + " LABELED";
    chart.x_label = "ITERATION";
    chart.y_label = "AP";
    for (auto m : {Method::Supervised, Method::LabeledFusion, Method::FullSemi}) {
      std::map<std::int64_t, std::vector<Real>> by_iter;
      for (const auto& r : result.runs)
        if (r.ok && r.method == m && r.labeled == n)
          for (const auto& e : r.curve) by_iter[e.iteration].push_back(e.test_ap);
      if (by_iter.empty()) continue;
      plot::Series s{to_string(m), kColors[static_cast<std::size_t>(m)], {}};
      for (const auto& [iter, aps] : by_iter) s.points.push_back({static_cast<Real>(iter), mean_and_std_error(aps).first});
      chart.series.push_back(std::move(s));
    }
    if (chart.series.empty()) continue;
    const auto path = dir / ("ap_curve_n" + std::to_string(n) + ".png");
    plot::write_png(chart, path);
    written.push_back(path);
  }
  return written;
}

}  // namespace smp::runner
