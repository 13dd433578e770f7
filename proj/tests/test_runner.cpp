#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "smp/runner.hpp"

using smp::Real;
namespace rn = smp::runner;
namespace dt = smp::data;
namespace fs = std::filesystem;

namespace {

dt::DatasetSpec small_data() {
  dt::DatasetSpec s;
  s.n_pool = 8;
  s.n_labeled = 3;
  s.n_unlabeled = 2;
  s.n_test = 3;
  s.image_height = s.image_width = 32;
  s.max_instances = 2;
  s.scale_min = 10;
  s.scale_max = 14;
  s.min_keypoint_separation = 6;
  return s;
}

rn::TrainConfig small_train() {
  rn::TrainConfig c;
  c.total_iters = 12;
  c.fl_start_iter = 4;
  c.fu_start_iter = 8;
  c.lr_decay_at = 8;
  c.eval_every = 4;
  c.model.backbone_depth = 3;
  c.model.backbone_width = 6;
  c.model.head_width = 6;
  c.model.box_prior = 0.2;
  return c;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("smp_test_runner_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(SMP_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("batch composition") {
  rn::TrainConfig c;
  c.weights.beta = 1;
  CHECK(c.batch_split(0) == std::pair<std::int64_t, std::int64_t>{3, 0});
  CHECK(c.batch_split(c.fu_start_iter - 1) == std::pair<std::int64_t, std::int64_t>{3, 0});
  CHECK(c.batch_split(c.fu_start_iter) == std::pair<std::int64_t, std::int64_t>{2, 1});
  c.batch_size = 6;
  c.ratio_labeled = c.ratio_unlabeled = 1;
  CHECK(c.batch_split(c.fu_start_iter) == std::pair<std::int64_t, std::int64_t>{3, 3});
  c.weights.beta = 0;
  CHECK(c.batch_split(c.fu_start_iter + 10) == std::pair<std::int64_t, std::int64_t>{6, 0});
}

TEST_CASE("batches are seeded, stateless and sweep the pool each epoch") {
  rn::TrainConfig c;
  c.weights.beta = 1;
  c.fu_start_iter = 10;
  for (std::int64_t it : {0, 7, 10, 33}) {
    auto a = rn::assemble_batch(9, 5, it, c), b = rn::assemble_batch(9, 5, it, c);
    CHECK(a.labeled == b.labeled);
    CHECK(a.unlabeled == b.unlabeled);
    CHECK(a.unlabeled.empty() == (it < 10));
  }
  // Three batches of three cover a pool of nine exactly once.
  std::multiset<std::size_t> seen;
  for (std::int64_t it = 3; it < 6; ++it)
    for (auto i : rn::assemble_batch(9, 5, it, c).labeled) seen.insert(i);
  CHECK(seen.size() == 9);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 9);

  auto other = c;
  other.seed = 1;
  bool differs = false;
  for (std::int64_t it = 0; it < 5; ++it)
    differs |= rn::assemble_batch(9, 5, it, c).labeled != rn::assemble_batch(9, 5, it, other).labeled;
  CHECK(differs);

  CHECK_THROWS_AS(rn::assemble_batch(0, 5, 0, c), std::invalid_argument);
  CHECK_THROWS_AS(rn::assemble_batch(9, 0, 10, c), std::invalid_argument);
  CHECK_NOTHROW(rn::assemble_batch(9, 0, 9, c));
}

TEST_CASE("learning rate schedule and method weights") {
  rn::TrainConfig c;
  CHECK(c.lr_at(0) == c.lr);
  CHECK(c.lr_at(c.lr_decay_at - 1) == c.lr);
  CHECK(c.lr_at(c.lr_decay_at) == c.lr / 100);
  auto sup = rn::method_weights(c, rn::Method::Supervised, 5);
  CHECK(sup.alpha == 0);
  CHECK(sup.beta == 0);
  auto lf = rn::method_weights(c, rn::Method::LabeledFusion, 5);
  CHECK(lf.alpha == c.sparse_alpha);
  CHECK(lf.beta == 0);
  auto full = rn::method_weights(c, rn::Method::FullSemi, 20);
  CHECK(full.alpha == c.weights.alpha);
  CHECK(full.beta == c.weights.beta);
  for (auto m : {rn::Method::Supervised, rn::Method::LabeledFusion, rn::Method::FullSemi})
    CHECK(rn::method_from_string(rn::to_string(m)) == m);
  CHECK_THROWS_AS(rn::method_from_string("semi"), std::invalid_argument);
}

TEST_CASE("config validation and json") {
  auto c = small_train();
  c.fu_start_iter = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_train();
  c.eval_every = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_train();
  c.fusion_mode = smp::losses::FusionGradient::Soft;
  nlohmann::json j = c;
  CHECK(nlohmann::json(j.get<rn::TrainConfig>()) == j);
}

TEST_CASE("training stages, determinism and data isolation") {
  const auto ds = dt::generate_dataset(small_data());
  const auto splits = dt::make_splits(ds, 3, 0);
  std::set<std::int64_t> unlabeled_ids;
  for (const auto& u : splits.unlabeled) unlabeled_ids.insert(u.id);

  auto c = small_train();
  c.weights = rn::method_weights(c, rn::Method::FullSemi, 3);
  const auto a = rn::train(c, splits);
  const auto b = rn::train(c, splits);
  REQUIRE(a.trajectory.size() == 12);
  for (std::int64_t it = 0; it < 12; ++it) {
    const auto& t = a.trajectory[static_cast<std::size_t>(it)];
    CHECK(a.lrs[static_cast<std::size_t>(it)] == c.lr_at(it));
    if (it < c.fl_start_iter) CHECK(t.lfl == 0);
    if (it < c.fu_start_iter) {
      CHECK(t.lfu == 0);
      CHECK(a.unlabeled_ids[static_cast<std::size_t>(it)].empty());
    } else {
      CHECK(a.unlabeled_ids[static_cast<std::size_t>(it)].size() == 1);
      CHECK(a.labeled_ids[static_cast<std::size_t>(it)].size() == 2);
    }
    for (auto id : a.unlabeled_ids[static_cast<std::size_t>(it)]) CHECK(unlabeled_ids.count(id) == 1);
    CHECK(t.total == b.trajectory[static_cast<std::size_t>(it)].total);
    CHECK(t.lfu == b.trajectory[static_cast<std::size_t>(it)].lfu);
  }
  REQUIRE(a.evals.size() == 3);
  CHECK(a.evals[0].iteration == 4);
  CHECK(a.evals[2].iteration == 12);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.evals[i].test_ap == b.evals[i].test_ap);
  for (std::size_t i = 0; i < a.final_params.tensors.size(); ++i) {
    const auto& x = a.final_params.tensors[i].value.data();
    const auto& y = b.final_params.tensors[i].value.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }

  c.weights = rn::method_weights(c, rn::Method::Supervised, 3);
  const auto s = rn::train(c, splits);
  for (std::size_t it = 0; it < 12; ++it) {
    CHECK(s.unlabeled_ids[it].empty());
    CHECK(s.trajectory[it].lfl == 0);
    CHECK(s.trajectory[it].lfu == 0);
  }
}

TEST_CASE("standard error") {
  const std::vector<Real> v{1, 2, 3, 4};
  auto [m, se] = rn::mean_and_std_error(v);
  CHECK(m == 2.5);
  CHECK(se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2).epsilon(1e-14));
  const std::vector<Real> one{0.3};
  CHECK(rn::mean_and_std_error(one).second == 0);
}

TEST_CASE("sweep files") {
  const auto ds = dt::generate_dataset(small_data());
  rn::SweepSpec spec;
  spec.data = small_data();
  spec.train = small_train();
  spec.train.total_iters = 8;
  spec.train.save_checkpoints = false;
  spec.methods = {rn::Method::Supervised, rn::Method::FullSemi};
  spec.labeled_sizes = {3};
  spec.seeds = {0, 1};
  const auto dir = scratch("sweep");
  const auto result = rn::sweep(spec, ds, dir);
  REQUIRE(result.runs.size() == 4);
  for (const auto& r : result.runs) CHECK(r.ok);
  CHECK(result.cell(rn::Method::FullSemi, 3).runs == 2);

  std::ifstream table(dir / "table.csv");
  std::string line;
  std::getline(table, line);
  CHECK(line == "method,labeled,runs,failed,mean_ap,std_error");
  int rows = 0;
  while (std::getline(table, line)) ++rows;
  CHECK(rows == 2);

  std::ifstream curves(dir / "curves.csv");
  std::getline(curves, line);
  CHECK(line == "method,labeled,seed,iteration,test_ap,la,lb,ld,lfl,lfu,total,lr");
  rows = 0;
  while (std::getline(curves, line)) ++rows;
  CHECK(rows == 4 * 2);
  const auto back = rn::read_curves_csv(dir / "curves.csv");
  REQUIRE(back.runs.size() == 4);
  CHECK(back.runs[3].curve.back().test_ap == doctest::Approx(result.runs[3].curve.back().test_ap).epsilon(1e-9));
  CHECK(fs::exists(dir / "runs.json"));
  fs::remove_all(dir);
}

TEST_CASE("evaluation entry points") {
  const auto ds = dt::generate_dataset(small_data());
  const auto splits = dt::make_splits(ds, 3, 0);
  const auto dir = scratch("eval");
  auto c = small_train();
  c.weights = rn::method_weights(c, rn::Method::Supervised, 3);
  const auto rec = rn::train(c, splits, {dir / "run", {}, {}});
  REQUIRE(fs::exists(rec.final_checkpoint));

  for (const auto& pred : rn::predict(rec.final_params, ds.test, rec.decode))
    for (const auto& inst : pred.instances)
      for (const auto& p : inst.keypoints) {
        CHECK(p.row >= 0);
        CHECK(p.row <= 31);
        CHECK(p.col >= 0);
        CHECK(p.col <= 31);
      }

  const smp::eval::OksParams oks;
  const auto r1 = rn::evaluate(rec.final_checkpoint, ds, oks, dir / "pred.json");
  const auto r2 = rn::evaluate(rec.final_checkpoint, ds, oks, std::nullopt);
  CHECK(r1.per_threshold == r2.per_threshold);
  CHECK(r1.ap == doctest::Approx(rec.final_ap()).epsilon(1e-12));
  CHECK(rn::evaluate_prediction_file(dir / "pred.json", ds, oks).ap == r1.ap);

  // Ground truth written as a prediction file scores perfectly.
  std::vector<std::vector<Real>> scores;
  for (const auto& s : ds.test) scores.emplace_back(s.instances.size(), 1.0);
  dt::write_annotations(ds.test, {3, ds.spec.part_names}, dir / "oracle.json", dt::ImageStorage::Embedded, scores);
  CHECK(rn::evaluate_prediction_file(dir / "oracle.json", ds, oks).ap == 1);

  auto wrong = small_train();
  wrong.model.parts = 2;
  smp::model::save_checkpoint({smp::model::init(wrong.model, 0), 0, {}}, dir / "k2.bin");
  CHECK_THROWS_AS(rn::evaluate(dir / "k2.bin", ds, oks, std::nullopt), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("command line exit codes") {
  const auto dir = scratch("cli");
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  std::ofstream(dir / "bad.json") << R"({"n_pool": 2, "n_labeled": 5})";
  CHECK(run_cli("generate --spec " + (dir / "bad.json").string() + " --out " + (dir / "d").string()) == 1);
  std::ofstream(dir / "broken.json") << "{";
  CHECK(run_cli("generate --spec " + (dir / "broken.json").string() + " --out " + (dir / "d").string()) == 1);
  nlohmann::json spec = small_data();
  std::ofstream(dir / "spec.json") << spec.dump();
  CHECK(run_cli("generate --spec " + (dir / "spec.json").string() + " --out " + (dir / "d").string()) == 0);
  CHECK(fs::exists(dir / "d" / "manifest.json"));
  CHECK(run_cli("eval --checkpoint " + (dir / "none.bin").string() + " --data " + (dir / "d").string()) == 2);
  fs::remove_all(dir);
}
