#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "popmap/partition.hpp"
#include "popmap/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace popmap;

namespace {

// Fifty villages with rendered tiles, shared by every test case in this file.
struct Fixture {
  testsupport::TempDir dir{"train"};
  SyntheticWorld world;
  DatasetManifest manifest;
  SplitAssignment split;
  std::vector<std::string> ids;

  Fixture() {
    SynthConfig cfg;
    cfg.n_states = 1;
    cfg.n_districts_per_state = 1;
    cfg.n_subdistricts_per_district = 5;
    cfg.n_villages_per_subdistrict = 10;
    cfg.seed = 19;
    world = generate_world(cfg);
    manifest = testsupport::render_manifest(world, dir / "tiles");
    std::vector<AdminCode> subs;
    for (const auto& v : world.villages) {
      subs.push_back(v.admin);
      if (v.has_target())
        ids.push_back(v.village_id);
    }
    split = prune_overlaps(split_subdistricts(subs, 0.6, 3), world.villages);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

ModelSpec small_spec(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  s.width_multiplier = 0.125;
  s.input_side = 64;
  if (kind == ModelKind::Classifier)
    s.n_classes = 6;
  return s;
}

TrainConfig quick_config(ModelKind kind) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 2;
  c.batch_size = 8;
  c.eval_batch_size = 16;
  c.seed = 5;
  c.loss = default_loss(kind);
  return c;
}

Network<float> fresh(ModelKind kind, std::uint64_t seed = 4) {
  auto net = build_model<float>(small_spec(kind));
  init_parameters(net, InitKind::Random, seed);
  return net;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double norm(Network<float>& net) {
  double s = 0.0;
  for (auto* p : net.params())
    if (p->decay)
      for (float v : p->value)
        s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

nn::Tensor<float> batch_of(int n, int side, std::uint64_t seed) {
  Rng rng = make_rng(seed, "batch");
  nn::Tensor<float> t(n, 3, side, side);
  for (auto& v : t.data)
    v = static_cast<float>(uniform01(rng));
  return t;
}

} // namespace

TEST_CASE("two-epoch smoke run records finite history and a checkpoint") {
  auto& f = fixture();
  auto net = fresh(ModelKind::SingleOptical);
  int callbacks = 0;
  const auto h = train(net, f.manifest, f.split, quick_config(ModelKind::SingleOptical),
                       f.dir / "smoke.ckpt", [&](const EpochRecord&) { ++callbacks; });
  REQUIRE(h.epochs.size() == 2);
  CHECK(callbacks == 2);
  for (const auto& e : h.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.val_loss));
    CHECK(std::isfinite(e.val_r2));
  }
  CHECK(h.epochs[0].epoch == 1);
  CHECK(h.epochs[1].epoch == 2);
  CHECK((h.best_epoch == 1 || h.best_epoch == 2));
  CHECK(std::filesystem::exists(f.dir / "smoke.ckpt"));

  // The model is left holding the best weights, which the checkpoint also stores.
  auto loaded = load_checkpoint(f.dir / "smoke.ckpt");
  const auto a = predict(net, f.manifest, f.ids, 16);
  const auto b = predict(loaded, f.manifest, f.ids, 16);
  for (const auto& id : f.ids)
    CHECK(a.at(id).value == b.at(id).value);

  write_history_csv(f.dir / "history.csv", h, true, "config_hash=abc seed=5");
  std::ifstream in(f.dir / "history.csv");
  std::string first, header;
  std::getline(in, first);
  std::getline(in, header);
  CHECK(first == "# config_hash=abc seed=5");
  CHECK(header == "epoch,train_loss,val_loss,val_r2,seconds");
}

TEST_CASE("identical config and seed give identical loss curves") {
  auto& f = fixture();
  auto run = [&](int workers, const std::string& name) {
    auto net = fresh(ModelKind::ShallowCombo);
    auto cfg = quick_config(ModelKind::ShallowCombo);
    cfg.workers = workers;
    return train(net, f.manifest, f.split, cfg, f.dir / name);
  };
  const auto a = run(1, "det-a.ckpt");
  const auto b = run(1, "det-b.ckpt");
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
    CHECK(a.epochs[i].val_loss == b.epochs[i].val_loss);
  }
  CHECK(slurp(f.dir / "det-a.ckpt") == slurp(f.dir / "det-b.ckpt"));

  // Parallel loading only changes who prepares the items, not what they contain.
  const auto c = run(3, "det-c.ckpt");
  for (std::size_t i = 0; i < a.epochs.size(); ++i)
    CHECK(a.epochs[i].train_loss == c.epochs[i].train_loss);
}

TEST_CASE("a different seed changes the curve") {
  auto& f = fixture();
  auto net_a = fresh(ModelKind::SingleRadar);
  auto net_b = fresh(ModelKind::SingleRadar);
  auto cfg = quick_config(ModelKind::SingleRadar);
  cfg.epochs = 1;
  const auto a = train(net_a, f.manifest, f.split, cfg, f.dir / "s1.ckpt");
  cfg.seed = 6;
  const auto b = train(net_b, f.manifest, f.split, cfg, f.dir / "s2.ckpt");
  CHECK(a.epochs[0].train_loss != b.epochs[0].train_loss);
}

TEST_CASE("classifier training uses cross-entropy and reports class probabilities") {
  auto& f = fixture();
  auto net = fresh(ModelKind::Classifier);
  const auto h = train(net, f.manifest, f.split, quick_config(ModelKind::Classifier),
                       f.dir / "cls.ckpt");
  CHECK(h.epochs.size() == 2);
  const auto preds = predict(net, f.manifest, f.ids, 16);
  const auto edges = bin_edges(6, 0.0, 12.0);
  for (const auto& [id, p] : preds) {
    REQUIRE(p.probabilities.size() == 6);
    const double total = std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    const auto best = std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                      p.probabilities.begin();
    CHECK(p.class_index == best);
    CHECK(p.value == doctest::Approx(std::log2(classifier_to_density(p.class_index, edges))));
  }
}

TEST_CASE("a mismatched loss is rejected") {
  auto& f = fixture();
  auto net = fresh(ModelKind::SingleOptical);
  auto cfg = quick_config(ModelKind::SingleOptical);
  cfg.loss = LossKind::CrossEntropy;
  CHECK_THROWS_AS(train(net, f.manifest, f.split, cfg, f.dir / "bad.ckpt"), Error);
}

TEST_CASE("a runaway learning rate aborts with a divergence error") {
  auto& f = fixture();
  auto net = fresh(ModelKind::SingleOptical);
  auto cfg = quick_config(ModelKind::SingleOptical);
  cfg.learning_rate = 1e12;
  try {
    train(net, f.manifest, f.split, cfg, f.dir / "div.ckpt");
    FAIL("expected Divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Divergence);
  }
}

TEST_CASE("predictions ignore batching and duplicates") {
  auto& f = fixture();
  auto net = fresh(ModelKind::DeepCombo);
  auto ids = f.ids;
  const auto one = predict(net, f.manifest, ids, 1);
  const auto many = predict(net, f.manifest, ids, 48);
  for (const auto& id : ids)
    CHECK(std::abs(one.at(id).value - many.at(id).value) <= 1e-5);

  ids.push_back(ids.front());
  const auto dup = predict(net, f.manifest, ids, 1);
  CHECK(dup.size() == f.ids.size());
  CHECK(dup.at(ids.front()).value == one.at(ids.front()).value);

  const auto again = predict(net, f.manifest, f.ids, 48);
  for (const auto& id : f.ids)
    CHECK(again.at(id).value == many.at(id).value);
}

TEST_CASE("an all-zero network predicts its output bias") {
  auto& f = fixture();
  auto net = fresh(ModelKind::ChannelConcat);
  for (auto* p : net.params())
    std::fill(p->value.begin(), p->value.end(), 0.0f);
  for (auto* p : net.params())
    if (p->name == "head/biases")
      p->value[0] = 3.75f;
  for (const auto& [id, p] : predict(net, f.manifest, f.ids, 16))
    CHECK(p.value == 3.75);
}

TEST_CASE("prediction needs every tile") {
  auto& f = fixture();
  auto manifest = f.manifest;
  manifest.tiles.erase(f.ids.front());
  auto net = fresh(ModelKind::SingleOptical);
  try {
    predict(net, manifest, f.ids, 16);
    FAIL("expected MissingTile");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingTile);
  }
}

TEST_CASE("checkpoint errors") {
  auto& f = fixture();
  std::ofstream(f.dir / "junk.ckpt") << "not a checkpoint";
  try {
    load_checkpoint(f.dir / "junk.ckpt");
    FAIL("expected Checkpoint");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Checkpoint);
  }
  CHECK_THROWS_AS(load_checkpoint(f.dir / "missing.ckpt"), Error);
}

TEST_CASE("one small step lowers the loss on its batch") {
  auto net = fresh(ModelKind::ShallowCombo, 11);
  const auto o = batch_of(4, 64, 1), r = batch_of(4, 64, 2);
  const std::vector<float> target = {3.0f, 5.0f, 7.0f, 9.0f};
  nn::RunContext ctx;
  nn::Tensor<float> dout;
  const double before = mse_loss(net.forward(&o, &r, ctx), target, dout);
  net.zero_grad();
  net.backward(dout);
  std::vector<std::vector<float>> velocity;
  sgd_step(net.params(), velocity, 1e-6, 0.0, 0.0);
  const double after = mse_loss(net.forward(&o, &r, ctx), target, dout);
  CHECK(after < before);
}

TEST_CASE("weight decay alone shrinks the weight norm every step") {
  auto net = fresh(ModelKind::SingleOptical, 12);
  std::vector<std::vector<float>> velocity;
  double prev = norm(net);
  for (int step = 0; step < 20; ++step) {
    net.zero_grad();
    sgd_step(net.params(), velocity, 0.1, 5e-3, 0.9);
    const double now = norm(net);
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("eval passes are repeatable") {
  auto net = fresh(ModelKind::DeepCombo, 13);
  const auto o = batch_of(3, 64, 3), r = batch_of(3, 64, 4);
  nn::RunContext ctx;
  const auto first = net.forward(&o, &r, ctx).data;
  const auto second = net.forward(&o, &r, ctx).data;
  CHECK(first == second);
}

TEST_CASE("mean squared error and its gradient") {
  nn::Tensor<float> out(3, 1, 1, 1);
  out.data = {1.0f, 2.0f, 4.0f};
  nn::Tensor<float> dout;
  const double loss = mse_loss(out, {1.0f, 3.0f, 1.0f}, dout);
  CHECK(loss == doctest::Approx((0.0 + 1.0 + 9.0) / 3.0));
  CHECK(dout.data[0] == doctest::Approx(0.0));
  CHECK(dout.data[1] == doctest::Approx(2.0 * -1.0 / 3.0));
  CHECK(dout.data[2] == doctest::Approx(2.0 * 3.0 / 3.0));
}

TEST_CASE("cross-entropy matches a direct log-softmax") {
  nn::Tensor<float> out(2, 3, 1, 1);
  out.data = {1.0f, 2.0f, 3.0f, 0.5f, -1.0f, 0.0f};
  nn::Tensor<float> dout;
  const double loss = cross_entropy_loss(out, {2, 0}, dout);
  auto row_loss = [](double a, double b, double c, double pick) {
    return std::log(std::exp(a) + std::exp(b) + std::exp(c)) - pick;
  };
  const double expected = (row_loss(1, 2, 3, 3) + row_loss(0.5, -1, 0, 0.5)) / 2.0;
  CHECK(loss == doctest::Approx(expected).epsilon(1e-6));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(dout.data[0] == doctest::Approx(std::exp(1.0) / z / 2.0).epsilon(1e-6));
  CHECK(dout.data[2] == doctest::Approx((std::exp(3.0) / z - 1.0) / 2.0).epsilon(1e-6));
}

TEST_CASE("config validation and the decay schedule") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 30;
  CHECK(c.decay_epochs() == std::vector<int>{20});
  CHECK(c.learning_rate_at(19) == c.learning_rate);
  CHECK(c.learning_rate_at(20) == doctest::Approx(c.learning_rate * 0.1));
  c.lr_decay_epochs = {5, 10};
  CHECK(c.learning_rate_at(12) == doctest::Approx(c.learning_rate * 0.01));

  auto bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.lr_decay_factor = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.lr_decay_factor = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(parse_loss_kind(loss_kind_name(LossKind::CrossEntropy)) == LossKind::CrossEntropy);
  CHECK(default_loss(ModelKind::Classifier) == LossKind::CrossEntropy);
  CHECK(default_loss(ModelKind::DeepCombo) == LossKind::Mse);
}
