#include "popmap/train.hpp"

#include "popmap/error.hpp"
#include "popmap/evaluate.hpp"
#include "popmap/text.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>

namespace popmap {

std::string_view loss_kind_name(LossKind loss) noexcept {
  return loss == LossKind::Mse ? "MSE" : "CROSS_ENTROPY";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "MSE")
    return LossKind::Mse;
  if (name == "CROSS_ENTROPY")
    return LossKind::CrossEntropy;
  fail(ErrorCode::Config, "unknown loss '" + std::string(name) + "'");
}

LossKind default_loss(ModelKind kind) noexcept {
  return kind == ModelKind::Classifier ? LossKind::CrossEntropy : LossKind::Mse;
}

void TrainConfig::validate() const {
  if (batch_size < 1)
    fail(ErrorCode::Config, "batch_size must be >= 1");
  if (eval_batch_size < 1)
    fail(ErrorCode::Config, "eval_batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    fail(ErrorCode::Config, "learning_rate must be > 0");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
    fail(ErrorCode::Config, "lr_decay_factor must lie in (0, 1]");
  if (!(weight_decay >= 0.0))
    fail(ErrorCode::Config, "weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    fail(ErrorCode::Config, "momentum must lie in [0, 1)");
  if (epochs < 1)
    fail(ErrorCode::Config, "epochs must be >= 1");
  if (workers < 1)
    fail(ErrorCode::Config, "workers must be >= 1");
  for (int e : lr_decay_epochs)
    if (e < 1)
      fail(ErrorCode::Config, "lr_decay_epochs entries must be >= 1");
}

std::vector<int> TrainConfig::decay_epochs() const {
  if (!lr_decay_epochs.empty())
    return lr_decay_epochs;
  return {static_cast<int>(std::lround(2.0 * epochs / 3.0))};
}

double TrainConfig::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (int boundary : decay_epochs())
    if (epoch >= boundary)
      lr *= lr_decay_factor;
  return lr;
}

// ---- data loading ---------------------------------------------------------------------

namespace {

struct Batch {
  std::vector<std::string> ids;
  nn::Tensor<float> optical;
  nn::Tensor<float> radar;
};

struct ItemLoader {
  const DatasetManifest* manifest = nullptr;
  bool need_optical = false;
  bool need_radar = false;
  int side = 224;
  bool train_mode = false;
  std::uint64_t seed = 0;
  int epoch = 0;

  const TilePair& tiles(const std::string& id) const {
    auto it = manifest->tiles.find(id);
    if (it == manifest->tiles.end())
      fail(ErrorCode::MissingTile, "no tiles for village " + id);
    return it->second;
  }

  void fill(nn::Tensor<float>& dst, int slot, const TileRef& ref, const Rng& item_rng) const {
    Rng rng = item_rng; // both modalities see the same crop fractions and flips
    PrepConfig prep;
    prep.output_side = side;
    const ImageTensor img = prepare_input(load_tile(ref), train_mode, rng, prep);
    std::copy(img.data.begin(), img.data.end(), dst.sample(slot));
  }

  Batch load(const std::vector<std::string>& ids) const {
    Batch b;
    b.ids = ids;
    const int n = static_cast<int>(ids.size());
    if (need_optical)
      b.optical.resize(n, 3, side, side);
    if (need_radar)
      b.radar.resize(n, 3, side, side);
    for (int i = 0; i < n; ++i) {
      const TilePair& pair = tiles(ids[i]);
      const Rng rng = make_rng(seed, ids[i], static_cast<std::uint64_t>(epoch) + 1);
      if (need_optical)
        fill(b.optical, i, pair.optical, rng);
      if (need_radar)
        fill(b.radar, i, pair.radar, rng);
    }
    return b;
  }
};

// Delivers batches strictly in order. With more than one worker, batches are prepared
// ahead on background threads; results do not depend on the worker count.
class BatchSource {
public:
  BatchSource(const ItemLoader& loader, std::vector<std::vector<std::string>> batches, int workers)
      : loader_(loader), batches_(std::move(batches)), slots_(batches_.size()) {
    if (workers <= 1)
      return;
    lookahead_ = static_cast<std::size_t>(workers) + 1;
    for (int w = 0; w < workers; ++w)
      threads_.emplace_back([this] { run(); });
  }

  ~BatchSource() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_)
      t.join();
  }

  BatchSource(const BatchSource&) = delete;
  BatchSource& operator=(const BatchSource&) = delete;

  bool done() const { return consumed_ >= batches_.size(); }

  Batch next() {
    const std::size_t i = consumed_;
    if (threads_.empty()) {
      ++consumed_;
      return loader_.load(batches_[i]);
    }
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return slots_[i].ready; });
    Slot slot = std::move(slots_[i]);
    slots_[i] = Slot{};
    ++consumed_;
    lock.unlock();
    cv_.notify_all();
    if (slot.error)
      std::rethrow_exception(slot.error);
    return std::move(*slot.batch);
  }

private:
  struct Slot {
    bool ready = false;
    std::optional<Batch> batch;
    std::exception_ptr error;
  };

  void run() {
    for (;;) {
      std::size_t i = 0;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] {
          return stop_ || claimed_ >= batches_.size() || claimed_ < consumed_ + lookahead_;
        });
        if (stop_ || claimed_ >= batches_.size())
          return;
        i = claimed_++;
      }
      Slot slot;
      try {
        slot.batch = loader_.load(batches_[i]);
      } catch (...) {
        slot.error = std::current_exception();
      }
      slot.ready = true;
      {
        std::lock_guard lock(mu_);
        slots_[i] = std::move(slot);
      }
      cv_.notify_all();
    }
  }

  ItemLoader loader_;
  std::vector<std::vector<std::string>> batches_;
  std::vector<Slot> slots_;
  std::size_t consumed_ = 0;
  std::size_t claimed_ = 0;
  std::size_t lookahead_ = 0;
  bool stop_ = false;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::thread> threads_;
};

std::vector<std::vector<std::string>> chunk(const std::vector<std::string>& ids, int size) {
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i < ids.size(); i += static_cast<std::size_t>(size))
    out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                     ids.begin() + static_cast<std::ptrdiff_t>(
                                       std::min(ids.size(), i + static_cast<std::size_t>(size))));
  return out;
}

ItemLoader make_loader(const Network<float>& model, const DatasetManifest& manifest) {
  ItemLoader loader;
  loader.manifest = &manifest;
  loader.need_optical = uses_optical(model.spec().kind);
  loader.need_radar = uses_radar(model.spec().kind);
  loader.side = model.spec().input_side;
  return loader;
}

const nn::Tensor<float>& run_forward(Network<float>& model, const Batch& batch,
                                     nn::RunContext& ctx) {
  return model.forward(batch.optical.size() ? &batch.optical : nullptr,
                       batch.radar.size() ? &batch.radar : nullptr, ctx);
}

void softmax_row(const float* logits, int k, std::vector<double>& probs) {
  probs.resize(static_cast<std::size_t>(k));
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j)
    mx = std::max(mx, static_cast<double>(logits[j]));
  double sum = 0.0;
  for (int j = 0; j < k; ++j) {
    probs[j] = std::exp(static_cast<double>(logits[j]) - mx);
    sum += probs[j];
  }
  for (auto& p : probs)
    p /= sum;
}

// Villages without a log2 target (zero population) are left out of both sets.
struct Targets {
  std::map<std::string, double> log2;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<double> edges; // classifier only
};

Targets collect_targets(const DatasetManifest& manifest, const SplitAssignment& split,
                        const ModelSpec& spec) {
  Targets t;
  auto add = [&](const std::string& id) {
    const VillageRecord* v = manifest.find(id);
    if (!v)
      fail(ErrorCode::DataPipeline, "split village " + id + " is not in the manifest");
    if (!v->has_target())
      return false;
    if (!manifest.has_tiles(id))
      fail(ErrorCode::MissingTile, "no tiles for village " + id);
    t.log2[id] = *v->log2_density;
    return true;
  };
  for (const auto& id : split.train_villages)
    if (add(id))
      t.train.push_back(id);
  for (const auto& id : split.val_villages)
    if (add(id))
      t.val.push_back(id);
  if (spec.kind == ModelKind::Classifier)
    t.edges = bin_edges(spec.n_classes, spec.class_lo, spec.class_hi);
  return t;
}

} // namespace

// ---- losses and optimizer -------------------------------------------------------------

double mse_loss(const nn::Tensor<float>& out, const std::vector<float>& target,
                nn::Tensor<float>& dout) {
  const int n = out.n;
  if (static_cast<std::size_t>(n) != target.size() || out.sample_size() != 1)
    fail(ErrorCode::ShapeMismatch, "mse_loss expects N x 1 outputs and N targets");
  dout.reshape_like(n, 1, 1, 1);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = static_cast<double>(out.data[i]) - target[i];
    sum += r * r;
    dout.data[i] = static_cast<float>(2.0 * r / n);
  }
  return sum / n;
}

double cross_entropy_loss(const nn::Tensor<float>& out, const std::vector<int>& target,
                          nn::Tensor<float>& dout) {
  const int n = out.n;
  const int k = static_cast<int>(out.sample_size());
  if (static_cast<std::size_t>(n) != target.size())
    fail(ErrorCode::ShapeMismatch, "cross_entropy_loss expects N targets");
  dout.reshape_like(n, k, 1, 1);
  std::vector<double> probs;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    softmax_row(out.sample(i), k, probs);
    const int y = target[i];
    if (y < 0 || y >= k)
      fail(ErrorCode::DataPipeline, "class target out of range");
    sum -= std::log(std::max(probs[y], 1e-300));
    for (int j = 0; j < k; ++j)
      dout.sample(i)[j] = static_cast<float>((probs[j] - (j == y ? 1.0 : 0.0)) / n);
  }
  return sum / n;
}

void sgd_step(const std::vector<nn::Param<float>*>& params,
              std::vector<std::vector<float>>& velocity, double learning_rate,
              double weight_decay, double momentum) {
  if (velocity.size() != params.size()) {
    velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      velocity[i].assign(params[i]->size(), 0.0f);
  }
  const auto lr = static_cast<float>(learning_rate);
  const auto mu = static_cast<float>(momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& v = velocity[i];
    const float wd = p.decay ? static_cast<float>(weight_decay) : 0.0f;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const float g = p.grad[j] + wd * p.value[j];
      v[j] = mu * v[j] + g;
      p.value[j] -= lr * v[j];
    }
  }
}

// ---- checkpoints ----------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, Network<float>& model, int epoch,
                     const std::string& note) {
  Archive archive = export_parameters(model);
  archive.texts["model_spec"] = model.spec().to_text();
  archive.texts["epoch"] = std::to_string(epoch);
  if (!note.empty())
    archive.texts["note"] = note;
  write_archive(path, archive);
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  const Archive archive = read_archive(path, ErrorCode::Checkpoint);
  auto it = archive.texts.find("model_spec");
  if (it == archive.texts.end())
    fail(ErrorCode::Checkpoint, path.string() + ": checkpoint has no model_spec");
  ModelSpec spec;
  try {
    spec = ModelSpec::from_text(it->second);
    spec.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Checkpoint, path.string() + ": bad model_spec: " + e.what());
  }
  Network<float> model(spec);
  import_parameters(model, archive, true);
  return model;
}

// ---- prediction -----------------------------------------------------------------------

std::map<std::string, Prediction> predict(Network<float>& model, const DatasetManifest& manifest,
                                          const std::vector<std::string>& village_ids,
                                          int batch_size, int workers) {
  if (batch_size < 1)
    fail(ErrorCode::Config, "batch_size must be >= 1");
  const ModelSpec& spec = model.spec();
  const bool classifier = spec.kind == ModelKind::Classifier;
  std::vector<double> edges;
  if (classifier)
    edges = bin_edges(spec.n_classes, spec.class_lo, spec.class_hi);

  std::map<std::string, Prediction> out;
  BatchSource source(make_loader(model, manifest), chunk(village_ids, batch_size), workers);
  nn::RunContext ctx{false, nullptr};
  while (!source.done()) {
    const Batch batch = source.next();
    const auto& y = run_forward(model, batch, ctx);
    for (int i = 0; i < y.n; ++i) {
      Prediction p;
      if (classifier) {
        softmax_row(y.sample(i), model.output_dim(), p.probabilities);
        p.class_index = static_cast<int>(
            std::max_element(p.probabilities.begin(), p.probabilities.end()) -
            p.probabilities.begin());
        p.value = std::log2(classifier_to_density(p.class_index, edges));
      } else {
        p.value = y.sample(i)[0];
      }
      out[batch.ids[static_cast<std::size_t>(i)]] = std::move(p);
    }
  }
  return out;
}

std::map<std::string, Prediction> predict(const std::filesystem::path& checkpoint,
                                          const DatasetManifest& manifest,
                                          const std::vector<std::string>& village_ids,
                                          int batch_size, int workers) {
  Network<float> model = load_checkpoint(checkpoint);
  return predict(model, manifest, village_ids, batch_size, workers);
}

// ---- training -------------------------------------------------------------------------

TrainHistory train(Network<float>& model, const DatasetManifest& manifest,
                   const SplitAssignment& split, const TrainConfig& config,
                   const std::filesystem::path& checkpoint_path, const EpochCallback& on_epoch) {
  config.validate();
  const ModelSpec& spec = model.spec();
  if (config.loss != default_loss(spec.kind))
    fail(ErrorCode::Config, std::string(model_kind_name(spec.kind)) + " cannot train with " +
                                std::string(loss_kind_name(config.loss)) + " loss");
  const Targets targets = collect_targets(manifest, split, spec);
  if (targets.train.empty())
    fail(ErrorCode::EmptyDataset, "no training villages with a target");
  const bool classifier = spec.kind == ModelKind::Classifier;

  const auto params = model.params();
  if (config.init_bias_to_mean && !classifier) {
    double mean = 0.0;
    for (const auto& id : targets.train)
      mean += targets.log2.at(id);
    mean /= static_cast<double>(targets.train.size());
    for (auto* p : params)
      if (p->name == "head/biases")
        std::fill(p->value.begin(), p->value.end(), static_cast<float>(mean));
  }

  std::vector<std::vector<float>> velocity;
  TrainHistory history;
  history.checkpoint_path = checkpoint_path;
  double best_val = std::numeric_limits<double>::infinity();
  Archive best;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = config.learning_rate_at(epoch);

    std::vector<std::string> order = targets.train;
    Rng shuffle_rng = make_rng(config.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch));
    shuffle_in_place(order, shuffle_rng);

    ItemLoader loader = make_loader(model, manifest);
    loader.train_mode = config.augment;
    loader.seed = config.seed;
    loader.epoch = epoch;
    BatchSource source(loader, chunk(order, config.batch_size), config.workers);

    Rng dropout_rng = make_rng(config.seed, "dropout", static_cast<std::uint64_t>(epoch));
    nn::RunContext ctx{true, &dropout_rng};
    nn::Tensor<float> dout;
    std::vector<float> reg_target;
    std::vector<int> cls_target;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    int step = 0;
    while (!source.done()) {
      const Batch batch = source.next();
      const auto& y = run_forward(model, batch, ctx);
      double loss = 0.0;
      if (classifier) {
        cls_target.clear();
        for (const auto& id : batch.ids)
          cls_target.push_back(class_of(targets.log2.at(id), targets.edges));
        loss = cross_entropy_loss(y, cls_target, dout);
      } else {
        reg_target.clear();
        for (const auto& id : batch.ids)
          reg_target.push_back(static_cast<float>(targets.log2.at(id)));
        loss = mse_loss(y, reg_target, dout);
      }
      if (!std::isfinite(loss))
        fail(ErrorCode::Divergence, "non-finite training loss at epoch " +
                                        std::to_string(epoch + 1) + ", step " +
                                        std::to_string(step + 1) + " (learning rate " +
                                        text::format_double(lr) + ")");
      model.zero_grad();
      model.backward(dout);
      sgd_step(params, velocity, lr, config.weight_decay, config.momentum);
      loss_sum += loss * static_cast<double>(batch.ids.size());
      seen += batch.ids.size();
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    rec.val_r2 = std::numeric_limits<double>::quiet_NaN();
    if (!targets.val.empty()) {
      nn::RunContext eval_ctx{false, nullptr};
      BatchSource val_source(make_loader(model, manifest),
                             chunk(targets.val, config.eval_batch_size), config.workers);
      std::vector<double> pred, truth;
      double vsum = 0.0;
      while (!val_source.done()) {
        const Batch batch = val_source.next();
        const auto& y = run_forward(model, batch, eval_ctx);
        double loss = 0.0;
        if (classifier) {
          cls_target.clear();
          for (const auto& id : batch.ids)
            cls_target.push_back(class_of(targets.log2.at(id), targets.edges));
          loss = cross_entropy_loss(y, cls_target, dout);
          std::vector<double> probs;
          for (int i = 0; i < y.n; ++i) {
            softmax_row(y.sample(i), y.c, probs);
            const int k = static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                                           probs.begin());
            pred.push_back(std::log2(classifier_to_density(k, targets.edges)));
          }
        } else {
          reg_target.clear();
          for (const auto& id : batch.ids)
            reg_target.push_back(static_cast<float>(targets.log2.at(id)));
          loss = mse_loss(y, reg_target, dout);
          for (int i = 0; i < y.n; ++i)
            pred.push_back(y.sample(i)[0]);
        }
        for (const auto& id : batch.ids)
          truth.push_back(targets.log2.at(id));
        vsum += loss * static_cast<double>(batch.ids.size());
      }
      rec.val_loss = vsum / static_cast<double>(truth.size());
      if (!std::isfinite(rec.val_loss))
        fail(ErrorCode::Divergence,
             "non-finite validation loss at epoch " + std::to_string(epoch + 1));
      try {
        rec.val_r2 = r_squared(pred, truth);
      } catch (const Error&) {
        // constant validation truth: R^2 undefined
      }
    }

    const bool improved = targets.val.empty() || rec.val_loss < best_val;
    if (improved) {
      best_val = rec.val_loss;
      history.best_epoch = rec.epoch;
      best = export_parameters(model);
      save_checkpoint(checkpoint_path, model, rec.epoch);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    if (on_epoch)
      on_epoch(rec);
  }
  import_parameters(model, best, true);
  return history;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history,
                       bool include_seconds, const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  if (!provenance.empty())
    out << "# " << provenance << '\n';
  out << "epoch,train_loss,val_loss,val_r2,seconds\n";
  for (const auto& e : history.epochs)
    out << e.epoch << ',' << text::format_double(e.train_loss) << ','
        << text::format_double(e.val_loss) << ',' << text::format_double(e.val_r2) << ','
        << text::format_double(include_seconds ? e.seconds : 0.0) << '\n';
  if (!out)
    fail(ErrorCode::Io, "write failed for " + path.string());
}

} // namespace popmap
