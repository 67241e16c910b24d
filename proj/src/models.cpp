#include "popmap/models.hpp"

#include "popmap/error.hpp"
#include "popmap/text.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace popmap {

std::string_view model_kind_name(ModelKind kind) noexcept {
  switch (kind) {
  case ModelKind::SingleOptical: return "SINGLE_OPTICAL";
  case ModelKind::SingleRadar: return "SINGLE_RADAR";
  case ModelKind::ChannelConcat: return "CHANNEL_CONCAT";
  case ModelKind::ShallowCombo: return "SHALLOW_COMBO";
  case ModelKind::DeepCombo: return "DEEP_COMBO";
  case ModelKind::Classifier: return "CLASSIFIER";
  }
  return "UNKNOWN";
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : kAllModelKinds)
    if (model_kind_name(k) == name)
      return k;
  fail(ErrorCode::Spec, "unknown model kind '" + std::string(name) + "'");
}

bool is_fusion(ModelKind kind) noexcept {
  return kind == ModelKind::ShallowCombo || kind == ModelKind::DeepCombo;
}

bool uses_optical(ModelKind kind) noexcept { return kind != ModelKind::SingleRadar; }

bool uses_radar(ModelKind kind) noexcept {
  return kind == ModelKind::SingleRadar || kind == ModelKind::ChannelConcat || is_fusion(kind);
}

int scaled_channels(int base, double width_multiplier) noexcept {
  return std::max(1, static_cast<int>(std::lround(base * width_multiplier)));
}

void ModelSpec::validate() const {
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0))
    fail(ErrorCode::Spec, "width_multiplier must lie in (0, 1]");
  if (input_side < 32 || input_side % 32 != 0)
    fail(ErrorCode::Spec, "input_side must be a positive multiple of 32");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0))
    fail(ErrorCode::Spec, "dropout_keep must lie in (0, 1]");
  if (kind == ModelKind::Classifier) {
    if (n_classes < 2)
      fail(ErrorCode::Spec, "CLASSIFIER requires n_classes >= 2");
    if (!(class_lo < class_hi))
      fail(ErrorCode::Spec, "CLASSIFIER requires class_lo < class_hi");
  }
}

std::string ModelSpec::to_text() const {
  std::ostringstream out;
  out << "format=popmap-model-spec/1\n"
      << "kind=" << model_kind_name(kind) << "\n"
      << "width_multiplier=" << text::format_double(width_multiplier) << "\n"
      << "input_side=" << input_side << "\n"
      << "dropout_keep=" << text::format_double(dropout_keep) << "\n"
      << "n_classes=" << n_classes << "\n"
      << "class_lo=" << text::format_double(class_lo) << "\n"
      << "class_hi=" << text::format_double(class_hi) << "\n"
      << "init=" << (init == InitKind::Random ? "RANDOM" : "PRETRAINED_HOOK") << "\n";
  return out.str();
}

ModelSpec ModelSpec::from_text(const std::string& body) {
  ModelSpec spec;
  bool versioned = false;
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    auto view = text::trim(line);
    if (view.empty())
      continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorCode::Checkpoint, "malformed model spec line '" + std::string(view) + "'");
    const auto key = view.substr(0, eq);
    const auto value = view.substr(eq + 1);
    auto num = [&](auto def) {
      auto v = text::parse_number<decltype(def)>(value);
      if (!v)
        fail(ErrorCode::Checkpoint, "bad value for " + std::string(key));
      return *v;
    };
    if (key == "format") {
      if (value != "popmap-model-spec/1")
        fail(ErrorCode::Checkpoint, "unsupported model spec format '" + std::string(value) + "'");
      versioned = true;
    } else if (key == "kind") {
      spec.kind = parse_model_kind(value);
    } else if (key == "width_multiplier") {
      spec.width_multiplier = num(0.0);
    } else if (key == "input_side") {
      spec.input_side = num(0);
    } else if (key == "dropout_keep") {
      spec.dropout_keep = num(0.0);
    } else if (key == "n_classes") {
      spec.n_classes = num(0);
    } else if (key == "class_lo") {
      spec.class_lo = num(0.0);
    } else if (key == "class_hi") {
      spec.class_hi = num(0.0);
    } else if (key == "init") {
      spec.init = value == "PRETRAINED_HOOK" ? InitKind::PretrainedHook : InitKind::Random;
    }
  }
  if (!versioned)
    fail(ErrorCode::Checkpoint, "model spec lacks a format line");
  return spec;
}

// ---- Network ------------------------------------------------------------------------------

namespace {

template <typename T>
int add_stage(nn::Sequential<T>& seq, const std::string& prefix, int stage, int in_channels,
              double width) {
  const auto& plan = kVggStages[stage];
  int c = in_channels;
  for (int j = 0; j < 3 && plan[j] > 0; ++j) {
    const int out = scaled_channels(plan[j], width);
    seq.template emplace<nn::Conv2d<T>>(
        prefix + "conv" + std::to_string(stage + 1) + "_" + std::to_string(j + 1), c, out, 3, true);
    c = out;
  }
  seq.template emplace<nn::MaxPool2<T>>(prefix + "pool" + std::to_string(stage + 1));
  return c;
}

template <typename T>
void add_head(nn::Sequential<T>& seq, const ModelSpec& spec, int flat_features) {
  const double w = spec.width_multiplier;
  const int fc = scaled_channels(kVggFcWidth, w);
  seq.template emplace<nn::Linear<T>>("fc6", flat_features, fc, true);
  seq.template emplace<nn::Dropout<T>>("dropout6", spec.dropout_keep);
  seq.template emplace<nn::Linear<T>>("fc7", fc, fc, true);
  seq.template emplace<nn::Dropout<T>>("dropout7", spec.dropout_keep);
  int last = fc;
  if (is_fusion(spec.kind)) {
    const int narrow = scaled_channels(kComboFcWidth, w);
    seq.template emplace<nn::Linear<T>>("fc100", fc, narrow, true);
    last = narrow;
  }
  const int outputs = spec.kind == ModelKind::Classifier ? spec.n_classes : 1;
  seq.template emplace<nn::Linear<T>>("head", last, outputs, false);
}

} // namespace

template <typename T>
Network<T>::Network(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const double w = spec_.width_multiplier;
  const int final_side = spec_.input_side / 32;

  switch (spec_.kind) {
  case ModelKind::SingleOptical:
  case ModelKind::SingleRadar:
  case ModelKind::ChannelConcat:
  case ModelKind::Classifier: {
    int c = spec_.kind == ModelKind::ChannelConcat ? 6 : 3;
    for (int s = 0; s < 5; ++s)
      c = add_stage(trunk_, "", s, c, w);
    add_head(trunk_, spec_, c * final_side * final_side);
    break;
  }
  case ModelKind::ShallowCombo: {
    int c = 0;
    for (const char* prefix : {"optical/", "radar/"}) {
      auto& branch = branches_.emplace_back();
      c = add_stage(branch, prefix, 0, 3, w);
    }
    fused_channels_ = 2 * c;
    reduced_channels_ = c;
    trunk_.template emplace<nn::Conv2d<T>>("fuse_1x1", fused_channels_, reduced_channels_, 1, true);
    for (int s = 1; s < 5; ++s)
      c = add_stage(trunk_, "", s, c, w);
    add_head(trunk_, spec_, c * final_side * final_side);
    break;
  }
  case ModelKind::DeepCombo: {
    int c = 0;
    for (const char* prefix : {"optical/", "radar/"}) {
      auto& branch = branches_.emplace_back();
      c = 3;
      for (int s = 0; s < 5; ++s)
        c = add_stage(branch, prefix, s, c, w);
    }
    fused_channels_ = 2 * c;
    reduced_channels_ = c;
    trunk_.template emplace<nn::Conv2d<T>>("fuse_1x1", fused_channels_, reduced_channels_, 1, true);
    add_head(trunk_, spec_, c * final_side * final_side);
    break;
  }
  }
  branch_grads_.resize(branches_.size());
}

template <typename T>
int Network<T>::output_dim() const noexcept {
  return spec_.kind == ModelKind::Classifier ? spec_.n_classes : 1;
}

template <typename T>
const nn::Tensor<T>& Network<T>::forward(const nn::Tensor<T>* optical, const nn::Tensor<T>* radar,
                                         nn::RunContext& ctx) {
  auto require = [&](const nn::Tensor<T>* t, const char* what) -> const nn::Tensor<T>& {
    if (!t)
      fail(ErrorCode::DataPipeline,
           std::string(model_kind_name(spec_.kind)) + " needs the " + what + " input");
    if (t->c != 3 || t->h != spec_.input_side || t->w != spec_.input_side)
      fail(ErrorCode::ShapeMismatch, std::string(what) + " input must be N x 3 x " +
                                         std::to_string(spec_.input_side) + " x " +
                                         std::to_string(spec_.input_side));
    return *t;
  };

  switch (spec_.kind) {
  case ModelKind::SingleOptical:
  case ModelKind::Classifier:
    return trunk_.forward(require(optical, "optical"), ctx);
  case ModelKind::SingleRadar:
    return trunk_.forward(require(radar, "radar"), ctx);
  case ModelKind::ChannelConcat: {
    const auto& o = require(optical, "optical");
    const auto& r = require(radar, "radar");
    if (o.n != r.n)
      fail(ErrorCode::ShapeMismatch, "optical and radar batch sizes differ");
    concat_.reshape_like(o.n, 6, o.h, o.w);
    const std::size_t part = o.sample_size();
    for (int i = 0; i < o.n; ++i) {
      std::copy(o.sample(i), o.sample(i) + part, concat_.sample(i));
      std::copy(r.sample(i), r.sample(i) + part, concat_.sample(i) + part);
    }
    return trunk_.forward(concat_, ctx);
  }
  case ModelKind::ShallowCombo:
  case ModelKind::DeepCombo: {
    const auto& o = require(optical, "optical");
    const auto& r = require(radar, "radar");
    if (o.n != r.n)
      fail(ErrorCode::ShapeMismatch, "optical and radar batch sizes differ");
    const auto& fo = branches_[0].forward(o, ctx);
    const auto& fr = branches_[1].forward(r, ctx);
    concat_.reshape_like(fo.n, fo.c + fr.c, fo.h, fo.w);
    for (int i = 0; i < fo.n; ++i) {
      std::copy(fo.sample(i), fo.sample(i) + fo.sample_size(), concat_.sample(i));
      std::copy(fr.sample(i), fr.sample(i) + fr.sample_size(), concat_.sample(i) + fo.sample_size());
    }
    return trunk_.forward(concat_, ctx);
  }
  }
  fail(ErrorCode::Internal, "unreachable model kind");
}

template <typename T>
void Network<T>::backward(const nn::Tensor<T>& dout) {
  if (branches_.empty()) {
    trunk_.backward(dout, nullptr);
    return;
  }
  nn::Tensor<T> dconcat;
  trunk_.backward(dout, &dconcat);
  const std::size_t half = dconcat.sample_size() / 2;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    auto& g = branch_grads_[b];
    g.reshape_like(dconcat.n, dconcat.c / 2, dconcat.h, dconcat.w);
    for (int i = 0; i < dconcat.n; ++i)
      std::copy(dconcat.sample(i) + b * half, dconcat.sample(i) + (b + 1) * half, g.sample(i));
    branches_[b].backward(g, nullptr);
  }
}

template <typename T>
std::vector<nn::Param<T>*> Network<T>::params() {
  std::vector<nn::Param<T>*> out;
  for (auto& b : branches_)
    for (auto* p : b.params())
      out.push_back(p);
  for (auto* p : trunk_.params())
    out.push_back(p);
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params())
    n += p->size();
  return n;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto* p : params())
    std::fill(p->grad.begin(), p->grad.end(), T(0));
}

// ---- archives -----------------------------------------------------------------------------

namespace {
constexpr std::string_view kArchiveMagic = "POPMAP-ARCHIVE 1";
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out)
      fail(ErrorCode::Io, "cannot write " + tmp);
    out << kArchiveMagic << "\n";
    for (const auto& [name, body] : archive.texts)
      out << "text " << name << " " << body.size() << "\n" << body << "\n";
    for (const auto& [name, t] : archive.tensors) {
      out << "f32 " << name << " " << t.dims.size();
      for (int d : t.dims)
        out << " " << d;
      out << " " << t.values.size() * sizeof(float) << "\n";
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
      out << "\n";
    }
    out << "end\n";
    if (!out)
      fail(ErrorCode::Io, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path, ErrorCode error) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(error, "cannot open archive " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kArchiveMagic)
    fail(error, path.string() + ": not a popmap archive");
  Archive archive;
  while (std::getline(in, line)) {
    if (line == "end")
      return archive;
    std::istringstream hdr(line);
    std::string type, name;
    hdr >> type >> name;
    if (type == "text") {
      std::size_t bytes = 0;
      if (!(hdr >> bytes))
        fail(error, path.string() + ": malformed text record");
      std::string body(bytes, '\0');
      in.read(body.data(), static_cast<std::streamsize>(bytes));
      in.get();
      archive.texts[name] = std::move(body);
    } else if (type == "f32") {
      std::size_t ndim = 0, bytes = 0;
      TensorRecord t;
      hdr >> ndim;
      t.dims.resize(ndim);
      std::size_t count = 1;
      for (auto& d : t.dims) {
        hdr >> d;
        count *= static_cast<std::size_t>(std::max(d, 0));
      }
      if (!(hdr >> bytes) || bytes != count * sizeof(float))
        fail(error, path.string() + ": malformed tensor record " + name);
      t.values.resize(count);
      in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(bytes));
      in.get();
      archive.tensors[name] = std::move(t);
    } else {
      fail(error, path.string() + ": unknown record type '" + type + "'");
    }
    if (!in)
      fail(error, path.string() + ": truncated archive");
  }
  fail(error, path.string() + ": missing end marker");
}

std::optional<std::string> standard_layer_name(const std::string& param_name) {
  std::string_view name = param_name;
  for (std::string_view prefix : {"optical/", "radar/"})
    if (name.starts_with(prefix))
      name.remove_prefix(prefix.size());
  if (name.starts_with("conv") || name.starts_with("fc6/") || name.starts_with("fc7/"))
    return std::string(name);
  return std::nullopt;
}

template <typename T>
void init_parameters(Network<T>& model, InitKind init, std::uint64_t seed,
                     const std::filesystem::path& weights_path) {
  Archive source;
  if (init == InitKind::PretrainedHook) {
    if (model.spec().width_multiplier != 1.0)
      fail(ErrorCode::ShapeIncompatible, "PRETRAINED_HOOK requires width_multiplier 1.0");
    source = read_archive(weights_path, ErrorCode::WeightFile);
  }
  for (auto* p : model.params()) {
    if (init == InitKind::PretrainedHook) {
      if (auto std_name = standard_layer_name(p->name)) {
        auto it = source.tensors.find(*std_name);
        if (it != source.tensors.end() && it->second.dims == p->dims) {
          std::copy(it->second.values.begin(), it->second.values.end(), p->value.begin());
          continue;
        }
      }
    }
    if (!p->decay) {
      std::fill(p->value.begin(), p->value.end(), T(0));
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < p->dims.size(); ++d)
      fan_in *= static_cast<std::size_t>(p->dims[d]);
    // The linear output head is not followed by a ReLU.
    const bool is_head = p->name.starts_with("head/");
    const double stddev = std::sqrt((is_head ? 1.0 : 2.0) / static_cast<double>(fan_in));
    Rng rng = make_rng(seed, p->name);
    for (auto& v : p->value)
      v = static_cast<T>(stddev * standard_normal(rng));
  }
}

std::vector<double> bin_edges(int n_classes, double lo, double hi) {
  if (n_classes < 2 || !(lo < hi))
    fail(ErrorCode::Spec, "bin_edges requires n_classes >= 2 and lo < hi");
  std::vector<double> edges(static_cast<std::size_t>(n_classes) + 1);
  edges.front() = -std::numeric_limits<double>::infinity();
  edges.back() = std::numeric_limits<double>::infinity();
  const double width = (hi - lo) / n_classes;
  for (int i = 1; i < n_classes; ++i)
    edges[i] = lo + width * i;
  return edges;
}

int class_of(double value, const std::vector<double>& edges) {
  const int n = static_cast<int>(edges.size()) - 1;
  for (int k = 1; k < n; ++k)
    if (value < edges[k])
      return k - 1;
  return n - 1;
}

template <typename T>
Archive export_parameters(Network<T>& model) {
  Archive archive;
  for (auto* p : model.params()) {
    TensorRecord t;
    t.dims = p->dims;
    t.values.assign(p->value.begin(), p->value.end());
    archive.tensors[p->name] = std::move(t);
  }
  return archive;
}

template <typename T>
void import_parameters(Network<T>& model, const Archive& archive, bool require_all) {
  for (auto* p : model.params()) {
    auto it = archive.tensors.find(p->name);
    if (it == archive.tensors.end()) {
      if (require_all)
        fail(ErrorCode::Checkpoint, "archive lacks tensor " + p->name);
      continue;
    }
    if (it->second.dims != p->dims)
      fail(ErrorCode::Checkpoint, "tensor " + p->name + " has mismatched shape");
    std::copy(it->second.values.begin(), it->second.values.end(), p->value.begin());
  }
}

template class Network<float>;
template class Network<double>;
template void init_parameters(Network<float>&, InitKind, std::uint64_t, const std::filesystem::path&);
template void init_parameters(Network<double>&, InitKind, std::uint64_t, const std::filesystem::path&);
template Archive export_parameters(Network<float>&);
template Archive export_parameters(Network<double>&);
template void import_parameters(Network<float>&, const Archive&, bool);
template void import_parameters(Network<double>&, const Archive&, bool);

} // namespace popmap
