#include "repronlp/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "repronlp/digest.hpp"
#include "repronlp/error.hpp"

namespace repronlp {

using nlohmann::json;

// ---------------------------------------------------------------- dimensions

std::int64_t conv1d_out_len(std::int64_t in_len, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                            std::int64_t dilation) {
  if (in_len < 1 || kernel < 1 || stride < 1 || dilation < 1 || padding < 0) {
    throw ConfigError("conv1d: in_len, kernel, stride and dilation must be positive and padding non-negative");
  }
  const std::int64_t span = in_len + 2 * padding - dilation * (kernel - 1) - 1;
  if (span < 0) {
    throw ConfigError("conv1d: kernel span " + std::to_string(dilation * (kernel - 1) + 1) +
                      " exceeds padded input " + std::to_string(in_len + 2 * padding));
  }
  return span / stride + 1;
}

std::int64_t pool_out_len(std::int64_t in_len, std::int64_t window, std::int64_t stride) {
  return conv1d_out_len(in_len, window, stride, 0, 1);
}

std::vector<FeatureSlot> input_layout(const BatchManifest& manifest, const std::vector<std::string>& feature_set) {
  if (feature_set.empty()) throw ConfigError("feature set is empty");
  std::vector<FeatureSlot> token, doc;
  for (const auto& id : feature_set) {
    if (!manifest.has_feature(id)) throw ConfigError("feature '" + id + "' is not in the store manifest");
    const auto& f = manifest.feature(id);
    FeatureSlot slot;
    slot.feature_id = id;
    if (f.shape.size() == 2 && f.shape[0] == -1 && f.shape[1] > 0) {
      slot.token_axis = true;
      slot.width = static_cast<std::size_t>(f.shape[1]);
      token.push_back(slot);
    } else if (f.shape.size() == 1 && f.shape[0] > 0) {
      slot.width = static_cast<std::size_t>(f.shape[0]);
      doc.push_back(slot);
    } else {
      std::string sig;
      for (auto e : f.shape) sig += std::to_string(e) + " ";
      throw ConfigError("feature '" + id + "' has unresolved width (shape " + sig + ")");
    }
  }
  std::vector<FeatureSlot> out = std::move(token);
  out.insert(out.end(), doc.begin(), doc.end());
  std::size_t offset = 0;
  for (auto& s : out) {
    s.offset = offset;
    offset += s.width;
  }
  return out;
}

std::size_t compute_input_dim(const BatchManifest& manifest, const std::vector<std::string>& feature_set) {
  std::size_t dim = 0;
  for (const auto& s : input_layout(manifest, feature_set)) dim += s.width;
  return dim;
}

// ---------------------------------------------------------------- model

Network<float> init_network(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
                            Activation activation, const RngStream& init_stream) {
  Network<float> net;
  net.activation = activation;
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer<float> l{dims[i], dims[i + 1], {}, {}};
    RngStream r = init_stream.split("layer/" + std::to_string(i));
    const double a = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    l.weight.resize(l.in * l.out);
    for (auto& w : l.weight) w = static_cast<float>((2.0 * r.next_f64_unit() - 1.0) * a);
    l.bias.assign(l.out, 0.0f);
    net.layers.push_back(std::move(l));
  }
  return net;
}

Model build(const ModelConfig& config, const BatchManifest& manifest, const RngStream& init_stream) {
  config.validate();
  if (manifest.classes != config.class_names) {
    throw ConfigError("model classes do not match the store's classes");
  }
  Model m;
  m.config = config;
  m.layout = input_layout(manifest, config.feature_set);
  std::size_t in = 0;
  for (const auto& s : m.layout) in += s.width;
  m.net = init_network(in, config.hidden_widths, config.class_names.size(), config.activation, init_stream);
  return m;
}

std::vector<float> pooled_inputs(const Model& model, const Batch& batch) {
  const std::size_t b_count = batch.size();
  const std::size_t dim = model.input_dim();
  std::vector<float> x(b_count * dim, 0.0f);
  const std::size_t t_max = batch.mask.rank() == 2 ? batch.mask.extent(1) : 0;
  auto mask = batch.mask.f32_data();

  for (const auto& slot : model.layout) {
    auto it = batch.tensors.find(slot.feature_id);
    if (it == batch.tensors.end()) throw DataError("batch is missing feature '" + slot.feature_id + "'");
    const Tensor& t = it->second;
    auto data = t.f32_data();
    if (slot.token_axis) {
      if (t.rank() != 3 || t.extent(0) != b_count || t.extent(1) != t_max || t.extent(2) != slot.width) {
        throw DataError("feature '" + slot.feature_id + "': shape " + t.shape_string() + " does not fit the model");
      }
      for (std::size_t b = 0; b < b_count; ++b) {
        float count = 0.0f;
        for (std::size_t tok = 0; tok < t_max; ++tok) count += mask[b * t_max + tok];
        if (count == 0.0f) continue;
        float* dst = x.data() + b * dim + slot.offset;
        for (std::size_t c = 0; c < slot.width; ++c) {
          float acc = 0.0f;
          for (std::size_t tok = 0; tok < t_max; ++tok) {
            acc += data[(b * t_max + tok) * slot.width + c] * mask[b * t_max + tok];
          }
          dst[c] = acc / count;
        }
      }
    } else {
      if (t.rank() != 2 || t.extent(0) != b_count || t.extent(1) != slot.width) {
        throw DataError("feature '" + slot.feature_id + "': shape " + t.shape_string() + " does not fit the model");
      }
      for (std::size_t b = 0; b < b_count; ++b) {
        std::copy_n(data.begin() + b * slot.width, slot.width, x.begin() + b * dim + slot.offset);
      }
    }
  }
  return x;
}

Tensor forward(const Model& model, const Batch& batch) {
  const auto x = pooled_inputs(model, batch);
  auto logits = forward(model.net, std::span<const float>(x), batch.size());
  return Tensor::f32({batch.size(), model.net.output_dim()}, std::move(logits));
}

LossAndGrads loss_and_grads(const Model& model, const Batch& batch) {
  const auto x = pooled_inputs(model, batch);
  LossAndGrads out;
  auto labels = batch.labels.i64_data();
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= model.net.output_dim()) {
      throw DataError("batch " + batch.batch_id + ": label " + std::to_string(l) + " out of range");
    }
  }
  out.loss = loss_and_gradients(model.net, std::span<const float>(x), batch.size(), labels, out.grads);
  return out;
}

std::string describe_model(const Model& model) {
  std::ostringstream out;
  out << "input: " << model.input_dim() << " =";
  for (std::size_t i = 0; i < model.layout.size(); ++i) {
    const auto& s = model.layout[i];
    out << (i ? " + " : " ") << s.feature_id << " " << s.width << (s.token_axis ? " (pooled)" : " (join)");
  }
  out << "\n";
  for (std::size_t i = 0; i < model.net.layers.size(); ++i) {
    const auto& l = model.net.layers[i];
    out << "layer " << i << " linear: " << l.in << " -> " << l.out;
    if (i + 1 < model.net.layers.size()) out << " (" << activation_name(model.net.activation) << ")";
    out << "\n";
  }
  return out.str();
}

std::string describe_batch(const Batch& batch) {
  std::ostringstream out;
  out << "batch " << batch.split << "/" << batch.batch_id << " docs=" << batch.size();
  for (const auto& [id, t] : batch.tensors) out << " " << id << t.shape_string();
  out << " mask" << batch.mask.shape_string() << " labels" << batch.labels.shape_string();
  return out.str();
}

// ---------------------------------------------------------------- metrics

std::vector<std::int64_t> predict_classes(const Tensor& logits) {
  const std::size_t b_count = logits.extent(0), k = logits.extent(1);
  auto data = logits.f32_data();
  std::vector<std::int64_t> out(b_count);
  for (std::size_t b = 0; b < b_count; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (data[b * k + c] > data[b * k + best]) best = c;
    }
    out[b] = static_cast<std::int64_t>(best);
  }
  return out;
}

Metrics score_predictions(const std::vector<std::int64_t>& predicted, const std::vector<std::int64_t>& truth,
                          std::size_t classes) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("score: length mismatch");
  if (truth.empty()) throw DataError("cannot score an empty split");
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto p = static_cast<std::size_t>(predicted[i]);
    const auto t = static_cast<std::size_t>(truth[i]);
    if (p == t) {
      ++correct;
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  double f1_sum = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double precision = tp[c] + fp[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]) : 0.0;
    f1_sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  Metrics m;
  m.count = truth.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  m.macro_f1 = f1_sum / static_cast<double>(classes);
  return m;
}

Metrics evaluate(const Network<float>& net, const Model& model, const BatchStore& store, const std::string& split,
                 std::shared_ptr<TensorCache> cache) {
  auto stream = store.stream(split, model.config.feature_set, std::move(cache));
  std::vector<std::int64_t> predicted, truth;
  double loss_sum = 0;
  while (auto batch = stream.next()) {
    const auto x = pooled_inputs(model, *batch);
    const auto logits = forward(net, std::span<const float>(x), batch->size());
    const auto labels = batch->labels.i64_data();
    for (auto r : cross_entropy_rows(std::span<const float>(logits), batch->size(), net.output_dim(), labels)) {
      loss_sum += r;
    }
    const auto p = predict_classes(Tensor::f32({batch->size(), net.output_dim()}, logits));
    predicted.insert(predicted.end(), p.begin(), p.end());
    truth.insert(truth.end(), labels.begin(), labels.end());
  }
  if (truth.empty()) throw DataError("split '" + split + "' is empty");
  Metrics m = score_predictions(predicted, truth, net.output_dim());
  m.loss = loss_sum / static_cast<double>(truth.size());
  return m;
}

// ---------------------------------------------------------------- events & control

std::string_view action_name(TrainAction a) {
  switch (a) {
    case TrainAction::none: return "none";
    case TrainAction::early_stopped: return "early_stopped";
    case TrainAction::epoch_reset: return "epoch_reset";
  }
  return "none";
}

TrainAction parse_action(std::string_view s) {
  if (s == "none") return TrainAction::none;
  if (s == "early_stopped") return TrainAction::early_stopped;
  if (s == "epoch_reset") return TrainAction::epoch_reset;
  throw DataError("unknown train action '" + std::string(s) + "'");
}

void to_json(json& j, const TrainEvent& e) {
  j = json{{"epoch", e.epoch},
           {"train_loss", e.train_loss},
           {"validation_loss", e.validation_loss},
           {"validation_accuracy", e.validation_accuracy},
           {"wall_ms", e.wall_ms},
           {"action", action_name(e.action)}};
}

void from_json(const json& j, TrainEvent& e) {
  e.epoch = j.at("epoch").get<std::size_t>();
  e.train_loss = j.at("train_loss").get<double>();
  e.validation_loss = j.at("validation_loss").get<double>();
  e.validation_accuracy = j.at("validation_accuracy").get<double>();
  e.wall_ms = j.at("wall_ms").get<std::int64_t>();
  e.action = parse_action(j.at("action").get<std::string>());
}

std::string event_line(const TrainEvent& e) { return json(e).dump(); }

std::string_view control_name(ControlAction a) { return a == ControlAction::early_stop ? "early_stop" : "reset_epoch"; }

std::optional<ControlAction> parse_control(std::string_view s) {
  if (s == "early_stop") return ControlAction::early_stop;
  if (s == "reset_epoch") return ControlAction::reset_epoch;
  return std::nullopt;
}

void ControlChannel::post(ControlCommand cmd) {
  std::lock_guard lock(mu_);
  pending_ = cmd;
}

std::optional<ControlCommand> ControlChannel::take() {
  std::lock_guard lock(mu_);
  auto out = pending_;
  pending_.reset();
  return out;
}

std::optional<ControlCommand> ControlChannel::peek() const {
  std::lock_guard lock(mu_);
  return pending_;
}

// ---------------------------------------------------------------- training

TrainState start_training(const ModelConfig& config, const BatchManifest& manifest) {
  const RngStream root = RngStream::seed_root(config.seed);
  const RngStream init = root.split("init");
  TrainState s;
  s.model = build(config, manifest, init);
  s.best = s.model.net;
  s.rng["root"] = root.snapshot();
  s.rng["init"] = init.snapshot();
  s.rng["train"] = root.split("train").snapshot();
  return s;
}

void train(TrainState& state, const BatchStore& store, const TrainOptions& options, ControlChannel* control,
           const EventSink& sink) {
  const auto& cfg = state.model.config;
  if (store.manifest().classes != cfg.class_names) throw StoreError("store classes do not match the model");
  if (!store.manifest().splits.count("validation")) throw StoreError("store has no validation split");
  const float lr = static_cast<float>(cfg.learning_rate);

  while (!state.stopped && state.epoch < cfg.epochs && (!options.until_epoch || state.epoch < *options.until_epoch)) {
    const std::size_t epoch = state.epoch + 1;
    // Everything reset_epoch must restore; history stays append-only.
    TrainState at_start = state;
    at_start.history.clear();

    if (options.before_epoch) options.before_epoch(epoch);
    const auto t0 = std::chrono::steady_clock::now();

    // Per-epoch training stream; its snapshot is checkpointed.
    RngStream train_stream = RngStream::restore(state.rng.at("train"));

    double loss_sum = 0;
    std::size_t docs = 0;
    auto stream = store.stream("train", cfg.feature_set, options.cache);
    while (auto batch = stream.next()) {
      if (options.on_batch) options.on_batch(*batch);
      auto lg = loss_and_grads(state.model, *batch);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(batch->size());
      docs += batch->size();
      sgd_step(state.model.net, lg.grads, lr);
    }
    state.rng["train"] = train_stream.snapshot();
    if (docs == 0) throw StoreError("train split is empty");

    const Metrics val = evaluate(state.model, store, "validation", options.cache);
    if (options.epoch_delay.count() > 0) std::this_thread::sleep_for(options.epoch_delay);

    TrainEvent ev;
    ev.epoch = epoch;
    ev.train_loss = loss_sum / static_cast<double>(docs);
    ev.validation_loss = val.loss;
    ev.validation_accuracy = val.accuracy;
    if (options.record_wall_time) {
      ev.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    }

    if (val.loss < state.best_validation_loss) {
      state.best_validation_loss = val.loss;
      state.best_epoch = epoch;
      state.best = state.model.net;
      state.stale_epochs = 0;
    } else {
      ++state.stale_epochs;
    }

    const auto cmd = control ? control->take() : std::nullopt;
    if (cmd && cmd->action == ControlAction::reset_epoch) {
      ev.action = TrainAction::epoch_reset;
      auto history = std::move(state.history);
      state = std::move(at_start);
      state.history = std::move(history);
      state.history.push_back(ev);
      if (sink) sink(ev);
      continue;
    }
    if (cmd && cmd->action == ControlAction::early_stop) {
      ev.action = TrainAction::early_stopped;
    } else if (cfg.early_stop_patience > 0 && state.stale_epochs >= cfg.early_stop_patience) {
      ev.action = TrainAction::early_stopped;
    }
    state.stopped = ev.action == TrainAction::early_stopped;
    state.epoch = epoch;
    state.history.push_back(ev);
    if (sink) sink(ev);
  }
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kCheckpointMagic[4] = {'Z', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void append_network(std::string& out, const Network<float>& net) {
  for (const auto& l : net.layers) {
    out += encode_tns(Tensor::f32({l.out, l.in}, l.weight));
    out += encode_tns(Tensor::f32({l.out}, l.bias));
  }
}

Network<float> read_network(std::string_view bytes, std::size_t& offset, const Network<float>& shape_of,
                            const std::string& prefix) {
  Network<float> net = shape_of;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    const std::string name = prefix + "layer" + std::to_string(i);
    Tensor w = decode_tns(bytes, offset, name + ".weight");
    Tensor b = decode_tns(bytes, offset, name + ".bias");
    if (w.dtype() != DType::f32 || w.shape() != std::vector<std::size_t>{l.out, l.in} || b.dtype() != DType::f32 ||
        b.shape() != std::vector<std::size_t>{l.out}) {
      throw StoreError("checkpoint: " + name + " has shape " + w.shape_string() + ", model expects [" +
                       std::to_string(l.out) + "," + std::to_string(l.in) + "]");
    }
    auto wd = w.f32_data();
    auto bd = b.f32_data();
    l.weight.assign(wd.begin(), wd.end());
    l.bias.assign(bd.begin(), bd.end());
  }
  return net;
}

}  // namespace

std::string encode_checkpoint(const TrainState& state, const CheckpointIdentity& id) {
  json h;
  h["format_version"] = kCheckpointVersion;
  h["epoch"] = state.epoch;
  h["stopped"] = state.stopped;
  h["config_fingerprint"] = id.config_fingerprint;
  h["manifest_digest"] = id.manifest_digest;
  h["best_epoch"] = state.best_epoch;
  h["best_validation_loss"] =
      std::isfinite(state.best_validation_loss) ? json(state.best_validation_loss) : json(nullptr);
  h["stale_epochs"] = state.stale_epochs;
  json rng = json::object();
  for (const auto& [name, snap] : state.rng) rng[name] = snap;
  h["rng"] = std::move(rng);
  h["history"] = state.history;
  json model;
  model["feature_set"] = state.model.config.feature_set;
  model["activation"] = activation_name(state.model.net.activation);
  model["classes"] = state.model.config.class_names;
  json layers = json::array();
  for (const auto& l : state.model.net.layers) layers.push_back({l.in, l.out});
  model["layers"] = std::move(layers);
  h["model"] = std::move(model);
  h["tensors"] = "weights then best weights; per layer: weight [out,in], bias [out]";

  const std::string header = h.dump();
  std::string out(kCheckpointMagic, 4);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = header.size();
  out.append(reinterpret_cast<const char*>(&version), 4);
  out.append(reinterpret_cast<const char*>(&len), 8);
  out += header;
  append_network(out, state.model.net);
  append_network(out, state.best);
  return out;
}

void save_checkpoint(const TrainState& state, const CheckpointIdentity& id, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, encode_checkpoint(state, id));
}

TrainState decode_checkpoint(std::string_view bytes, const ModelConfig& config, const BatchManifest& manifest,
                             const CheckpointIdentity& expected, bool allow_mismatch) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw StoreError("checkpoint: bad magic");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&len, bytes.data() + 8, 8);
  if (version != kCheckpointVersion) throw StoreError("checkpoint: unsupported version");
  if (16 + len > bytes.size()) throw StoreError("checkpoint: truncated header");

  json h;
  try {
    h = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw StoreError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  TrainState s;
  try {
    if (!allow_mismatch) {
      const auto cfp = h.at("config_fingerprint").get<std::string>();
      if (cfp != expected.config_fingerprint) {
        throw StoreError("checkpoint config fingerprint mismatch: checkpoint " + cfp + ", live run " +
                         expected.config_fingerprint);
      }
      const auto md = h.at("manifest_digest").get<std::string>();
      if (md != expected.manifest_digest) {
        throw StoreError("checkpoint manifest digest mismatch: checkpoint " + md + ", live store " +
                         expected.manifest_digest);
      }
    }
    // Shapes come from the live configuration; tensors must match them.
    s.model.config = config;
    s.model.layout = input_layout(manifest, config.feature_set);
    std::size_t in = 0;
    for (const auto& slot : s.model.layout) in += slot.width;
    Network<float> shape = init_network(in, config.hidden_widths, config.class_names.size(), config.activation,
                                        RngStream::seed_root(0));
    std::size_t offset = 16 + len;
    s.model.net = read_network(bytes, offset, shape, "");
    s.best = read_network(bytes, offset, shape, "best.");
    if (offset != bytes.size()) throw StoreError("checkpoint: trailing bytes");

    s.epoch = h.at("epoch").get<std::size_t>();
    s.stopped = h.at("stopped").get<bool>();
    s.best_epoch = h.at("best_epoch").get<std::size_t>();
    s.best_validation_loss = h.at("best_validation_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                                     : h.at("best_validation_loss").get<double>();
    s.stale_epochs = h.at("stale_epochs").get<std::size_t>();
    for (const auto& [name, snap] : h.at("rng").items()) s.rng[name] = snap.get<RngSnapshot>();
    s.history = h.at("history").get<std::vector<TrainEvent>>();
    for (const auto& [name, snap] : s.rng) RngStream::restore(snap);
  } catch (const json::exception& e) {
    throw StoreError(std::string("checkpoint: bad header field: ") + e.what());
  } catch (const DataError& e) {
    throw StoreError(std::string("checkpoint: ") + e.what());
  }
  return s;
}

TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                           const BatchManifest& manifest, const CheckpointIdentity& expected, bool allow_mismatch) {
  std::string bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const DataError&) {
    throw StoreError("cannot read checkpoint " + path.string());
  }
  return decode_checkpoint(bytes, config, manifest, expected, allow_mismatch);
}

}  // namespace repronlp
