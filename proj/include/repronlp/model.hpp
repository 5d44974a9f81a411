#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "repronlp/batchstore.hpp"
#include "repronlp/config.hpp"
#include "repronlp/network.hpp"
#include "repronlp/rng.hpp"

namespace repronlp {

// ---------------------------------------------------------------- dimensions

/// Sliding-window output length:
/// floor((in + 2*padding - dilation*(kernel-1) - 1) / stride) + 1.
/// Throws when an argument is out of range or the result is < 1.
std::int64_t conv1d_out_len(std::int64_t in_len, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                            std::int64_t dilation);
std::int64_t pool_out_len(std::int64_t in_len, std::int64_t window, std::int64_t stride);

/// Where one feature lands in the flattened model input.
struct FeatureSlot {
  std::string feature_id;
  bool token_axis = false;  // mean-pooled over real tokens
  std::size_t width = 0;
  std::size_t offset = 0;
};

/// Token-axis features (pooled) first, then document-level features; each
/// group keeps feature_set order.
std::vector<FeatureSlot> input_layout(const BatchManifest& manifest, const std::vector<std::string>& feature_set);
std::size_t compute_input_dim(const BatchManifest& manifest, const std::vector<std::string>& feature_set);

// ---------------------------------------------------------------- model

struct Model {
  ModelConfig config;
  std::vector<FeatureSlot> layout;
  Network<float> net;

  std::size_t input_dim() const { return net.input_dim(); }
};

/// Glorot-uniform weights drawn per layer from split(init_stream,
/// "layer/<i>"); zero biases.
Model build(const ModelConfig& config, const BatchManifest& manifest, const RngStream& init_stream);
Network<float> init_network(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
                            Activation activation, const RngStream& init_stream);

/// Masked mean pooling and concatenation into a [B, input_dim] matrix.
std::vector<float> pooled_inputs(const Model& model, const Batch& batch);

Tensor forward(const Model& model, const Batch& batch);

struct LossAndGrads {
  float loss = 0;
  NetworkGradients<float> grads;
};
LossAndGrads loss_and_grads(const Model& model, const Batch& batch);

/// "input: 154 = glove 16 + ...", then one "linear: a -> b" line per layer.
std::string describe_model(const Model& model);
/// One line naming the batch and every tensor with its shape.
std::string describe_batch(const Batch& batch);

// ---------------------------------------------------------------- metrics

struct Metrics {
  double accuracy = 0;
  double macro_f1 = 0;
  double loss = 0;
  std::size_t count = 0;
};

/// Argmax predictions (ties go to the lower class index).
std::vector<std::int64_t> predict_classes(const Tensor& logits);
Metrics score_predictions(const std::vector<std::int64_t>& predicted, const std::vector<std::int64_t>& truth,
                          std::size_t classes);

Metrics evaluate(const Network<float>& net, const Model& model, const BatchStore& store, const std::string& split,
                 std::shared_ptr<TensorCache> cache = nullptr);
inline Metrics evaluate(const Model& model, const BatchStore& store, const std::string& split,
                        std::shared_ptr<TensorCache> cache = nullptr) {
  return evaluate(model.net, model, store, split, std::move(cache));
}

// ---------------------------------------------------------------- training

enum class TrainAction { none, early_stopped, epoch_reset };
std::string_view action_name(TrainAction a);
TrainAction parse_action(std::string_view s);

struct TrainEvent {
  std::size_t epoch = 0;
  double train_loss = 0;
  double validation_loss = 0;
  double validation_accuracy = 0;
  std::int64_t wall_ms = 0;
  TrainAction action = TrainAction::none;

  friend bool operator==(const TrainEvent&, const TrainEvent&) = default;
};

void to_json(nlohmann::json& j, const TrainEvent& e);
void from_json(const nlohmann::json& j, TrainEvent& e);
std::string event_line(const TrainEvent& e);  // one NDJSON line, no newline

enum class ControlAction { early_stop, reset_epoch };
std::string_view control_name(ControlAction a);
std::optional<ControlAction> parse_control(std::string_view s);

struct ControlCommand {
  ControlAction action;
  std::size_t issued_at = 0;
};

/// Single-slot mailbox: a later post replaces a pending one. The trainer
/// takes from it only at epoch boundaries.
class ControlChannel {
 public:
  void post(ControlCommand cmd);
  std::optional<ControlCommand> take();
  std::optional<ControlCommand> peek() const;

 private:
  mutable std::mutex mu_;
  std::optional<ControlCommand> pending_;
};

using EventSink = std::function<void(const TrainEvent&)>;

/// Everything needed for bit-exact resume.
struct TrainState {
  Model model;
  Network<float> best;
  std::size_t best_epoch = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
  std::size_t stale_epochs = 0;
  std::size_t epoch = 0;  // completed epochs
  bool stopped = false;
  std::map<std::string, RngSnapshot> rng;
  std::vector<TrainEvent> history;
};

/// Root stream from `config.seed`; model weights from split(root, "init").
TrainState start_training(const ModelConfig& config, const BatchManifest& manifest);

struct TrainOptions {
  bool record_wall_time = false;
  /// Stop (without marking the run finished) once this many epochs are done.
  std::optional<std::size_t> until_epoch;
  std::chrono::milliseconds epoch_delay{0};
  std::shared_ptr<TensorCache> cache;
  /// Called on the training thread before each epoch attempt starts.
  std::function<void(std::size_t epoch)> before_epoch;
  /// Called with each batch before its update (debug output).
  std::function<void(const Batch&)> on_batch;
};

/// SGD over the train split in manifest order, one validation pass per
/// epoch. Polls `control` after each epoch.
void train(TrainState& state, const BatchStore& store, const TrainOptions& options, ControlChannel* control,
           const EventSink& sink);

// ---------------------------------------------------------------- checkpoint

struct CheckpointIdentity {
  std::string config_fingerprint;
  std::string manifest_digest;
};

std::string encode_checkpoint(const TrainState& state, const CheckpointIdentity& id);
void save_checkpoint(const TrainState& state, const CheckpointIdentity& id, const std::filesystem::path& path);

/// Rebuilds training state. Without `allow_mismatch` the identity must
/// match the live run exactly.
TrainState decode_checkpoint(std::string_view bytes, const ModelConfig& config, const BatchManifest& manifest,
                             const CheckpointIdentity& expected, bool allow_mismatch = false);
TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                           const BatchManifest& manifest, const CheckpointIdentity& expected,
                           bool allow_mismatch = false);

}  // namespace repronlp
