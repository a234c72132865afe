// Joint objective optimization, learning-rate schedule, checkpoints,
// evaluation and the ablation suite.
#pragma once

#include "hcscl/metrics.hpp"
#include "hcscl/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace hcscl {

struct TrainConfig {
  ModelConfig model;
  double lambda_image = 1.0;
  double lr = 5e-4;
  double lr_decay = 0.8;
  int decay_every = 6;
  int batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// lr * decay^floor(epoch / decay_every), epoch counted from 0.
double learning_rate(const TrainConfig& config, int epoch);

class Adam {
 public:
  Adam() = default;
  explicit Adam(const ad::ParameterStore& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ad::ParameterStore& store, const ad::Gradients& grads, double lr);

  long steps() const { return t_; }
  const ad::Gradients& first_moment() const { return m_; }
  const ad::Gradients& second_moment() const { return v_; }
  ad::Gradients& first_moment() { return m_; }
  ad::Gradients& second_moment() { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  ad::Gradients m_, v_;
};

/// Raised when the loss or gradients become non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_text_loss = 0;
  double train_image_loss = 0;
  double train_ip = 0;
  double train_token_accuracy = 0;
  std::optional<double> valid_loss;
  std::optional<double> valid_ip;
  std::optional<double> valid_token_accuracy;
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

nlohmann::json epoch_log_json(const EpochLog& e);

/// Resumable training state; this is what a checkpoint stores.
struct TrainState {
  TrainConfig config;
  Model model;
  Adam optimizer;
  int epoch = 0;  // completed epochs
  std::mt19937_64 rng;
};

TrainState init_train_state(const TrainConfig& config);

struct TrainResult {
  TrainState final_state;
  Model best_model;
  int best_epoch = -1;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&, const TrainState&)>;

/// Mini-batch Adam on the mean per-sample loss of each batch. The best model
/// is the one with the lowest validation loss (the final one without a
/// validation set).
TrainResult train(const Corpus& train_set, const Corpus* valid_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});
/// Continues an existing state for config.epochs - state.epoch more epochs.
TrainResult train_from(TrainState state, const Corpus& train_set, const Corpus* valid_set,
                       const EpochCallback& on_epoch = {});

// Checkpoint file: magic "HCSCLCK1", then length-prefixed JSON (config,
// epoch, optimizer step, RNG state), then every parameter, first moment and
// second moment tensor as name, rows, cols and raw little-endian doubles.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

struct Evaluation {
  metrics::Report report;
  std::vector<metrics::PredictionRecord> predictions;
};

Evaluation evaluate_model(const Model& model, const Corpus& test_set);

struct AblationRow {
  std::string name;
  AblationFlags flags;
  bool reference = false;
  std::size_t parameter_count = 0;
  metrics::Report report;
};

/// The five ablation configurations in table order: Word-Object only,
/// Sentence-Scene only, w/o Sentence-Scene Fusion, w/o Word-Object Fusion,
/// full model (the reference).
std::vector<std::pair<std::string, AblationFlags>> ablation_configurations();

std::vector<AblationRow> run_ablation_suite(const Corpus& train_set, const Corpus& test_set, const TrainConfig& base);

}  // namespace hcscl
