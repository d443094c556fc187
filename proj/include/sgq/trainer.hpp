#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "sgq/graph.hpp"
#include "sgq/model.hpp"
#include "sgq/quant_config.hpp"

namespace sgq {

struct TrainParams {
  std::size_t epochs = 200;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 20;  // 0 disables early stopping

  /// Throws std::invalid_argument when learning_rate <= 0 or weight_decay < 0.
  void validate() const;
};

/// Thrown when the training loss becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, double loss);
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct TrainResult {
  GnnModel model;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;  // optimizer steps actually taken
};

/// Argmax match rate over rows with mask != 0. Throws std::invalid_argument on an empty mask.
double accuracy(const Matrix<float>& log_probs, std::span<const std::uint32_t> labels,
                std::span<const std::uint8_t> mask);

/// Minimizes the train-mask NLL and returns the best-validation state. The
/// state before the first update counts, so epochs = 0 returns `init`.
TrainResult train_full_precision(const GnnModel& init, const Dataset& dataset, const TrainParams& params);

/// Fresh Glorot init from params.seed, then train_full_precision.
TrainResult train_full_precision(Arch arch, const Dataset& dataset, const TrainParams& params, ModelOptions options = {});

/// Trains through the fake-quantized forward of `cfg`. Quantization ranges are
/// calibrated once on the full-precision `trained` model and kept frozen.
/// Reported accuracies are quantized-inference accuracies.
TrainResult finetune_quantized(const GnnModel& trained, const Dataset& dataset, const QuantConfig& cfg,
                               const TrainParams& params);

/// Shares a precomputed context and calibration across many configs.
TrainResult finetune_quantized(const GnnModel& trained, const Dataset& dataset, const GraphContext& ctx,
                               const CalibrationStats& stats, const QuantConfig& cfg, const TrainParams& params);

/// Accuracy of `model` under `cfg` (quantized inference; full precision for
/// 32-bit configs). Calibrates on `model` itself.
double evaluate(const GnnModel& model, const Dataset& dataset, const QuantConfig& cfg, Split split);

}  // namespace sgq
