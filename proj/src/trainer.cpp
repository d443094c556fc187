#include "sgq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sgq/tape.hpp"

namespace sgq {

void TrainParams::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("TrainParams: learning_rate must be > 0");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw std::invalid_argument("TrainParams: weight_decay must be >= 0");
  }
}

namespace {

std::string divergence_message(std::size_t epoch, double loss) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "training diverged at epoch %zu (loss %g)", epoch, loss);
  return buf;
}

}  // namespace

DivergenceError::DivergenceError(std::size_t epoch, double loss)
    : std::runtime_error(divergence_message(epoch, loss)), epoch_(epoch) {}

double accuracy(const Matrix<float>& log_probs, std::span<const std::uint32_t> labels,
                std::span<const std::uint8_t> mask) {
  if (labels.size() != log_probs.rows() || mask.size() != log_probs.rows()) {
    throw std::invalid_argument("accuracy: labels/mask length != rows");
  }
  std::size_t hits = 0, total = 0;
  for (std::size_t v = 0; v < log_probs.rows(); ++v) {
    if (!mask[v]) continue;
    ++total;
    const auto row = log_probs.row(v);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[v]) ++hits;
  }
  if (total == 0) throw std::invalid_argument("accuracy: empty mask");
  return static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

void check_compatible(const GnnModel& model, const Dataset& ds) {
  model.validate();
  if (model.input_dim() != ds.feature_dim()) {
    throw std::invalid_argument("model input dim " + std::to_string(model.input_dim()) + " != dataset feature dim " +
                                std::to_string(ds.feature_dim()));
  }
  if (model.num_classes() != ds.num_classes) {
    throw std::invalid_argument("model classes " + std::to_string(model.num_classes()) + " != dataset classes " +
                                std::to_string(ds.num_classes));
  }
}

class Adam {
 public:
  Adam(const GnnModel& model, const TrainParams& p) : p_(p) {
    for (const auto& l : model.layers) {
      m_.emplace_back(l.w_com.size(), 0.0);
      v_.emplace_back(l.w_com.size(), 0.0);
      m_.emplace_back(l.w_att.size(), 0.0);
      v_.emplace_back(l.w_att.size(), 0.0);
    }
  }

  void step(GnnModel& model, const ad::Tape<float>& tape, const ModelVars<float>& vars) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < model.depth(); ++k) {
      update(model.layers[k].w_com, tape.grad(vars.w_com[k]), 2 * k, c1, c2);
      if (vars.w_att[k]) update(model.layers[k].w_att, tape.grad(*vars.w_att[k]), 2 * k + 1, c1, c2);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  void update(Matrix<float>& w, const Matrix<float>& grad, std::size_t slot, double c1, double c2) {
    auto& m = m_[slot];
    auto& v = v_[slot];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = static_cast<double>(grad.values()[i]) + p_.weight_decay * static_cast<double>(w.values()[i]);
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
      const double step = p_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      w.values()[i] = static_cast<float>(static_cast<double>(w.values()[i]) - step);
    }
  }

  TrainParams p_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

TrainResult run_training(const GnnModel& init, const Dataset& ds, const GraphContext& ctx, const QuantPlan* plan,
                         const TrainParams& params) {
  params.validate();
  check_compatible(init, ds);
  GnnModel model = init;
  TrainResult result;
  result.model = init;
  double best_val = -1.0;
  Adam adam(model, params);
  for (std::size_t epoch = 0;; ++epoch) {
    ad::Tape<float> tape;
    const auto vars = bind_parameters(tape, model, true);
    const auto trace = forward(tape, model, vars, tape.constant(ds.features), ctx, plan);
    const double val = accuracy(tape.value(trace.log_probs), ds.labels, ds.val_mask);
    if (val > best_val) {
      best_val = val;
      result.model = model;
      result.best_epoch = epoch;
    } else if (params.early_stop_patience > 0 && epoch - result.best_epoch >= params.early_stop_patience) {
      break;
    }
    if (epoch == params.epochs) break;
    const ad::Var loss = ad::nll_loss(tape, trace.log_probs, std::span<const std::uint32_t>(ds.labels),
                                      std::span<const std::uint8_t>(ds.train_mask));
    const double loss_value = tape.value(loss)(0, 0);
    if (!std::isfinite(loss_value)) throw DivergenceError(epoch, loss_value);
    tape.backward(loss);
    adam.step(model, tape, vars);
    ++result.epochs_run;
  }
  const auto log_probs = predict(result.model, ds.features, ctx, plan);
  result.train_acc = accuracy(log_probs, ds.labels, ds.train_mask);
  result.val_acc = accuracy(log_probs, ds.labels, ds.val_mask);
  result.test_acc = accuracy(log_probs, ds.labels, ds.test_mask);
  return result;
}

}  // namespace

TrainResult train_full_precision(const GnnModel& init, const Dataset& dataset, const TrainParams& params) {
  const auto ctx = make_context(dataset.graph, init.self_loops);
  return run_training(init, dataset, ctx, nullptr, params);
}

TrainResult train_full_precision(Arch arch, const Dataset& dataset, const TrainParams& params, ModelOptions options) {
  const auto init = init_model(arch, dataset.feature_dim(), dataset.num_classes, params.seed, options);
  return train_full_precision(init, dataset, params);
}

TrainResult finetune_quantized(const GnnModel& trained, const Dataset& dataset, const QuantConfig& cfg,
                               const TrainParams& params) {
  const auto ctx = make_context(dataset.graph, trained.self_loops);
  const auto stats = calibrate_model(trained, dataset.features, ctx);
  return finetune_quantized(trained, dataset, ctx, stats, cfg, params);
}

TrainResult finetune_quantized(const GnnModel& trained, const Dataset& dataset, const GraphContext& ctx,
                               const CalibrationStats& stats, const QuantConfig& cfg, const TrainParams& params) {
  const auto plan = make_plan(cfg, stats, ctx, trained.arch, trained.depth());
  return run_training(trained, dataset, ctx, &plan, params);
}

double evaluate(const GnnModel& model, const Dataset& dataset, const QuantConfig& cfg, Split split) {
  check_compatible(model, dataset);
  const auto ctx = make_context(dataset.graph, model.self_loops);
  const auto stats = calibrate_model(model, dataset.features, ctx);
  const auto plan = make_plan(cfg, stats, ctx, model.arch, model.depth());
  const auto log_probs = predict(model, dataset.features, ctx, &plan);
  return accuracy(log_probs, dataset.labels, dataset.mask(split));
}

}  // namespace sgq
