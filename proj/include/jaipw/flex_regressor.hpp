#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "jaipw/data_model.hpp"

namespace jaipw {

// Histogram gradient-boosted regression trees, squared loss.
struct GbtSettings {
  int rounds = 200;
  int max_depth = 3;
  double learning_rate = 0.1;
  double subsample = 0.8;
  int max_bins = 255;
  int min_leaf = 10;
  double lambda = 1.0;  // L2 shrinkage on leaf values
  std::uint64_t seed = 20240607;
};

// Ordinary least squares on the features plus an intercept.
struct LinearSettings {};

using FlexSettings = std::variant<GbtSettings, LinearSettings>;

class RegressorModel {
 public:
  virtual ~RegressorModel() = default;
  virtual VectorXd predict(const MatrixXd& features) const = 0;
  virtual std::string kind() const = 0;

  double training_mse = 0.0;
  double baseline_mse = 0.0;  // constant-mean predictor on the same rows
  VectorXd training_predictions;  // equals predict() on the training features
};

// Reusable trainer: feature binning is done once, so repeated fits on new responses are cheap.
class FlexTrainer {
 public:
  FlexTrainer(const MatrixXd& features, FlexSettings settings);
  ~FlexTrainer();
  FlexTrainer(FlexTrainer&&) noexcept;
  FlexTrainer& operator=(FlexTrainer&&) noexcept;

  std::shared_ptr<const RegressorModel> fit(const VectorXd& response) const;
  Index rows() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::shared_ptr<const RegressorModel> fit_flex_regressor(const MatrixXd& features,
                                                         const VectorXd& response,
                                                         const FlexSettings& hyper);
VectorXd predict_flex(const RegressorModel& model, const MatrixXd& features);

}  // namespace jaipw
