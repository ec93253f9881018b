#pragma once

#include "tumordet/box.hpp"
#include "tumordet/fusion.hpp"
#include "tumordet/parameters.hpp"
#include "tumordet/proposals.hpp"

#include <array>
#include <span>
#include <vector>

namespace tumordet {

struct HeadOutputs {
  Var logits;  // [R,1]
  Var deltas;  // [R,4]
};

// Score head on B-descriptors, box head on R-descriptors; each is
// flatten -> fc -> ReLU -> fc.
class DetectionHeads {
 public:
  DetectionHeads(Index descriptor_size, Index hidden, ParameterStore& store, Rng& rng);

  HeadOutputs forward(Tape& tape, std::span<const FusedDescriptor> b_descs,
                      std::span<const FusedDescriptor> r_descs) const;

  struct Prediction {
    double score;
    Deltas deltas;
  };
  Prediction predict(Tape& tape, const FusedDescriptor& desc_b, const FusedDescriptor& desc_r) const;

  Index descriptor_size() const { return descriptor_size_; }

 private:
  Index descriptor_size_;
  Parameter* score_fc1_w_;
  Parameter* score_fc1_b_;
  Parameter* score_fc2_w_;
  Parameter* score_fc2_b_;
  Parameter* box_fc1_w_;
  Parameter* box_fc1_b_;
  Parameter* box_fc2_w_;
  Parameter* box_fc2_b_;
};

// Second-stage loss: mean BCE over all samples plus smooth-L1 summed over the
// four deltas and averaged over positives. Targets are encoded against each
// sample's roi with `delta_weights`.
struct StageLoss {
  Var classification;
  Var regression;  // invalid when there are no positives
};
StageLoss detection_loss(std::span<const RoiSample> samples, const HeadOutputs& predictions,
                         const Deltas& delta_weights);

// Piecewise-constant rate over three phases [0,b1), [b1,b2), [b2,inf).
class LearningRateSchedule {
 public:
  LearningRateSchedule(std::array<double, 3> rates, std::array<long, 2> boundaries);
  // Rescales phase lengths to `total_iterations`, preserving their ratio.
  static LearningRateSchedule scaled(std::array<double, 3> rates, std::array<int, 3> phases, long total_iterations);

  double at(long iteration) const;
  const std::array<long, 2>& boundaries() const { return boundaries_; }

 private:
  std::array<double, 3> rates_;
  std::array<long, 2> boundaries_;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// SGD with momentum and coupled weight decay:
//   v <- momentum * v + g + decay * w;  w <- w - lr(iteration) * v.
class SgdOptimizer {
 public:
  SgdOptimizer(ParameterStore& store, double momentum, double weight_decay, LearningRateSchedule schedule);

  // Applies one update from the accumulated Parameter::grad, then clears the
  // gradients. Throws NonFiniteGradient naming the parameter on NaN/Inf.
  void step();

  long iteration() const { return iteration_; }
  void set_iteration(long it) { iteration_ = it; }
  double current_lr() const { return schedule_.at(iteration_); }
  // Rescales all gradients so their joint L2 norm is at most max_norm.
  double clip_gradients(double max_norm);

 private:
  ParameterStore& store_;
  double momentum_, weight_decay_;
  LearningRateSchedule schedule_;
  std::vector<Eigen::VectorXd> velocity_;
  long iteration_ = 0;
};

}  // namespace tumordet
