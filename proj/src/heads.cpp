#include "tumordet/heads.hpp"

#include "tumordet/ops.hpp"

#include <cmath>

namespace tumordet {

DetectionHeads::DetectionHeads(Index descriptor_size, Index hidden, ParameterStore& store, Rng& rng)
    : descriptor_size_(descriptor_size) {
  score_fc1_w_ = &store.add_he("head.score.fc1.weight", {hidden, descriptor_size}, descriptor_size, rng);
  score_fc1_b_ = &store.add_zeros("head.score.fc1.bias", {hidden});
  score_fc2_w_ = &store.add_normal("head.score.fc2.weight", {1, hidden}, 0.01, rng);
  score_fc2_b_ = &store.add_zeros("head.score.fc2.bias", {1});
  box_fc1_w_ = &store.add_he("head.box.fc1.weight", {hidden, descriptor_size}, descriptor_size, rng);
  box_fc1_b_ = &store.add_zeros("head.box.fc1.bias", {hidden});
  box_fc2_w_ = &store.add_normal("head.box.fc2.weight", {4, hidden}, 0.001, rng);
  box_fc2_b_ = &store.add_zeros("head.box.fc2.bias", {4});
}

HeadOutputs DetectionHeads::forward(Tape& tape, std::span<const FusedDescriptor> b_descs,
                                    std::span<const FusedDescriptor> r_descs) const {
  if (b_descs.empty() || b_descs.size() != r_descs.size())
    throw std::invalid_argument("heads need one B and one R descriptor per proposal");
  std::vector<Var> b_rows, r_rows;
  for (std::size_t i = 0; i < b_descs.size(); ++i) {
    if (b_descs[i].origin != DescriptorOrigin::B || r_descs[i].origin != DescriptorOrigin::R)
      throw std::invalid_argument("score head takes B descriptors and box head takes R descriptors");
    if (b_descs[i].tensor.value().size() != descriptor_size_ || r_descs[i].tensor.value().size() != descriptor_size_)
      throw ShapeError("descriptor size differs from the heads' input size " + std::to_string(descriptor_size_));
    b_rows.push_back(b_descs[i].tensor);
    r_rows.push_back(r_descs[i].tensor);
  }
  Var hb = relu(linear(stack_rows(b_rows), tape.param(*score_fc1_w_), tape.param(*score_fc1_b_)));
  Var logits = linear(hb, tape.param(*score_fc2_w_), tape.param(*score_fc2_b_));
  Var hr = relu(linear(stack_rows(r_rows), tape.param(*box_fc1_w_), tape.param(*box_fc1_b_)));
  Var deltas = linear(hr, tape.param(*box_fc2_w_), tape.param(*box_fc2_b_));
  return {logits, deltas};
}

DetectionHeads::Prediction DetectionHeads::predict(Tape& tape, const FusedDescriptor& desc_b,
                                                   const FusedDescriptor& desc_r) const {
  const HeadOutputs out = forward(tape, std::span<const FusedDescriptor>(&desc_b, 1),
                                  std::span<const FusedDescriptor>(&desc_r, 1));
  Prediction p;
  p.score = 1.0 / (1.0 + std::exp(-out.logits.value()[0]));
  for (Index k = 0; k < 4; ++k) p.deltas[k] = out.deltas.value()[k];
  return p;
}

StageLoss detection_loss(std::span<const RoiSample> samples, const HeadOutputs& predictions,
                         const Deltas& delta_weights) {
  if (samples.empty()) throw std::invalid_argument("detection_loss: empty sample");
  const auto n = static_cast<Index>(samples.size());
  if (predictions.logits.value().size() != n || predictions.deltas.value().size() != 4 * n)
    throw ShapeError("detection_loss: prediction count differs from sample count");
  std::vector<double> labels;
  std::vector<Index> rows;
  std::vector<double> targets;
  for (Index i = 0; i < n; ++i) {
    const RoiSample& s = samples[static_cast<std::size_t>(i)];
    labels.push_back(s.label);
    if (s.label != 1) continue;
    const Deltas t = encode_box(s.target, s.roi, delta_weights);
    for (Index k = 0; k < 4; ++k) {
      rows.push_back(4 * i + k);
      targets.push_back(t[k]);
    }
  }
  StageLoss loss;
  loss.classification = scale(bce_with_logits(predictions.logits, labels), 1.0 / static_cast<double>(n));
  if (!rows.empty()) {
    const double positives = static_cast<double>(rows.size() / 4);
    loss.regression = scale(smooth_l1(gather(predictions.deltas, rows), targets), 1.0 / positives);
  }
  return loss;
}

LearningRateSchedule::LearningRateSchedule(std::array<double, 3> rates, std::array<long, 2> boundaries)
    : rates_(rates), boundaries_(boundaries) {
  if (boundaries_[0] > boundaries_[1]) throw std::invalid_argument("learning-rate boundaries must be ordered");
}

LearningRateSchedule LearningRateSchedule::scaled(std::array<double, 3> rates, std::array<int, 3> phases,
                                                  long total_iterations) {
  const long long sum = static_cast<long long>(phases[0]) + phases[1] + phases[2];
  if (sum <= 0) throw std::invalid_argument("learning-rate phases must have positive total length");
  const long b1 = static_cast<long>(static_cast<long long>(total_iterations) * phases[0] / sum);
  const long b2 = static_cast<long>(static_cast<long long>(total_iterations) * (phases[0] + phases[1]) / sum);
  return LearningRateSchedule(rates, {b1, b2});
}

double LearningRateSchedule::at(long iteration) const {
  if (iteration < boundaries_[0]) return rates_[0];
  if (iteration < boundaries_[1]) return rates_[1];
  return rates_[2];
}

SgdOptimizer::SgdOptimizer(ParameterStore& store, double momentum, double weight_decay, LearningRateSchedule schedule)
    : store_(store), momentum_(momentum), weight_decay_(weight_decay), schedule_(schedule) {
  for (const auto& p : store_) velocity_.push_back(Eigen::VectorXd::Zero(p->value.size()));
}

double SgdOptimizer::clip_gradients(double max_norm) {
  double sq = 0;
  for (const auto& p : store_) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    for (auto& p : store_) p->grad *= max_norm / norm;
  }
  return norm;
}

void SgdOptimizer::step() {
  for (const auto& p : store_) {
    if (!p->grad.allFinite())
      throw NonFiniteGradient("non-finite gradient in parameter '" + p->name + "' at iteration " +
                              std::to_string(iteration_));
  }
  const double lr = schedule_.at(iteration_);
  std::size_t i = 0;
  for (auto& p : store_) {
    Eigen::VectorXd& v = velocity_[i++];
    v = momentum_ * v + p->grad + weight_decay_ * p->value.data();
    p->value.data() -= lr * v;
    p->zero_grad();
  }
  ++iteration_;
}

}  // namespace tumordet
