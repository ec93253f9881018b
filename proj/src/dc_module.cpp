#include "tumordet/dc_module.hpp"

#include "tumordet/ops.hpp"

namespace tumordet {

Var dependencies_forward(const Var& x, const DCWeights& w, DCTrace* trace) {
  const Shape& s = x.shape();
  const Shape& wf = w.w_f.shape();
  if (s.size() != 3 || s[1] != s[2]) throw ShapeError("dependencies block expects [C,P,P], got " + to_string(s));
  if (wf.size() != 4 || wf[1] != s[0] || w.w_z.shape() != Shape{s[0], wf[0], 1, 1})
    throw ShapeError("dependencies block weights do not fit input " + to_string(s));
  const Index inner = wf[0], n = s[1] * s[2];

  Var f = conv2d(x, w.w_f, 1, 0);
  Var g = conv2d(x, w.w_g, 1, 0);
  Var h = conv2d(x, w.w_h, 1, 0);
  Var f_flat = reshape(f, {inner, n});
  Var g_flat = reshape(g, {inner, n});
  Var h_flat = reshape(h, {inner, n});
  Var attention = softmax_rows(matmul(f_flat, g_flat, true, false));
  Var y = reshape(matmul(h_flat, attention, false, true), {inner, s[1], s[2]});
  Var z = add(conv2d(y, w.w_z, 1, 0), x);
  if (trace) *trace = {f, g, h, attention, y};
  return z;
}

DependenciesModule::DependenciesModule(const std::string& name, Index channels, Index inner, ParameterStore& store,
                                       Rng& rng)
    : channels_(channels), inner_(inner) {
  w_f_ = &store.add_he(name + ".w_f", {inner, channels, 1, 1}, channels, rng);
  w_g_ = &store.add_he(name + ".w_g", {inner, channels, 1, 1}, channels, rng);
  w_h_ = &store.add_he(name + ".w_h", {inner, channels, 1, 1}, channels, rng);
  w_z_ = &store.add_he(name + ".w_z", {channels, inner, 1, 1}, inner, rng);
}

DCWeights DependenciesModule::weights(Tape& tape) const {
  return {tape.param(*w_f_), tape.param(*w_g_), tape.param(*w_h_), tape.param(*w_z_)};
}

Var DependenciesModule::forward(Tape& tape, const Var& x, DCTrace* trace) const {
  return dependencies_forward(x, weights(tape), trace);
}

FusedDescriptor attach_dc(Tape& tape, const FusedDescriptor& desc_r, const DependenciesModule& dc) {
  if (desc_r.origin != DescriptorOrigin::R)
    throw std::invalid_argument("attach_dc applies to R-origin descriptors only");
  return {dc.forward(tape, desc_r.tensor), DescriptorOrigin::R};
}

}  // namespace tumordet
