#pragma once

#include "tumordet/fusion.hpp"
#include "tumordet/parameters.hpp"

#include <string>

namespace tumordet {

// 1x1 convolution kernels of the dependencies block.
struct DCWeights {
  Var w_f;  // [inner, channels, 1, 1]
  Var w_g;  // [inner, channels, 1, 1]
  Var w_h;  // [inner, channels, 1, 1]
  Var w_z;  // [channels, inner, 1, 1]
};

// Intermediates of one forward pass, for inspection and tests.
struct DCTrace {
  Var f, g, h;    // [inner, P, P]
  Var attention;  // [N, N], row i = softmax over j of f_i . g_j
  Var y;          // [inner, P, P]
};

// Non-local response over all N = P*P positions of x[channels,P,P]:
//   A = softmax_rows(f^T g), y_i = sum_j A[i,j] h_j, z = W_z y + x.
Var dependencies_forward(const Var& x, const DCWeights& w, DCTrace* trace = nullptr);

class DependenciesModule {
 public:
  DependenciesModule(const std::string& name, Index channels, Index inner, ParameterStore& store, Rng& rng);

  DCWeights weights(Tape& tape) const;
  Var forward(Tape& tape, const Var& x, DCTrace* trace = nullptr) const;

  Index channels() const { return channels_; }
  Index inner() const { return inner_; }
  Parameter& w_z() { return *w_z_; }

 private:
  Index channels_, inner_;
  Parameter* w_f_;
  Parameter* w_g_;
  Parameter* w_h_;
  Parameter* w_z_;
};

// Replaces an R-origin descriptor's tensor with the block's output.
FusedDescriptor attach_dc(Tape& tape, const FusedDescriptor& desc_r, const DependenciesModule& dc);

}  // namespace tumordet
