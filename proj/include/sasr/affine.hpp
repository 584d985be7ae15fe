#pragma once

#include "sasr/tape.hpp"

namespace sasr {

/// Trainable map x -> x·W + b with W [in×out] and b [out].
struct Affine {
  Tensor w;
  Tensor b;
};

inline Tensor apply_affine(Tape& t, const Affine& a, Tensor x) { return linear(t, x, a.w, a.b); }

}  // namespace sasr
