#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace scrk {

using ImageId = std::uint32_t;

// Everything persisted as 32-bit floats is kept f32-representable in memory so
// write/read round-trips are bit-exact.
// The volatile store stops GCC 11's SLP vectorizer from folding the
// double->float->double round trip away.
inline double round_f32(double x) {
  volatile float f = static_cast<float>(x);
  return static_cast<double>(f);
}

template <typename Derived>
void round_f32_inplace(Eigen::MatrixBase<Derived>& m) {
  m = m.unaryExpr([](double x) { return round_f32(x); });
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace scrk
