#pragma once

#include <cmath>

namespace canonet {

/// Neumaier-compensated running sum; order-stable totals for grid integrals.
template <typename Scalar>
class CompensatedSum {
 public:
  void add(Scalar x) {
    const Scalar t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      carry_ += (sum_ - t) + x;
    else
      carry_ += (x - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(Scalar x) {
    add(x);
    return *this;
  }
  Scalar value() const { return sum_ + carry_; }

 private:
  Scalar sum_{0};
  Scalar carry_{0};
};

template <typename Vec>
auto compensated_sum(const Vec& v) {
  CompensatedSum<typename Vec::Scalar> acc;
  for (decltype(v.size()) i = 0; i < v.size(); ++i) acc.add(v(i));
  return acc.value();
}

}  // namespace canonet
