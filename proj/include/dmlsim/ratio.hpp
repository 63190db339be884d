#pragma once

#include <cstdint>
#include <numeric>
#include <string>

#include "dmlsim/error.hpp"

namespace dmlsim {

// Exact rational value, used for the simulated clock. Transmission and
// compute times are ratios of integers (bytes/rate, flops/rate); keeping the
// clock rational makes schedule comparisons exact — a sequential round of N
// identical blocks is exactly N times one block, with no accumulation error.
class Ratio {
 public:
  constexpr Ratio() : num_(0), den_(1) {}

  static Ratio of(int64_t num, int64_t den) {
    if (den == 0) fail(ErrorKind::numeric, "Ratio: zero denominator");
    Ratio r;
    if (den < 0) {
      num = -num;
      den = -den;
    }
    int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    r.num_ = num;
    r.den_ = den;
    return r;
  }

  int64_t num() const { return num_; }
  int64_t den() const { return den_; }
  double to_double() const { return double(num_) / double(den_); }
  bool is_zero() const { return num_ == 0; }

  Ratio operator+(const Ratio& o) const {
    __int128 n = (__int128)num_ * o.den_ + (__int128)o.num_ * den_;
    __int128 d = (__int128)den_ * o.den_;
    return reduce(n, d);
  }

  Ratio operator-(const Ratio& o) const {
    __int128 n = (__int128)num_ * o.den_ - (__int128)o.num_ * den_;
    __int128 d = (__int128)den_ * o.den_;
    return reduce(n, d);
  }

  Ratio operator*(int64_t k) const {
    return reduce((__int128)num_ * k, (__int128)den_);
  }

  // Exact quotient of two ratios (used for duration-ratio checks).
  Ratio operator/(const Ratio& o) const {
    if (o.num_ == 0) fail(ErrorKind::numeric, "Ratio: division by zero");
    return reduce((__int128)num_ * o.den_, (__int128)den_ * o.num_);
  }

  Ratio& operator+=(const Ratio& o) { return *this = *this + o; }

  bool operator==(const Ratio& o) const {
    return num_ == o.num_ && den_ == o.den_;  // both normalized
  }
  bool operator<(const Ratio& o) const {
    return (__int128)num_ * o.den_ < (__int128)o.num_ * den_;
  }
  bool operator<=(const Ratio& o) const { return !(o < *this); }
  bool operator>(const Ratio& o) const { return o < *this; }

  std::string str() const {
    return std::to_string(num_) + "/" + std::to_string(den_);
  }

 private:
  static Ratio reduce(__int128 n, __int128 d) {
    if (d < 0) {
      n = -n;
      d = -d;
    }
    __int128 a = n < 0 ? -n : n;
    __int128 b = d;
    while (b != 0) {
      __int128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) {
      n /= a;
      d /= a;
    }
    if (n > INT64_MAX || n < INT64_MIN || d > INT64_MAX)
      fail(ErrorKind::numeric, "Ratio: overflow; use smaller rates or unit scale");
    Ratio r;
    r.num_ = (int64_t)n;
    r.den_ = (int64_t)d;
    return r;
  }

  int64_t num_, den_;  // invariant: den_ > 0, gcd(|num_|, den_) == 1
};

inline Ratio max(const Ratio& a, const Ratio& b) { return a < b ? b : a; }

}  // namespace dmlsim
