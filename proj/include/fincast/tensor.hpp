#pragma once

// Dense row-major tensor of doubles plus the deterministic RNG used
// throughout the library. Training and tests run in 64-bit; weights are
// cast to 32-bit only at serialization time.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fincast {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// A Tensor is immutable by convention once an op has produced it; builders
// and in-place helpers are only used while constructing parameters.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size()) {
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " elements");
    }
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_str(s));
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool is_scalar() const { return numel() == 1; }

  double scalar() const {
    if (!is_scalar()) throw std::invalid_argument("tensor: expected scalar, got " + shape_str(shape));
    return data[0];
  }

  // 2-D accessors; the bulk of the library works on (rows x cols) matrices.
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }
  double& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar_of(double v) { return Tensor({1}, {v}); }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o))
      throw std::invalid_argument("tensor +=: shape " + shape_str(shape) + " vs " + shape_str(o.shape));
    for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
};

// Deterministic RNG. Uniform and normal draws are hand-rolled on top of
// mt19937_64 so streams are bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // [0, n)
    if (n <= 0) throw std::invalid_argument("rng: uniform_int needs n > 0");
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * uniform();
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Tensor normal_tensor(std::vector<int> shape, double mean, double stddev) {
    Tensor t(std::move(shape));
    for (auto& x : t.data) x = normal(mean, stddev);
    return t;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fincast
