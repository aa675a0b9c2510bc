#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldrps/autodiff.hpp"
#include "ldrps/rng.hpp"
#include "ldrps/simd/kernels.hpp"

namespace ldrps::nn {

/// Ordered set of named parameter leaves owned by one model.
class ParamStore {
 public:
  ad::Var add(std::string name, Tensor init);

  const std::vector<std::pair<std::string, ad::Var>>& entries() const { return params_; }
  std::vector<ad::Var> vars() const;
  ad::Var find(const std::string& name) const;  // empty Var when absent

  /// Frozen parameters never accumulate gradient.
  void set_trainable(bool on);
  void zero_grad();
  std::size_t count() const;

  /// FNV-1a over all parameter bytes in order.
  std::uint64_t checksum() const;

  /// Rounds every parameter to the nearest float32 (checkpoint precision).
  void round_to_float();

  /// Copies values from another store with identical names and shapes.
  void copy_from(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, ad::Var>> params_;
};

struct Conv2d {
  ad::Var weight;
  ad::Var bias;
  int stride = 1;
  int pad = 1;

  Conv2d() = default;
  /// He-style init scaled by `gain`; gain 0 zeroes the layer.
  Conv2d(ParamStore& store, const std::string& name, int cin, int cout, int kernel, int stride,
         Rng& rng, double gain = 1.0);
  ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, weight, bias, stride, pad); }
};

struct Linear {
  ad::Var weight;
  ad::Var bias;

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, double gain = 1.0);
  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, weight, bias); }
};

/// Adam over a fixed parameter list, updates through the SIMD kernel.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ad::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long steps() const { return t_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

/// Exponential moving average of a store's parameters.
class Ema {
 public:
  Ema(const ParamStore& source, double decay);
  void update(const ParamStore& source);
  /// Writes averaged values into `target` (same layout as source).
  void copy_to(ParamStore& target) const;

 private:
  double decay_;
  std::vector<Tensor> shadow_;
};

}  // namespace ldrps::nn
