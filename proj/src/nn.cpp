#include "ldrps/nn.hpp"

#include <cmath>

#include "ldrps/errors.hpp"

namespace ldrps::nn {

ad::Var ParamStore::add(std::string name, Tensor init) {
  for (const auto& [n, _] : params_) {
    if (n == name) throw UsageError("duplicate parameter name " + name);
  }
  ad::Var v = ad::leaf(std::move(init), false);
  params_.emplace_back(std::move(name), v);
  return v;
}

std::vector<ad::Var> ParamStore::vars() const {
  std::vector<ad::Var> out;
  out.reserve(params_.size());
  for (const auto& [_, v] : params_) out.push_back(v);
  return out;
}

ad::Var ParamStore::find(const std::string& name) const {
  for (const auto& [n, v] : params_) {
    if (n == name) return v;
  }
  return {};
}

void ParamStore::set_trainable(bool on) {
  for (auto& [_, v] : params_) {
    v.node().requires_grad = on;
    if (!on) v.node().grad = Tensor();
  }
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) {
    if (!v.node().grad.empty()) v.node().grad.fill(0.0);
  }
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().size();
  return n;
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = fnv1a("params");
  for (const auto& [name, v] : params_) {
    h = fnv1a(name, h);
    h = fnv1a(v.value().data(), v.value().size() * sizeof(double), h);
  }
  return h;
}

void ParamStore::round_to_float() {
  for (auto& [_, v] : params_) {
    for (auto& x : v.node().value.vec()) x = static_cast<double>(static_cast<float>(x));
  }
}

void ParamStore::copy_from(const ParamStore& other) {
  if (other.params_.size() != params_.size()) throw UsageError("copy_from: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].first != other.params_[i].first ||
        !(params_[i].second.shape() == other.params_[i].second.shape())) {
      throw UsageError("copy_from: layout mismatch at " + params_[i].first);
    }
    params_[i].second.node().value = other.params_[i].second.value();
  }
}

namespace {

Tensor random_tensor(Shape s, double stddev, Rng& rng) {
  Tensor t(s);
  if (stddev == 0.0) return t;
  for (auto& v : t.vec()) v = stddev * rng.normal();
  return t;
}

}  // namespace

Conv2d::Conv2d(ParamStore& store, const std::string& name, int cin, int cout, int kernel,
               int stride_, Rng& rng, double gain)
    : stride(stride_), pad(kernel / 2) {
  const double fan_in = static_cast<double>(cin) * kernel * kernel;
  weight = store.add(name + ".weight", random_tensor({cout, cin, kernel, kernel}, gain * std::sqrt(2.0 / fan_in), rng));
  bias = store.add(name + ".bias", Tensor({1, cout, 1, 1}, 0.0));
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, double gain) {
  weight = store.add(name + ".weight", random_tensor({out, in, 1, 1}, gain * std::sqrt(2.0 / in), rng));
  bias = store.add(name + ".bias", Tensor({1, out, 1, 1}, 0.0));
}

Adam::Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  simd::AdamArgs args;
  args.lr = lr_;
  args.beta1 = beta1_;
  args.beta2 = beta2_;
  args.eps = eps_;
  args.bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  args.bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Node& n = params_[i].node();
    if (n.grad.empty()) continue;
    simd::adam(args, n.value.span(), n.grad.span(), m_[i].span(), v_[i].span());
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (!p.node().grad.empty()) p.node().grad.fill(0.0);
  }
}

Ema::Ema(const ParamStore& source, double decay) : decay_(decay) {
  for (const auto& [_, v] : source.entries()) shadow_.push_back(v.value());
}

void Ema::update(const ParamStore& source) {
  const auto& e = source.entries();
  for (std::size_t i = 0; i < shadow_.size(); ++i) {
    simd::scale(decay_, shadow_[i].span());
    simd::axpy(1.0 - decay_, e[i].second.value().span(), shadow_[i].span());
  }
}

void Ema::copy_to(ParamStore& target) const {
  const auto& e = target.entries();
  if (e.size() != shadow_.size()) throw UsageError("Ema::copy_to layout mismatch");
  for (std::size_t i = 0; i < shadow_.size(); ++i) e[i].second.node().value = shadow_[i];
}

}  // namespace ldrps::nn
