#include "sitsfuse/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sitsfuse::nn {

ad::Var ParameterSet::add(const std::string& name, Tensor init) {
  for (const auto& p : items_)
    if (p.name == name) throw std::logic_error("duplicate parameter name: " + name);
  items_.push_back({name, ad::parameter(std::move(init))});
  return items_.back().var;
}

const ad::Var& ParameterSet::at(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return p.var;
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var->value.size();
  return n;
}

std::size_t ParameterSet::scalar_count(const std::string& group) const {
  std::size_t n = 0;
  for (const auto& p : items_)
    if (group_of(p.name) == group) n += p.var->value.size();
  return n;
}

std::vector<std::string> ParameterSet::groups() const {
  std::vector<std::string> out;
  for (const auto& p : items_) {
    std::string g = group_of(p.name);
    if (out.empty() || std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.var->grad_buffer().fill(0.0);
}

std::string group_of(const std::string& parameter_name) {
  return parameter_name.substr(0, parameter_name.find('.'));
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.storage()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return t;
}

Rng init_stream(std::uint64_t seed, const std::string& parameter_name) {
  return make_stream(seed, "init:" + parameter_name);
}

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
               std::uint64_t seed)
    : in_(in), out_(out) {
  Rng wr = init_stream(seed, name + ".weight");
  Rng br = init_stream(seed, name + ".bias");
  weight_ = params.add(name + ".weight", fan_in_uniform({in, out}, in, wr));
  bias_ = params.add(name + ".bias", fan_in_uniform({out}, in, br));
}

Mlp::Mlp(ParameterSet& params, const std::string& name, std::vector<std::size_t> widths,
         bool relu_last, std::uint64_t seed)
    : relu_last_(relu_last) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp needs at least input and output width");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers_.emplace_back(params, name + "." + std::to_string(i), widths[i], widths[i + 1], seed);
}

ad::Var Mlp::operator()(ad::Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](x);
    if (i + 1 < layers_.size() || relu_last_) x = ad::relu(x);
  }
  return x;
}

Conv2d::Conv2d(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel, std::size_t stride, std::size_t padding, std::uint64_t seed)
    : out_(out), stride_(stride), padding_(padding) {
  const std::size_t fan_in = in * kernel * kernel;
  Rng wr = init_stream(seed, name + ".weight");
  Rng br = init_stream(seed, name + ".bias");
  weight_ = params.add(name + ".weight", fan_in_uniform({out, in, kernel, kernel}, fan_in, wr));
  bias_ = params.add(name + ".bias", fan_in_uniform({out}, fan_in, br));
}

UpConv::UpConv(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
               std::uint64_t seed) {
  const std::size_t fan_in = in * 4;
  Rng wr = init_stream(seed, name + ".weight");
  Rng br = init_stream(seed, name + ".bias");
  weight_ = params.add(name + ".weight", fan_in_uniform({in, out, 2, 2}, fan_in, wr));
  bias_ = params.add(name + ".bias", fan_in_uniform({out}, fan_in, br));
}

}  // namespace sitsfuse::nn
