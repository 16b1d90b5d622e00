#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sitsfuse/autodiff.hpp"
#include "sitsfuse/rng.hpp"

namespace sitsfuse::nn {

struct NamedParameter {
  std::string name;
  ad::Var var;
};

/// Ordered registry of trainable tensors. Names are dotted paths whose first
/// segment is the module group used for gradient-flow reporting ("PSE-S2.mlp.0.weight").
class ParameterSet {
 public:
  ad::Var add(const std::string& name, Tensor init);

  const std::vector<NamedParameter>& items() const { return items_; }
  const ad::Var& at(const std::string& name) const;
  std::size_t scalar_count() const;
  /// Number of scalars in parameters whose group equals `group`.
  std::size_t scalar_count(const std::string& group) const;
  std::vector<std::string> groups() const;
  void zero_grad();

 private:
  std::vector<NamedParameter> items_;
};

std::string group_of(const std::string& parameter_name);

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Per-parameter initialisation stream, independent of construction order.
Rng init_stream(std::uint64_t seed, const std::string& parameter_name);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
         std::uint64_t seed);
  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, weight_, bias_); }
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  ad::Var weight_, bias_;
  std::size_t in_ = 0, out_ = 0;
};

/// Stack of Linear layers with ReLU between them (and after the last one when
/// `relu_last`).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& params, const std::string& name, std::vector<std::size_t> widths,
      bool relu_last, std::uint64_t seed);
  ad::Var operator()(ad::Var x) const;
  std::size_t out() const { return layers_.empty() ? 0 : layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
  bool relu_last_ = false;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride, std::size_t padding, std::uint64_t seed);
  ad::Var operator()(const ad::Var& x) const {
    return ad::conv2d(x, weight_, bias_, stride_, padding_);
  }
  std::size_t out() const { return out_; }

 private:
  ad::Var weight_, bias_;
  std::size_t out_ = 0, stride_ = 1, padding_ = 0;
};

/// 2×2, stride-2 transposed convolution (doubles the resolution).
class UpConv {
 public:
  UpConv() = default;
  UpConv(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
         std::uint64_t seed);
  ad::Var operator()(const ad::Var& x) const { return ad::conv_transpose2x2(x, weight_, bias_); }

 private:
  ad::Var weight_, bias_;
};

}  // namespace sitsfuse::nn
