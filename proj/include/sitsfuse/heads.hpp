#pragma once

#include <cstdint>
#include <string>

#include "sitsfuse/nn.hpp"

namespace sitsfuse::heads {

/// Two-layer MLP decoder: embedding[N × in] -> logits[N × classes].
class ClassificationHead {
 public:
  ClassificationHead() = default;
  ClassificationHead(nn::ParameterSet& params, const std::string& name, std::size_t in,
                     std::size_t hidden, std::size_t classes, std::uint64_t seed);
  ad::Var operator()(const ad::Var& embedding) const { return mlp_(embedding); }

 private:
  nn::Mlp mlp_;
};

/// Two 1×1 convolutions: maps[B × in × H × W] -> logits[B × classes × H × W].
class SegmentationHead {
 public:
  SegmentationHead() = default;
  SegmentationHead(nn::ParameterSet& params, const std::string& name, std::size_t in,
                   std::size_t hidden, std::size_t classes, std::uint64_t seed);
  ad::Var operator()(const ad::Var& maps) const { return second_(ad::relu(first_(maps))); }

 private:
  nn::Conv2d first_, second_;
};

/// [B × K × H × W] -> [B·H·W × K], pixel rows in (b, y, x) order.
ad::Var pixel_rows(const ad::Var& maps);

}  // namespace sitsfuse::heads
