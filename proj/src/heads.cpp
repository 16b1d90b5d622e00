#include "sitsfuse/heads.hpp"

namespace sitsfuse::heads {

ClassificationHead::ClassificationHead(nn::ParameterSet& params, const std::string& name,
                                       std::size_t in, std::size_t hidden, std::size_t classes,
                                       std::uint64_t seed)
    : mlp_(params, name, {in, hidden, classes}, false, seed) {}

SegmentationHead::SegmentationHead(nn::ParameterSet& params, const std::string& name,
                                   std::size_t in, std::size_t hidden, std::size_t classes,
                                   std::uint64_t seed)
    : first_(params, name + ".0", in, hidden, 1, 1, 0, seed),
      second_(params, name + ".1", hidden, classes, 1, 1, 0, seed) {}

ad::Var pixel_rows(const ad::Var& maps) {
  const Shape& s = maps->shape();
  if (s.size() != 4) throw std::invalid_argument("pixel_rows: expects B × K × H × W");
  return ad::reshape(ad::permute(maps, {0, 2, 3, 1}), {s[0] * s[2] * s[3], s[1]});
}

}  // namespace sitsfuse::heads
