#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "sitsfuse/error.hpp"

using namespace sitsfuse;
using testutil::gradcheck;
using testutil::probe_loss;
using testutil::random_tensor;

namespace {

ad::Var param(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return ad::parameter(random_tensor(std::move(s), seed, lo, hi));
}

}  // namespace

TEST_CASE("elementwise ops and reductions") {
  auto a = param({3, 4}, 1), b = param({3, 4}, 2), pos = param({3, 4}, 3, 0.5, 2.0);
  CHECK(gradcheck([&] { return probe_loss(ad::add(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::sub(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::mul(a, b)); }, {a, b}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::scale(a, -2.5)); }, {a}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::relu(a)); }, {a}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::log(pos)); }, {pos}) < 1e-6);
  CHECK(gradcheck([&] { return ad::sum(a); }, {a}) < 1e-6);
}

TEST_CASE("linear algebra and shape ops") {
  auto x = param({5, 3}, 4), w = param({3, 2}, 5), bias = param({2}, 6), y = param({2, 3, 4}, 7);
  CHECK(gradcheck([&] { return probe_loss(ad::matmul(x, w)); }, {x, w}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::linear(y, param({4, 2}, 8), bias)); }, {y, bias}) < 1e-6);
  auto w4 = param({4, 2}, 9);
  CHECK(gradcheck([&] { return probe_loss(ad::linear(y, w4, bias)); }, {w4}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::add_bias(x, param({3}, 10))); }, {x}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::reshape(y, {6, 4})); }, {y}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::permute(y, {2, 0, 1})); }, {y}) < 1e-6);
  auto z = param({2, 2, 4}, 11);
  CHECK(gradcheck([&] { return probe_loss(ad::concat({y, z}, 1)); }, {y, z}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::slice(y, 2, 1, 3)); }, {y}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::gather_rows(x, {4, 0, 0, 2})); }, {x}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::scatter_rows(x, {1, 6, 0, 3, 4}, 7)); }, {x}) < 1e-6);
}

TEST_CASE("permute matches index arithmetic") {
  Tensor t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  const auto p = ad::permute(ad::constant(t), {2, 0, 1});
  REQUIRE(p->shape() == Shape{4, 2, 3});
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c) CHECK(p->value[(c * 2 + a) * 3 + b] == t[(a * 3 + b) * 4 + c]);
}

TEST_CASE("pooling, softmax and attention ops") {
  auto x = param({3, 5, 4}, 12);
  CHECK(gradcheck([&] { return probe_loss(ad::set_mean_std(x)); }, {x}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::softmax(x)); }, {x}) < 1e-6);
  auto keys = param({3, 5, 6}, 13), query = param({2, 3}, 14);
  CHECK(gradcheck([&] { return probe_loss(ad::head_scores(keys, query)); }, {keys, query}) < 1e-6);
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0, 1};
  auto scores = param({3, 2, 5}, 15);
  CHECK(gradcheck([&] { return probe_loss(ad::masked_softmax(scores, mask)); }, {scores}) < 1e-6);
  auto weights = param({3, 2, 5}, 16, 0.0, 1.0), values = param({3, 5, 4}, 17);
  CHECK(gradcheck([&] { return probe_loss(ad::attend(weights, values)); }, {weights, values}) < 1e-6);
  auto pw = param({2, 2, 3, 4, 5}, 18, 0.0, 1.0), frames = param({2, 3, 4, 4, 5}, 19);
  CHECK(gradcheck([&] { return probe_loss(ad::temporal_weighted_mean(pw, frames)); }, {pw, frames}) < 1e-6);
}

TEST_CASE("masked softmax zeroes masked steps and rejects empty rows") {
  auto scores = ad::constant(random_tensor({2, 3, 4}, 20, -3, 3));
  const std::vector<std::uint8_t> mask{1, 0, 1, 0, 0, 0, 0, 1};
  const auto w = ad::masked_softmax(scores, mask);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t g = 0; g < 3; ++g) {
      double s = 0.0;
      for (std::size_t t = 0; t < 4; ++t) {
        const double v = w->value[(n * 3 + g) * 4 + t];
        if (!mask[n * 4 + t]) CHECK(v == 0.0);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  const std::vector<std::uint8_t> empty{1, 1, 1, 1, 0, 0, 0, 0};
  CHECK_THROWS_AS(ad::masked_softmax(scores, empty), ValidationError);
}

TEST_CASE("spatial ops") {
  auto x = param({2, 3, 5, 4}, 21);
  CHECK(gradcheck([&] { return probe_loss(ad::upsample_bilinear(x, 10, 8)); }, {x}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::upsample_bilinear(x, 7, 9)); }, {x}) < 1e-6);
  auto w = param({2, 3, 3, 3}, 22), b = param({2}, 23);
  CHECK(gradcheck([&] { return probe_loss(ad::conv2d(x, w, b, 2, 1)); }, {x, w, b}) < 1e-6);
  CHECK(gradcheck([&] { return probe_loss(ad::conv2d(x, w, b, 1, 1)); }, {x, w, b}) < 1e-6);
  auto tw = param({3, 2, 2, 2}, 24);
  CHECK(gradcheck([&] { return probe_loss(ad::conv_transpose2x2(x, tw, b)); }, {x, tw, b}) < 1e-6);
}

TEST_CASE("bilinear upsampling of a constant map is constant") {
  const auto up = ad::upsample_bilinear(ad::constant(Tensor({1, 1, 3, 3}, 0.25)), 12, 12);
  for (double v : up->value.storage()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("cross entropy skips the ignore index") {
  auto logits = param({4, 3}, 25);
  const std::vector<int> targets{0, -1, 2, 1};
  CHECK(gradcheck([&] { return ad::cross_entropy(logits, targets, -1); }, {logits}) < 1e-6);
  const auto loss = ad::cross_entropy(logits, targets, -1);
  double expect = 0.0;
  for (std::size_t i : {0u, 2u, 3u}) {
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits->value[i * 3 + k]);
    expect -= logits->value[i * 3 + static_cast<std::size_t>(targets[i])] - std::log(z);
  }
  CHECK(loss->value[0] == doctest::Approx(expect / 3.0).epsilon(1e-12));
  const std::vector<int> none{-1, -1, -1, -1};
  CHECK(ad::cross_entropy(logits, none, -1)->value[0] == 0.0);
}

TEST_CASE("a graph can be differentiated from two roots") {
  auto a = param({3}, 26);
  const auto h = ad::mul(a, a);
  const auto l1 = ad::sum(h), l2 = ad::sum(ad::scale(h, 3.0));
  ad::backward(l1);
  const Tensor g1 = a->grad_buffer();
  a->grad_buffer().fill(0.0);
  ad::backward(l2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g1[i] == doctest::Approx(2 * a->value[i]));
    CHECK(a->grad_buffer()[i] == doctest::Approx(6 * a->value[i]));
  }
}

TEST_CASE("no-grad guard records no graph") {
  auto a = param({2}, 27);
  ad::Var y;
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::grad_enabled());
    y = ad::sum(ad::mul(a, a));
  }
  CHECK(ad::grad_enabled());
  CHECK(y->parents.empty());
}
