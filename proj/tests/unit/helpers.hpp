#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sitsfuse/autodiff.hpp"
#include "sitsfuse/rng.hpp"
#include "sitsfuse/synthgen.hpp"

namespace testutil {

using namespace sitsfuse;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sitsfuse_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng = make_stream(seed, "test-tensor");
  for (auto& v : t.storage()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

/// Largest norm-wise relative error between the analytic gradient and a
/// central difference, over every input tensor. At most `max_entries`
/// coordinates per tensor are probed.
/// Coordinates whose central difference straddles a ReLU kink (the estimate at
/// eps disagrees with the one at eps/10) are skipped and counted in `kinks`.
inline double gradcheck(const std::function<ad::Var()>& f, const std::vector<ad::Var>& inputs, double eps = 1e-4,
                        std::size_t max_entries = 64, std::size_t* kinks = nullptr) {
  for (const auto& v : inputs) v->grad_buffer().fill(0.0);
  ad::backward(f());
  auto central = [&](const ad::Var& v, std::size_t i, double h) {
    const double keep = v->value[i];
    v->value[i] = keep + h;
    const double up = f()->value[0];
    v->value[i] = keep - h;
    const double down = f()->value[0];
    v->value[i] = keep;
    return (up - down) / (2 * h);
  };
  double worst = 0.0;
  for (const auto& v : inputs) {
    const Tensor analytic = v->grad_buffer();
    const std::size_t n = v->value.size();
    const std::size_t stride = n > max_entries ? n / max_entries : 1;
    double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
      const double numeric = central(v, i, eps);
      if (std::abs(numeric - analytic[i]) > 1e-6 * (std::abs(numeric) + std::abs(analytic[i])) + 1e-9) {
        const double fine = central(v, i, eps / 10);
        if (std::abs(fine - numeric) > 1e-3 * (std::abs(fine) + std::abs(numeric)) + 1e-9) {
          if (kinks) ++*kinks;
          continue;
        }
      }
      diff += (numeric - analytic[i]) * (numeric - analytic[i]);
      norm_a += analytic[i] * analytic[i];
      norm_n += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(norm_a), std::sqrt(norm_n), 1e-6});
    worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

/// Weighted sum of all outputs, so every output entry receives a distinct gradient.
inline ad::Var probe_loss(const ad::Var& out, std::uint64_t seed = 99) {
  return ad::sum(ad::mul(out, ad::constant(random_tensor(out->shape(), seed))));
}

inline synth::SynthConfig tiny_synth(std::size_t patches = 10, std::uint64_t seed = 3) {
  synth::SynthConfig c;
  c.n_patches = patches;
  c.height = c.width = 16;
  c.time_ranges = {{4, 6}, {5, 8}, {5, 8}};
  c.seed = seed;
  return c;
}

}  // namespace testutil

namespace testutil {

/// Small synthetic dataset shared by every test of the process.
inline const sitsfuse::DatasetManifest& shared_dataset() {
  static TempDir dir("shared_ds");
  static const sitsfuse::DatasetManifest manifest = sitsfuse::synth::generate_dataset(tiny_synth(12, 5), dir.path());
  return manifest;
}

}  // namespace testutil
