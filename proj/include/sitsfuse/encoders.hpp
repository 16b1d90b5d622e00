#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitsfuse/autodiff.hpp"
#include "sitsfuse/datamodel.hpp"
#include "sitsfuse/nn.hpp"

namespace sitsfuse::enc {

/// Sinusoidal day-of-year encoding, T × width: [sin(d/1000^(2i/width)), cos(...)] pairs.
Tensor positional_encoding(std::span<const int> dates, std::size_t width);

struct PixelSetConfig {
  std::size_t sample_size = 32;
  std::vector<std::size_t> mlp{32, 64};  // per-pixel widths after the input channels
  std::size_t out = 64;                  // F, after (mean, std) pooling

  void validate() const;
  nlohmann::json to_json() const;
  static PixelSetConfig from_json(const nlohmann::json& j);
};

struct LtaeConfig {
  std::size_t heads = 4;
  std::size_t key_width = 8;
  std::vector<std::size_t> mlp{64};  // output MLP widths after the attended E channels

  void validate() const;
  nlohmann::json to_json() const;
  static LtaeConfig from_json(const nlohmann::json& j);
};

struct UtaeConfig {
  std::vector<std::size_t> widths{32, 64, 128};
  LtaeConfig ltae{4, 8, {}};

  std::size_t levels() const { return widths.size(); }
  void validate() const;
  nlohmann::json to_json() const;
  static UtaeConfig from_json(const nlohmann::json& j);
};

/// Per-date PSE over a pixel set stored as a ModalityBatch with H = 1, W = S.
/// Only unmasked (sample, date) rows are encoded; the rest of the output is zero.
class PixelSetEncoder {
 public:
  PixelSetEncoder() = default;
  PixelSetEncoder(nn::ParameterSet& params, const std::string& name, std::size_t in_channels,
                  const PixelSetConfig& config, std::uint64_t seed);

  /// Returns B × T × F.
  ad::Var operator()(const ModalityBatch& x) const;
  std::size_t out() const { return config_.out; }
  const PixelSetConfig& config() const { return config_; }

 private:
  PixelSetConfig config_;
  std::size_t in_channels_ = 0;
  nn::Mlp pixel_mlp_;
  nn::Linear out_;
};

/// Draws S pixel indices with replacement from `pixels`.
std::vector<std::size_t> sample_pixels(std::span<const std::size_t> pixels, std::size_t count, Rng& rng);

/// Extracts the pixel set of one series as a one-sample batch (H = 1, W = S).
ModalityBatch pixel_set_batch(const ModalitySeries& series, std::span<const std::size_t> sampled);

/// PSE of one parcel: samples S pixels of `instance_pixels` (same draw for all dates)
/// and returns T × F.
ad::Var pse_forward(const PixelSetEncoder& encoder, const ModalitySeries& series,
                    std::span<const std::size_t> instance_pixels, Rng& rng);

struct LtaeOutput {
  ad::Var embedding;  // N × out
  ad::Var attention;  // N × G × T
};

class Ltae {
 public:
  Ltae() = default;
  /// `with_output` = false builds the attention-only variant used inside U-TAE.
  Ltae(nn::ParameterSet& params, const std::string& name, std::size_t in_width,
       const LtaeConfig& config, bool with_output, std::uint64_t seed);

  /// seq: N × T × E; dates and mask: N × T.
  LtaeOutput operator()(const ad::Var& seq, std::span<const int> dates,
                        std::span<const std::uint8_t> mask) const;
  ad::Var attention(const ad::Var& seq, std::span<const int> dates,
                    std::span<const std::uint8_t> mask) const;
  std::size_t out() const;
  std::size_t heads() const { return config_.heads; }

 private:
  ad::Var with_position(const ad::Var& seq, std::span<const int> dates) const;

  LtaeConfig config_;
  std::size_t in_width_ = 0;
  nn::Linear keys_;
  ad::Var query_;
  nn::Mlp out_;
  bool with_output_ = false;
};

struct UtaeOutput {
  std::vector<ad::Var> features;   // f^l, l = 1..L, B × w_l × H/2^l × W/2^l
  std::vector<ad::Var> decoded;    // d^l, l = 1..L
  std::vector<ad::Var> attention;  // up-sampled a^l, B × G × T × H_l × W_l
  ad::Var coarse_attention;        // B × G × T × H_L × W_L
  ad::Var full;                    // d^0, B × w_1 × H × W
};

class Utae {
 public:
  Utae() = default;
  Utae(nn::ParameterSet& params, const std::string& name, std::size_t in_channels,
       const UtaeConfig& config, std::uint64_t seed);

  UtaeOutput operator()(const ModalityBatch& x) const;
  std::size_t out() const { return config_.widths.front(); }

 private:
  UtaeConfig config_;
  std::vector<nn::Conv2d> down_;
  Ltae ltae_;
  std::vector<nn::Conv2d> merge_;  // 1×1 per level
  std::vector<nn::UpConv> up_;     // up_[l] maps level l+1 to level l
  std::vector<nn::Conv2d> dec_;    // 3×3 after skip concatenation
  nn::UpConv final_up_;
};

/// Dense B·T frames of the unmasked positions: returns (row indices into B·T, packed tensor).
std::pair<std::vector<std::size_t>, Tensor> pack_frames(const ModalityBatch& x);

}  // namespace sitsfuse::enc
