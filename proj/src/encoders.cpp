#include "sitsfuse/encoders.hpp"

#include <cmath>

#include "sitsfuse/error.hpp"

using nlohmann::json;

namespace sitsfuse::enc {

Tensor positional_encoding(std::span<const int> dates, std::size_t width) {
  Tensor pe({dates.size(), width});
  for (std::size_t t = 0; t < dates.size(); ++t)
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t i = j / 2;
      const double freq =
          std::pow(1000.0, 2.0 * static_cast<double>(i) / static_cast<double>(width));
      const double arg = static_cast<double>(dates[t]) / freq;
      pe[t * width + j] = (j % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
  return pe;
}

void PixelSetConfig::validate() const {
  if (sample_size == 0 || out == 0 || mlp.empty()) throw ConfigError("pse: widths must be positive");
  for (auto w : mlp)
    if (w == 0) throw ConfigError("pse: widths must be positive");
}

json PixelSetConfig::to_json() const {
  return {{"sample_size", sample_size}, {"mlp", mlp}, {"out", out}};
}

PixelSetConfig PixelSetConfig::from_json(const json& j) {
  PixelSetConfig c;
  c.sample_size = j.value("sample_size", c.sample_size);
  c.mlp = j.value("mlp", c.mlp);
  c.out = j.value("out", c.out);
  c.validate();
  return c;
}

void LtaeConfig::validate() const {
  if (heads == 0 || key_width == 0) throw ConfigError("ltae: heads and key width must be positive");
  for (auto w : mlp)
    if (w == 0) throw ConfigError("ltae: widths must be positive");
}

json LtaeConfig::to_json() const {
  return {{"heads", heads}, {"key_width", key_width}, {"mlp", mlp}};
}

LtaeConfig LtaeConfig::from_json(const json& j) {
  LtaeConfig c;
  c.heads = j.value("heads", c.heads);
  c.key_width = j.value("key_width", c.key_width);
  c.mlp = j.value("mlp", c.mlp);
  c.validate();
  return c;
}

void UtaeConfig::validate() const {
  if (widths.empty()) throw ConfigError("utae: need at least one level");
  ltae.validate();
  for (auto w : widths)
    if (w == 0 || w % ltae.heads != 0)
      throw ConfigError("utae: level widths must be positive multiples of the head count");
}

json UtaeConfig::to_json() const { return {{"widths", widths}, {"ltae", ltae.to_json()}}; }

UtaeConfig UtaeConfig::from_json(const json& j) {
  UtaeConfig c;
  c.widths = j.value("widths", c.widths);
  if (j.contains("ltae")) c.ltae = LtaeConfig::from_json(j.at("ltae"));
  c.validate();
  return c;
}

std::pair<std::vector<std::size_t>, Tensor> pack_frames(const ModalityBatch& x) {
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < x.batch; ++b)
    for (std::size_t t = 0; t < x.time; ++t)
      if (x.mask[b * x.time + t]) rows.push_back(b * x.time + t);
  const std::size_t fs = x.frame_size();
  Tensor packed({rows.size(), x.channels, x.height, x.width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = x.data.data() + rows[r] * fs;
    std::copy(src, src + fs, packed.data() + r * fs);
  }
  return {std::move(rows), std::move(packed)};
}

PixelSetEncoder::PixelSetEncoder(nn::ParameterSet& params, const std::string& name,
                                 std::size_t in_channels, const PixelSetConfig& config,
                                 std::uint64_t seed)
    : config_(config), in_channels_(in_channels) {
  config_.validate();
  std::vector<std::size_t> widths{in_channels};
  widths.insert(widths.end(), config_.mlp.begin(), config_.mlp.end());
  pixel_mlp_ = nn::Mlp(params, name + ".mlp", widths, true, seed);
  out_ = nn::Linear(params, name + ".out", 2 * config_.mlp.back(), config_.out, seed);
}

ad::Var PixelSetEncoder::operator()(const ModalityBatch& x) const {
  if (x.channels != in_channels_)
    throw std::invalid_argument("PSE expects " + std::to_string(in_channels_) + " channels, got " +
                                std::to_string(x.channels));
  if (x.height != 1) throw std::invalid_argument("PSE expects a pixel-set batch (H = 1)");
  const std::size_t S = x.width, C = x.channels, total = x.batch * x.time;
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < total; ++r)
    if (x.mask[r]) rows.push_back(r);
  if (rows.empty()) return ad::constant(Tensor({x.batch, x.time, config_.out}));
  Tensor packed({rows.size(), S, C});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* f = x.data.data() + rows[i] * C * S;
    double* o = packed.data() + i * S * C;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) o[s * C + c] = f[c * S + s];
  }
  ad::Var h = pixel_mlp_(ad::constant(std::move(packed)));
  ad::Var pooled = ad::set_mean_std(h);
  ad::Var enc = out_(pooled);
  return ad::reshape(ad::scatter_rows(enc, std::move(rows), total), {x.batch, x.time, config_.out});
}

std::vector<std::size_t> sample_pixels(std::span<const std::size_t> pixels, std::size_t count,
                                       Rng& rng) {
  if (pixels.empty()) throw ValidationError("cannot sample pixels from an empty instance");
  std::vector<std::size_t> out(count);
  for (auto& p : out) p = pixels[uniform_index(rng, pixels.size())];
  return out;
}

ModalityBatch pixel_set_batch(const ModalitySeries& series, std::span<const std::size_t> sampled) {
  ModalityBatch b;
  b.modality_id = series.modality_id;
  b.batch = 1;
  b.time = series.time;
  b.channels = series.channels;
  b.height = 1;
  b.width = sampled.size();
  b.data.resize(b.time * b.channels * b.width);
  const std::size_t plane = series.height * series.width;
  for (std::size_t t = 0; t < b.time; ++t)
    for (std::size_t c = 0; c < b.channels; ++c)
      for (std::size_t s = 0; s < sampled.size(); ++s)
        b.data[(t * b.channels + c) * b.width + s] =
            series.data[(t * series.channels + c) * plane + sampled[s]];
  b.mask.assign(b.time, 1);
  b.dates = series.dates;
  return b;
}

ad::Var pse_forward(const PixelSetEncoder& encoder, const ModalitySeries& series,
                    std::span<const std::size_t> instance_pixels, Rng& rng) {
  const auto sampled = sample_pixels(instance_pixels, encoder.config().sample_size, rng);
  ad::Var y = encoder(pixel_set_batch(series, sampled));
  return ad::reshape(y, {series.time, encoder.out()});
}

Ltae::Ltae(nn::ParameterSet& params, const std::string& name, std::size_t in_width,
           const LtaeConfig& config, bool with_output, std::uint64_t seed)
    : config_(config), in_width_(in_width), with_output_(with_output) {
  config_.validate();
  if (in_width % config_.heads != 0)
    throw ConfigError("ltae: input width " + std::to_string(in_width) +
                      " is not divisible by the head count " + std::to_string(config_.heads));
  keys_ = nn::Linear(params, name + ".key", in_width, config_.heads * config_.key_width, seed);
  Rng qr = nn::init_stream(seed, name + ".query");
  query_ = params.add(name + ".query",
                      nn::fan_in_uniform({config_.heads, config_.key_width}, config_.key_width, qr));
  if (with_output_ && !config_.mlp.empty()) {
    std::vector<std::size_t> widths{in_width};
    widths.insert(widths.end(), config_.mlp.begin(), config_.mlp.end());
    out_ = nn::Mlp(params, name + ".out", widths, true, seed);
  }
}

std::size_t Ltae::out() const {
  return (with_output_ && !config_.mlp.empty()) ? config_.mlp.back() : in_width_;
}

ad::Var Ltae::with_position(const ad::Var& seq, std::span<const int> dates) const {
  const Shape& s = seq->shape();
  if (s.size() != 3 || s[2] != in_width_ || dates.size() != s[0] * s[1])
    throw std::invalid_argument("ltae: sequence " + shape_str(s) + " with " +
                                std::to_string(dates.size()) + " dates");
  const std::size_t width = in_width_ / config_.heads;
  Tensor pe(s);
  const Tensor table = positional_encoding(dates, width);
  for (std::size_t r = 0; r < dates.size(); ++r)
    for (std::size_t g = 0; g < config_.heads; ++g)
      std::copy(table.data() + r * width, table.data() + (r + 1) * width,
                pe.data() + r * in_width_ + g * width);
  return ad::add(seq, ad::constant(std::move(pe)));
}

ad::Var Ltae::attention(const ad::Var& seq, std::span<const int> dates,
                        std::span<const std::uint8_t> mask) const {
  ad::Var x = with_position(seq, dates);
  return ad::masked_softmax(ad::head_scores(keys_(x), query_), mask);
}

LtaeOutput Ltae::operator()(const ad::Var& seq, std::span<const int> dates,
                            std::span<const std::uint8_t> mask) const {
  ad::Var x = with_position(seq, dates);
  ad::Var a = ad::masked_softmax(ad::head_scores(keys_(x), query_), mask);
  ad::Var o = ad::attend(a, x);
  if (with_output_ && !config_.mlp.empty()) o = out_(o);
  return {o, a};
}

Utae::Utae(nn::ParameterSet& params, const std::string& name, std::size_t in_channels,
           const UtaeConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  const auto& w = config_.widths;
  const std::size_t L = w.size();
  for (std::size_t l = 0; l < L; ++l)
    down_.emplace_back(params, name + ".down" + std::to_string(l), l == 0 ? in_channels : w[l - 1],
                       w[l], 3, 2, 1, seed);
  ltae_ = Ltae(params, name + ".ltae", w.back(), config_.ltae, false, seed);
  for (std::size_t l = 0; l < L; ++l)
    merge_.emplace_back(params, name + ".merge" + std::to_string(l), w[l], w[l], 1, 1, 0, seed);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    up_.emplace_back(params, name + ".up" + std::to_string(l), w[l + 1], w[l], seed);
    dec_.emplace_back(params, name + ".dec" + std::to_string(l), 2 * w[l], w[l], 3, 1, 1, seed);
  }
  final_up_ = nn::UpConv(params, name + ".final", w[0], w[0], seed);
}

UtaeOutput Utae::operator()(const ModalityBatch& x) const {
  const std::size_t L = config_.levels();
  const std::size_t factor = std::size_t{1} << L;
  if (x.height % factor != 0 || x.width % factor != 0)
    throw ValidationError("utae: spatial size " + std::to_string(x.height) + "x" +
                          std::to_string(x.width) + " is not divisible by " + std::to_string(factor));
  const std::size_t B = x.batch, T = x.time, G = config_.ltae.heads;
  auto [rows, packed] = pack_frames(x);

  std::vector<ad::Var> enc;
  ad::Var e = ad::constant(std::move(packed));
  for (std::size_t l = 0; l < L; ++l) {
    e = ad::relu(down_[l](e));
    enc.push_back(e);
  }

  auto unpack = [&](const ad::Var& v) {
    const Shape& s = v->shape();
    return ad::reshape(ad::scatter_rows(v, rows, B * T), {B, T, s[1], s[2], s[3]});
  };

  // Innermost L-TAE, one sequence per (sample, coarse pixel).
  const Shape& inner = enc.back()->shape();
  const std::size_t C = inner[1], h = inner[2], w = inner[3], P = h * w;
  ad::Var seq = ad::reshape(unpack(enc.back()), {B, T, C, P});
  seq = ad::reshape(ad::permute(seq, {0, 3, 1, 2}), {B * P, T, C});
  std::vector<int> dates(B * P * T);
  std::vector<std::uint8_t> mask(B * P * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t t = 0; t < T; ++t) {
        dates[(b * P + p) * T + t] = x.dates[b * T + t];
        mask[(b * P + p) * T + t] = x.mask[b * T + t];
      }
  ad::Var a = ltae_.attention(seq, dates, mask);
  a = ad::permute(ad::reshape(a, {B, h, w, G, T}), {0, 3, 4, 1, 2});

  UtaeOutput out;
  out.coarse_attention = a;
  for (std::size_t l = 0; l < L; ++l) {
    const Shape& s = enc[l]->shape();
    ad::Var al = (l + 1 == L) ? a : ad::upsample_bilinear(a, s[2], s[3]);
    out.attention.push_back(al);
    out.features.push_back(merge_[l](ad::temporal_weighted_mean(al, unpack(enc[l]))));
  }
  out.decoded.assign(L, nullptr);
  out.decoded[L - 1] = out.features[L - 1];
  for (std::size_t l = L - 1; l-- > 0;)
    out.decoded[l] = ad::relu(dec_[l](ad::concat({up_[l](out.decoded[l + 1]), out.features[l]}, 1)));
  out.full = ad::relu(final_up_(out.decoded[0]));
  return out;
}

}  // namespace sitsfuse::enc
