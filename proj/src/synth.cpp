#include "luvit/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "luvit/rng.hpp"

namespace luvit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

constexpr std::array<std::array<float, 3>, kNumTextures> kPalette{{
    {0.80f, 0.25f, 0.20f},
    {0.20f, 0.60f, 0.25f},
    {0.20f, 0.30f, 0.80f},
    {0.85f, 0.75f, 0.20f},
    {0.60f, 0.25f, 0.70f},
    {0.20f, 0.70f, 0.75f},
    {0.90f, 0.55f, 0.20f},
    {0.50f, 0.50f, 0.50f},
    {0.45f, 0.30f, 0.15f},
}};

// Parameters are stored as float-representable doubles so a saved split re-renders identically.
double q(double v) { return static_cast<double>(static_cast<float>(v)); }

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

double value_noise(double x, double y, double freq, double phase) {
  const std::uint64_t salt = static_cast<std::uint64_t>(phase * 1e6);
  auto lattice = [&](std::int64_t i, std::int64_t j) {
    const std::uint64_t h = splitmix64(salt ^ splitmix64(static_cast<std::uint64_t>(i) * 0x9E37ULL + static_cast<std::uint64_t>(j)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  };
  const double gx = x * freq * 2.0, gy = y * freq * 2.0;
  const auto i0 = static_cast<std::int64_t>(std::floor(gx));
  const auto j0 = static_cast<std::int64_t>(std::floor(gy));
  const double fx = gx - static_cast<double>(i0), fy = gy - static_cast<double>(j0);
  const double top = lattice(i0, j0) * (1 - fx) + lattice(i0 + 1, j0) * fx;
  const double bot = lattice(i0, j0 + 1) * (1 - fx) + lattice(i0 + 1, j0 + 1) * fx;
  return top * (1 - fy) + bot * fy;
}

double texture_value(const BackgroundParams& b, double x, double y) {
  const double f = b.frequency, p = b.phase;
  switch (b.texture) {
    case 0: return 0.5 + 0.5 * std::sin(kTwoPi * (f * y + p));
    case 1: return 0.5 + 0.5 * std::sin(kTwoPi * (f * x + p));
    case 2: return 0.5 + 0.5 * std::sin(kTwoPi * (f * (x + y) * 0.7071 + p));
    case 3: return std::sin(kTwoPi * (f * x + p)) * std::sin(kTwoPi * (f * y + p)) >= 0.0 ? 1.0 : 0.0;
    case 4: {
      const double gx = f * x + p, gy = f * y + p;
      const double dx = gx - std::floor(gx) - 0.5, dy = gy - std::floor(gy) - 0.5;
      return dx * dx + dy * dy < 0.0625 ? 1.0 : 0.0;
    }
    case 5: {
      const double dx = x - 0.5, dy = y - 0.5;
      return 0.5 + 0.5 * std::sin(kTwoPi * (f * std::sqrt(dx * dx + dy * dy) + p));
    }
    case 6: {
      const double a = kTwoPi * p;
      return 0.5 + 0.5 * ((x - 0.5) * std::cos(a) + (y - 0.5) * std::sin(a)) * 1.4;
    }
    case 7: return value_noise(x, y, f, p);
    default: return 0.5;
  }
}

SpriteParams draw_sprite(int shape, Index size, Rng& rng) {
  SpriteParams s;
  s.shape = shape;
  const double n = static_cast<double>(size);
  s.radius = q(n * (0.22 + 0.10 * uniform01(rng)));
  s.cx = q(s.radius + (n - 2.0 * s.radius) * uniform01(rng));
  s.cy = q(s.radius + (n - 2.0 * s.radius) * uniform01(rng));
  s.angle = q(0.6 * (uniform01(rng) - 0.5));
  // Sprites are either dark or bright so they stand out from mid-tone textures.
  const double base = uniform01(rng) < 0.5 ? 0.0 : 0.8;
  for (float& c : s.color) c = static_cast<float>(base + 0.2 * uniform01(rng));
  return s;
}

BackgroundParams draw_background(int texture, Rng& rng) {
  BackgroundParams b;
  b.texture = texture;
  b.frequency = q(2.0 + 2.0 * uniform01(rng));
  b.phase = q(uniform01(rng));
  const auto& base = kPalette[static_cast<std::size_t>(texture)];
  for (int c = 0; c < 3; ++c) {
    const double jitter = 0.1 * (uniform01(rng) - 0.5);
    b.color_a[c] = clamp01(base[c] + jitter);
    b.color_b[c] = clamp01(0.7 * base[c] + jitter);
  }
  return b;
}

}  // namespace

void SynthConfig::validate() const {
  if (classes < 2 || classes > kNumShapes) throw ConfigError("data.classes", "must lie in [2, 9]");
  if (n_per_class < 1) throw ConfigError("data.n_per_class", "must be at least 1");
  if (n_eval_per_class < 0) throw ConfigError("data.n_eval_per_class", "must be non-negative");
  if (image_size < 8) throw ConfigError("data.image_size", "must be at least 8");
  if (!(background_bias >= 0.0 && background_bias <= 1.0)) throw ConfigError("data.background_bias", "must lie in [0, 1]");
}

bool sprite_contains(int shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;                                   // disk
    case 1: return au <= 0.8 && av <= 0.8;                                 // square
    case 2: return v >= -0.8 && v <= 0.8 && au <= 0.5 * (v + 0.8) * 0.9;   // triangle
    case 3: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);  // plus
    case 4: return u * u + v * v <= 1.0 && u * u + v * v >= 0.36;          // ring
    case 5: return au + av <= 1.0;                                         // diamond
    case 6: return au <= 1.0 && av <= 0.35;                                // bar
    case 7: return (u >= -0.8 && u <= -0.2 && av <= 0.8) || (v >= 0.2 && v <= 0.8 && au <= 0.8);  // L
    case 8: return std::abs(au - av) <= 0.3 && au <= 0.9 && av <= 0.9;     // X
    default: throw ContractError("sprite_contains: unknown shape " + std::to_string(shape));
  }
}

std::vector<std::uint8_t> render_sprite_mask(const SpriteParams& s, Index height, Index width) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height * width), 0);
  const double ca = std::cos(s.angle), sa = std::sin(s.angle);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - s.cx, dy = static_cast<double>(y) + 0.5 - s.cy;
      const double u = (ca * dx + sa * dy) / s.radius, v = (-sa * dx + ca * dy) / s.radius;
      mask[static_cast<std::size_t>(y * width + x)] = sprite_contains(s.shape, u, v) ? 1 : 0;
    }
  }
  return mask;
}

Tensor<float> render_background(const BackgroundParams& b, Index height, Index width) {
  Buffer<float> px(height * width * 3);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double t = std::min(1.0, std::max(0.0, texture_value(b, (static_cast<double>(x) + 0.5) / static_cast<double>(width),
                                                                 (static_cast<double>(y) + 0.5) / static_cast<double>(height))));
      for (int c = 0; c < 3; ++c) px[(y * width + x) * 3 + c] = clamp01(t * b.color_a[c] + (1.0 - t) * b.color_b[c]);
    }
  }
  return Tensor<float>({height, width, 3}, std::move(px));
}

Tensor<float> composite(const Tensor<float>& background, const std::vector<std::uint8_t>& mask,
                        const std::array<float, 3>& color) {
  const Index hw = background.dim(0) * background.dim(1);
  if (static_cast<Index>(mask.size()) != hw) throw ShapeError("composite: mask does not match image");
  Buffer<float> px = background.value();
  for (Index i = 0; i < hw; ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      for (int c = 0; c < 3; ++c) px[i * 3 + c] = color[c];
    }
  }
  return Tensor<float>(background.shape(), std::move(px));
}

std::vector<SyntheticSample> gen_dataset(Index n_per_class, int classes, Index image_size, std::uint64_t seed,
                                         double background_bias) {
  SynthConfig cfg;
  cfg.n_per_class = n_per_class;
  cfg.classes = classes;
  cfg.image_size = image_size;
  cfg.background_bias = background_bias;
  cfg.validate();

  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(n_per_class * classes));
  for (Index i = 0; i < n_per_class; ++i) {
    for (int c = 0; c < classes; ++c) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}));
      SyntheticSample s;
      s.label = c;
      s.sprite = draw_sprite(c, image_size, rng);
      const int texture = uniform01(rng) < background_bias ? c % kNumTextures
                                                            : static_cast<int>(uniform_index(rng, kNumTextures));
      s.background = draw_background(texture, rng);
      s.background_id = texture;
      s.fg_mask = render_sprite_mask(s.sprite, image_size, image_size);
      s.image = composite(render_background(s.background, image_size, image_size), s.fg_mask, s.sprite.color);
      out.push_back(std::move(s));
    }
  }
  return out;
}

SyntheticSample swap_background(const SyntheticSample& sample, const SyntheticSample& donor, SwapMode mode) {
  if (mode == SwapMode::same_class && donor.label != sample.label) {
    throw ContractError("swap_background: same_class mode needs a donor of class " + std::to_string(sample.label) +
                        ", got " + std::to_string(donor.label));
  }
  if (donor.image.shape() != sample.image.shape()) throw ShapeError("swap_background: image sizes differ");
  const Tensor<float> bg = render_background(donor.background, sample.height(), sample.width());
  Buffer<float> px = bg.value();
  const Buffer<float>& src = sample.image.value();
  for (std::size_t i = 0; i < sample.fg_mask.size(); ++i) {
    if (sample.fg_mask[i]) {
      const Index p = static_cast<Index>(i) * 3;
      px.segment(p, 3) = src.segment(p, 3);
    }
  }
  SyntheticSample out = sample;
  out.image = Tensor<float>(sample.image.shape(), std::move(px));
  out.background = donor.background;
  out.background_id = donor.background_id;
  return out;
}

RobustnessSplits make_robustness_splits(const std::vector<SyntheticSample>& samples, int classes, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i].label;
    if (label < 0 || label >= classes) throw ContractError("make_robustness_splits: label out of range");
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  RobustnessSplits out;
  out.original = samples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(seed, {hash_string("robustness"), static_cast<std::uint64_t>(i)}));
    const auto& same = by_class[static_cast<std::size_t>(samples[i].label)];
    out.mixed_same.push_back(swap_background(samples[i], samples[same[uniform_index(rng, same.size())]], SwapMode::same_class));
    std::size_t cls = 0;
    do {
      cls = static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(classes)));
    } while (by_class[cls].empty());
    const auto& pool = by_class[cls];
    out.mixed_random.push_back(swap_background(samples[i], samples[pool[uniform_index(rng, pool.size())]], SwapMode::random_class));
  }
  return out;
}

std::vector<SyntheticSample> make_train_split(const SynthConfig& cfg, std::uint64_t seed) {
  return gen_dataset(cfg.n_per_class, cfg.classes, cfg.image_size, derive_seed(seed, {hash_string("data.train")}),
                     cfg.background_bias);
}

std::vector<SyntheticSample> make_eval_split(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.n_eval_per_class < 1) throw ConfigError("data.n_eval_per_class", "an eval split needs at least 1 per class");
  return gen_dataset(cfg.n_eval_per_class, cfg.classes, cfg.image_size, derive_seed(seed, {hash_string("data.eval")}),
                     cfg.background_bias);
}

RobustnessSplits make_eval_robustness_splits(const std::vector<SyntheticSample>& eval, const SynthConfig& cfg,
                                             std::uint64_t seed) {
  return make_robustness_splits(eval, cfg.classes, derive_seed(seed, {hash_string("data.swap")}));
}

ImageSet to_image_set(const std::vector<SyntheticSample>& samples) {
  ImageSet set;
  set.images.reserve(samples.size());
  set.labels.reserve(samples.size());
  for (const auto& s : samples) {
    set.images.push_back(s.image);
    set.labels.push_back(s.label);
  }
  return set;
}

void save_split(const std::vector<SyntheticSample>& samples, const std::filesystem::path& dump,
                const std::filesystem::path& manifest) {
  if (samples.empty()) throw ContractError("save_split: empty split");
  const Index n = static_cast<Index>(samples.size());
  const Index h = samples.front().height(), w = samples.front().width();
  std::vector<float> images, labels, masks, bg_ids, sprites, backgrounds;
  images.reserve(static_cast<std::size_t>(n * h * w * 3));
  for (const auto& s : samples) {
    if (s.height() != h || s.width() != w) throw ShapeError("save_split: images differ in size");
    images.insert(images.end(), s.image.value().data(), s.image.value().data() + s.image.numel());
    labels.push_back(static_cast<float>(s.label));
    for (std::uint8_t m : s.fg_mask) masks.push_back(static_cast<float>(m));
    bg_ids.push_back(static_cast<float>(s.background_id));
    const SpriteParams& sp = s.sprite;
    sprites.insert(sprites.end(), {static_cast<float>(sp.shape), static_cast<float>(sp.cx), static_cast<float>(sp.cy),
                                   static_cast<float>(sp.radius), static_cast<float>(sp.angle), sp.color[0], sp.color[1],
                                   sp.color[2]});
    const BackgroundParams& b = s.background;
    backgrounds.insert(backgrounds.end(), {static_cast<float>(b.texture), static_cast<float>(b.frequency),
                                           static_cast<float>(b.phase), b.color_a[0], b.color_a[1], b.color_a[2],
                                           b.color_b[0], b.color_b[1], b.color_b[2]});
  }
  Checkpoint ckpt;
  ckpt.add("images", {n, h, w, 3}, std::move(images));
  ckpt.add("labels", {n}, std::move(labels));
  ckpt.add("fg_masks", {n, h, w}, std::move(masks));
  ckpt.add("background_ids", {n}, std::move(bg_ids));
  ckpt.add("sprites", {n, 8}, std::move(sprites));
  ckpt.add("backgrounds", {n, 9}, std::move(backgrounds));
  save_checkpoint(ckpt, dump);

  std::ofstream csv(manifest);
  if (!csv) throw std::runtime_error("cannot write " + manifest.string());
  csv << "id,label,background_id\n";
  for (Index i = 0; i < n; ++i) csv << i << ',' << samples[i].label << ',' << samples[i].background_id << '\n';
}

std::vector<SyntheticSample> load_split(const std::filesystem::path& dump) {
  const Checkpoint ckpt = load_checkpoint(dump);
  const CheckpointTensor& images = ckpt.require("images");
  if (images.shape.size() != 4 || images.shape[3] != 3) throw LoadError("split images must be [N x H x W x 3]");
  const Index n = images.shape[0], h = images.shape[1], w = images.shape[2];
  const CheckpointTensor& labels = ckpt.require("labels");
  const CheckpointTensor& masks = ckpt.require("fg_masks");
  const CheckpointTensor& bg_ids = ckpt.require("background_ids");
  const CheckpointTensor& sprites = ckpt.require("sprites");
  const CheckpointTensor& backgrounds = ckpt.require("backgrounds");
  if (labels.shape != Shape{n} || bg_ids.shape != Shape{n} || masks.shape != Shape{n, h, w} ||
      sprites.shape != Shape{n, 8} || backgrounds.shape != Shape{n, 9}) {
    throw LoadError("split tensors disagree on the sample count or image size");
  }
  std::vector<SyntheticSample> out(static_cast<std::size_t>(n));
  const Index px = h * w * 3;
  for (Index i = 0; i < n; ++i) {
    SyntheticSample& s = out[static_cast<std::size_t>(i)];
    Buffer<float> img = Eigen::Map<const Buffer<float>>(images.data.data() + i * px, px);
    s.image = Tensor<float>({h, w, 3}, std::move(img));
    s.label = static_cast<int>(labels.data[i]);
    s.background_id = static_cast<int>(bg_ids.data[i]);
    s.fg_mask.resize(static_cast<std::size_t>(h * w));
    for (Index j = 0; j < h * w; ++j) s.fg_mask[j] = masks.data[i * h * w + j] != 0.0f ? 1 : 0;
    const float* sp = sprites.data.data() + i * 8;
    s.sprite = SpriteParams{static_cast<int>(sp[0]), sp[1], sp[2], sp[3], sp[4], {sp[5], sp[6], sp[7]}};
    const float* b = backgrounds.data.data() + i * 9;
    s.background = BackgroundParams{static_cast<int>(b[0]), b[1], b[2], {b[3], b[4], b[5]}, {b[6], b[7], b[8]}};
  }
  return out;
}

}  // namespace luvit
