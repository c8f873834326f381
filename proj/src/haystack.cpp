#include "recot/haystack.hpp"

#include <cmath>

#include "recot/errors.hpp"
#include "recot/rng.hpp"

namespace recot {

namespace {

// Appends v to the orthonormal set if it has a component outside it.
bool extend_basis(std::vector<std::vector<double>>& basis, std::vector<double> v) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& q : basis) {
      double proj = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) proj += q[i] * v[i];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * q[i];
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm < 1e-8) return false;
  for (double& x : v) x /= norm;
  basis.push_back(std::move(v));
  return true;
}

std::vector<double> project(const FrozenEncoder& enc, const std::vector<double>& patch) {
  const std::size_t d = enc.dim();
  const Tensor& w = enc.weights();
  std::vector<double> out(d, 0.0);
  for (std::size_t row = 0; row < patch.size(); ++row)
    for (std::size_t col = 0; col < d; ++col) out[col] += patch[row] * w[row * d + col];
  return out;
}

}  // namespace

HaystackWorld::HaystackWorld(FrozenEncoderConfig config, std::uint64_t seed) : encoder(config) {
  const std::size_t k = encoder.config().patch_size();
  const std::size_t d = encoder.dim();
  const std::size_t n = encoder.tokens_per_frame();
  if (k < d) throw ConfigError("haystack: patch size must be >= token dim");
  Rng rng(seed);
  for (std::size_t b = 0; b < kTextureBasis; ++b) {
    std::vector<double> patch(k);
    double norm = 0.0;
    for (double& v : patch) {
      v = rng.normal();
      norm += v * v;
    }
    for (double& v : patch) v /= std::sqrt(norm);
    texture_basis.push_back(std::move(patch));
  }

  std::vector<std::vector<double>> occupied;
  const auto pos = encoder.positions().values();
  for (std::size_t i = 0; i < n; ++i) extend_basis(occupied, {pos.begin() + i * d, pos.begin() + (i + 1) * d});
  for (const auto& patch : texture_basis) extend_basis(occupied, project(encoder, patch));
  if (occupied.size() + kNeedlePatterns > d) {
    throw ConfigError("haystack: token dim " + std::to_string(d) + " leaves no room for " +
                      std::to_string(kNeedlePatterns) + " needle directions");
  }
  while (needle_directions.size() < kNeedlePatterns) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    if (extend_basis(occupied, v)) needle_directions.emplace_back(Shape{d}, occupied.back());
  }
}

const std::array<std::string, kNeedlePatterns>& pattern_names() {
  static const std::array<std::string, kNeedlePatterns> names = {"red ring", "blue cross", "green stripes",
                                                                 "yellow dots"};
  return names;
}

namespace {

const std::vector<std::string>& query_templates() {
  static const std::vector<std::string> t = {
      "find the {}", "when does the {} appear", "is there a {} in the video", "locate the frame with the {}",
      "what happens when the {} shows up", "point to the {}"};
  return t;
}

}  // namespace

std::size_t query_variants() { return query_templates().size(); }

std::string needle_query(std::size_t pattern, std::size_t variant) {
  if (pattern >= kNeedlePatterns) throw ConfigError("unknown needle pattern " + std::to_string(pattern));
  std::string text = query_templates()[variant % query_variants()];
  text.replace(text.find("{}"), 2, pattern_names()[pattern]);
  return text;
}

void HaystackSpec::validate() const {
  if (frames == 0) throw ConfigError("haystack: frames must be >= 1");
  if (needle_frame >= frames) {
    throw ConfigError("haystack: needle frame " + std::to_string(needle_frame) + " outside " + std::to_string(frames) +
                      " frames");
  }
  if (pattern >= kNeedlePatterns) throw ConfigError("haystack: unknown pattern " + std::to_string(pattern));
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("haystack: noise must be >= 0");
}

namespace {

// Texture coefficients for every (frame, token, basis), AR(1) over frames.
std::vector<double> texture_coefficients(const HaystackWorld& world, std::size_t frames, std::size_t n, Rng& rng,
                                         double basis0_mean) {
  const double s = world.texture_scale, phi = world.texture_phi;
  const double innovation = s * std::sqrt(1.0 - phi * phi);
  std::vector<double> c(frames * n * kTextureBasis);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t b = 0; b < kTextureBasis; ++b) {
      double x = s * rng.normal();
      for (std::size_t t = 0; t < frames; ++t) {
        if (t > 0) x = phi * x + innovation * rng.normal();
        c[(t * n + i) * kTextureBasis + b] = x + (b == 0 ? basis0_mean : 0.0);
      }
    }
  }
  return c;
}

std::vector<double> texture_patch(const HaystackWorld& world, const double* coeffs) {
  std::vector<double> patch(world.texture_basis.front().size(), 0.0);
  for (std::size_t b = 0; b < kTextureBasis; ++b)
    for (std::size_t q = 0; q < patch.size(); ++q) patch[q] += coeffs[b] * world.texture_basis[b][q];
  return patch;
}

void add_noise(std::vector<double>& patch, double noise, Rng& rng) {
  if (noise == 0.0) return;
  for (double& v : patch) v += noise * rng.normal();
}

}  // namespace

std::vector<Frame> texture_frames(const HaystackWorld& world, std::size_t frames, double noise, std::uint64_t seed,
                                  double basis0_mean) {
  const FrozenEncoderConfig& cfg = world.encoder.config();
  const std::size_t n = world.encoder.tokens_per_frame();
  Rng rng(seed);
  const std::vector<double> coeffs = texture_coefficients(world, frames, n, rng, basis0_mean);
  std::vector<Frame> out;
  for (std::size_t t = 0; t < frames; ++t) {
    Frame f(cfg.height, cfg.width, cfg.channels);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> patch = texture_patch(world, &coeffs[(t * n + i) * kTextureBasis]);
      add_noise(patch, noise, rng);
      world.encoder.write_patch(f, i, patch);
    }
    out.push_back(std::move(f));
  }
  return out;
}

Haystack gen_haystack(const HaystackSpec& spec, const HaystackWorld& world) {
  spec.validate();
  const std::size_t n = world.encoder.tokens_per_frame(), d = world.encoder.dim();
  Haystack h;
  h.needle_frame = spec.needle_frame;
  h.pattern = spec.pattern;
  h.needle_token = Rng(mix_seed(spec.seed, 1)).below(n);
  h.frames = texture_frames(world, spec.frames, spec.noise, mix_seed(spec.seed, 2));

  const Tensor& u = world.needle_directions[spec.pattern];
  std::vector<double> content(d);
  h.probe = Tensor({d});
  const Tensor& pos = world.encoder.positions();
  for (std::size_t j = 0; j < d; ++j) {
    content[j] = world.needle_amplitude * u[j];
    h.probe[j] = content[j] + pos[h.needle_token * d + j];
  }
  const std::vector<double> clean = world.encoder.patch_for_content(content);
  Frame& frame = h.frames[spec.needle_frame];
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    std::vector<double> patch = clean;
    Rng rng(mix_seed(spec.seed, 100 + attempt));
    add_noise(patch, spec.noise, rng);
    world.encoder.write_patch(frame, h.needle_token, patch);
    const Tensor tokens = world.encoder.encode_frame(frame);
    const double cos = cosine_similarity(tokens.values().subspan(h.needle_token * d, d), h.probe.values());
    if (cos >= 0.9) return h;
  }
  throw NumericError("gen_haystack: noise " + std::to_string(spec.noise) +
                     " too large to plant a needle with cosine >= 0.9");
}

std::vector<FrameTokenGrid> haystack_corpus(const HaystackWorld& world, std::size_t clips, std::size_t frames,
                                            std::uint64_t seed, double noise) {
  Rng rng(seed);
  std::vector<FrameTokenGrid> out;
  for (std::size_t c = 0; c < clips; ++c) {
    HaystackSpec spec;
    spec.frames = frames;
    spec.needle_frame = rng.below(frames);
    spec.pattern = rng.below(kNeedlePatterns);
    spec.noise = noise;
    spec.seed = mix_seed(seed, c);
    out.push_back(world.encoder.encode_video(gen_haystack(spec, world).frames));
  }
  return out;
}

std::vector<SelectorExample> needle_examples(const HaystackWorld& world, std::size_t count, std::size_t frames,
                                             std::uint64_t seed, double noise) {
  Rng rng(seed);
  const std::size_t n = world.encoder.tokens_per_frame(), d = world.encoder.dim();
  std::vector<SelectorExample> out;
  for (std::size_t c = 0; c < count; ++c) {
    HaystackSpec spec;
    spec.frames = frames;
    spec.needle_frame = rng.below(frames);
    spec.pattern = rng.below(kNeedlePatterns);
    spec.noise = noise;
    spec.seed = mix_seed(seed, c);
    const Haystack h = gen_haystack(spec, world);
    SelectorExample e;
    e.query = needle_query(h.pattern, rng.below(query_variants()));
    e.tokens = world.encoder.encode_video(h.frames).tokens.reshaped({frames * n, d});
    e.relevant.assign(frames * n, 0);
    e.relevant[h.needle_frame * n + h.needle_token] = 1;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<PlantedClip> planted_redundancy_corpus(const FrozenEncoder& encoder, std::size_t clips,
                                                   std::size_t frames, std::size_t background_tokens,
                                                   std::uint64_t seed) {
  const std::size_t n = encoder.tokens_per_frame();
  if (background_tokens > n) throw ConfigError("planted corpus: more background tokens than tokens per frame");
  const FrozenEncoderConfig& cfg = encoder.config();
  std::vector<PlantedClip> out;
  for (std::size_t c = 0; c < clips; ++c) {
    Rng rng(mix_seed(seed, c));
    std::vector<std::uint8_t> background(n, 0);
    for (std::size_t i : rng.sample_without_replacement(n, background_tokens)) background[i] = 1;
    std::vector<Frame> video;
    for (std::size_t t = 0; t < frames; ++t) {
      Frame f(cfg.height, cfg.width, cfg.channels);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> patch(cfg.patch_size(), 0.0);
        if (!background[i]) {
          for (double& v : patch) v = rng.uniform();
        }
        encoder.write_patch(f, i, patch);
      }
      video.push_back(std::move(f));
    }
    out.push_back({encoder.encode_video(video), std::move(background)});
  }
  return out;
}

std::vector<LabeledClip> labeled_texture_clips(const HaystackWorld& world, std::size_t clips, std::size_t frames,
                                               double shift, std::uint64_t seed) {
  std::vector<LabeledClip> out;
  for (std::size_t c = 0; c < clips; ++c) {
    const int label = static_cast<int>(c % 2);
    const double mean = label ? shift : -shift;
    out.push_back({world.encoder.encode_video(texture_frames(world, frames, 0.05, mix_seed(seed, c), mean)), label});
  }
  return out;
}

}  // namespace recot
