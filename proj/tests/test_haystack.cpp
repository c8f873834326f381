#include <cmath>
#include <set>

#include "doctest.h"
#include "recot/errors.hpp"
#include "recot/haystack.hpp"

using namespace recot;

namespace {

const HaystackWorld& world() {
  static const HaystackWorld w;
  return w;
}

double token_cos(const Tensor& tokens, std::size_t frame, std::size_t token, const Tensor& probe) {
  const std::size_t n = tokens.dim(1), d = tokens.dim(2);
  return cosine_similarity(tokens.values().subspan((frame * n + token) * d, d), probe.values());
}

}  // namespace

TEST_CASE("noiseless needle is an exact match and nothing else is close") {
  HaystackSpec spec;
  spec.frames = 12;
  spec.needle_frame = 7;
  spec.pattern = 2;
  spec.noise = 0.0;
  spec.seed = 3;
  const Haystack h = gen_haystack(spec, world());
  const Tensor tokens = world().encoder.encode_video(h.frames).tokens;
  for (std::size_t t = 0; t < 12; ++t) {
    for (std::size_t i = 0; i < world().encoder.tokens_per_frame(); ++i) {
      const double c = token_cos(tokens, t, i, h.probe);
      if (t == 7 && i == h.needle_token) CHECK(c == doctest::Approx(1.0).epsilon(1e-12));
      else CHECK(c < 0.2);
    }
  }
}

TEST_CASE("needle at T=64, t*=32 verified by encoding") {
  HaystackSpec spec;
  spec.frames = 64;
  spec.needle_frame = 32;
  spec.seed = 11;
  const Haystack h = gen_haystack(spec, world());
  CHECK(h.frames.size() == 64);
  const Tensor tokens = world().encoder.encode_video(h.frames).tokens;
  CHECK(token_cos(tokens, 32, h.needle_token, h.probe) >= 0.9);
  double best_elsewhere = -1.0;
  for (std::size_t t = 0; t < 64; ++t)
    for (std::size_t i = 0; i < world().encoder.tokens_per_frame(); ++i)
      if (t != 32) best_elsewhere = std::max(best_elsewhere, token_cos(tokens, t, i, h.probe));
  CHECK(best_elsewhere < 0.5);
}

TEST_CASE("seeds change the haystack but not the needle geometry") {
  HaystackSpec a;
  a.frames = 6;
  a.needle_frame = 2;
  a.pattern = 1;
  a.seed = 1;
  HaystackSpec b = a;
  b.seed = 2;
  const Haystack ha = gen_haystack(a, world()), hb = gen_haystack(b, world());
  CHECK(ha.frames[0].pixels != hb.frames[0].pixels);
  const std::size_t d = world().encoder.dim();
  const Tensor& pos = world().encoder.positions();
  for (std::size_t j = 0; j < d; ++j) {
    const double ca = ha.probe[j] - pos[ha.needle_token * d + j];
    const double cb = hb.probe[j] - pos[hb.needle_token * d + j];
    CHECK(ca == doctest::Approx(cb).epsilon(1e-12));
    CHECK(ca == doctest::Approx(world().needle_amplitude * world().needle_directions[1][j]).epsilon(1e-12));
  }
  const Haystack again = gen_haystack(a, world());
  CHECK(again.frames[5].pixels == ha.frames[5].pixels);
  CHECK(bit_equal(again.probe, ha.probe));
}

TEST_CASE("needle directions avoid positions and textures") {
  const HaystackWorld& w = world();
  const std::size_t d = w.encoder.dim(), n = w.encoder.tokens_per_frame();
  const auto pos = w.encoder.positions().values();
  REQUIRE(w.needle_directions.size() == kNeedlePatterns);
  for (std::size_t p = 0; p < kNeedlePatterns; ++p) {
    const auto u = w.needle_directions[p].values();
    CHECK(cosine_similarity(u, u) == doctest::Approx(1.0));
    for (std::size_t q = p + 1; q < kNeedlePatterns; ++q)
      CHECK(std::abs(cosine_similarity(u, w.needle_directions[q].values())) < 1e-10);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(cosine_similarity(u, pos.subspan(i * d, d))) < 1e-10);
    for (const auto& patch : w.texture_basis) {
      Frame f(w.encoder.config().height, w.encoder.config().width, w.encoder.config().channels);
      w.encoder.write_patch(f, 0, patch);
      const Tensor tok = w.encoder.encode_frame(f);
      std::vector<double> content(d);
      for (std::size_t j = 0; j < d; ++j) content[j] = tok[j] - pos[j];
      CHECK(std::abs(cosine_similarity(u, content)) < 1e-10);
    }
  }
}

TEST_CASE("needle queries name their pattern") {
  std::set<std::string> all;
  for (std::size_t p = 0; p < kNeedlePatterns; ++p) {
    for (std::size_t v = 0; v < query_variants(); ++v) {
      const std::string q = needle_query(p, v);
      CHECK(q.find(pattern_names()[p]) != std::string::npos);
      all.insert(q);
    }
  }
  CHECK(all.size() == kNeedlePatterns * query_variants());
}

TEST_CASE("HaystackSpec validation") {
  HaystackSpec s;
  s.frames = 4;
  s.needle_frame = 4;
  CHECK_THROWS_AS(gen_haystack(s, world()), ConfigError);
  s.needle_frame = 0;
  s.pattern = kNeedlePatterns;
  CHECK_THROWS_AS(gen_haystack(s, world()), ConfigError);
  s.pattern = 0;
  s.noise = -1.0;
  CHECK_THROWS_AS(gen_haystack(s, world()), ConfigError);
  s.noise = 50.0;
  CHECK_THROWS_AS(gen_haystack(s, world()), NumericError);
}

TEST_CASE("planted redundancy corpus keeps background tokens constant") {
  const auto clips = planted_redundancy_corpus(world().encoder, 5, 6, 6, 3);
  REQUIRE(clips.size() == 5);
  const std::size_t n = world().encoder.tokens_per_frame(), d = world().encoder.dim();
  for (const auto& c : clips) {
    std::size_t bg = 0;
    for (std::uint8_t b : c.background) bg += b;
    CHECK(bg == 6);
    const Tensor& x = c.grid.tokens;
    for (std::size_t i = 0; i < n; ++i) {
      bool constant = true;
      for (std::size_t t = 1; t < 6; ++t)
        for (std::size_t j = 0; j < d; ++j) constant = constant && x.at({t, i, j}) == x.at({0, i, j});
      CHECK(constant == (c.background[i] != 0));
    }
  }
}

TEST_CASE("labeled texture clips are balanced and deterministic") {
  const auto a = labeled_texture_clips(world(), 10, 4, 1.0, 2);
  const auto b = labeled_texture_clips(world(), 10, 4, 1.0, 2);
  int ones = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ones += a[k].label;
    CHECK(bit_equal(a[k].grid.tokens, b[k].grid.tokens));
  }
  CHECK(ones == 5);
}

TEST_CASE("selector examples mark exactly the needle token") {
  const auto ex = needle_examples(world(), 6, 4, 9);
  REQUIRE(ex.size() == 6);
  for (const auto& e : ex) {
    std::size_t rel = 0;
    for (std::uint8_t r : e.relevant) rel += r;
    CHECK(rel == 1);
    CHECK(e.tokens.dim(0) == 4 * world().encoder.tokens_per_frame());
  }
}
