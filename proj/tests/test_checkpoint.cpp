#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "recot/container.hpp"
#include "recot/errors.hpp"
#include "recot/trainer.hpp"
#include "test_support.hpp"

using namespace recot;
using recot::test::random_tensor;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.steps = 12;
  c.batch_size = 2;
  c.learning_rate = 5e-3;
  c.seed = 8;
  c.dts.dim = 8;
  c.dts.heads = 2;
  c.dts.ratio = 2;
  c.dts.tokens_per_frame = 4;
  return c;
}

std::vector<FrameTokenGrid> corpus() {
  Rng rng(4);
  std::vector<FrameTokenGrid> out;
  for (int c = 0; c < 5; ++c) out.emplace_back(random_tensor({4, 4, 8}, rng));
  return out;
}

void check_same_state(const TrainState& a, const TrainState& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) {
    CHECK(pa[k].first == pb[k].first);
    CHECK_MESSAGE(bit_equal(*pa[k].second, *pb[k].second), pa[k].first);
  }
  REQUIRE(a.adam.m.size() == b.adam.m.size());
  for (std::size_t k = 0; k < a.adam.m.size(); ++k) {
    CHECK(bit_equal(a.adam.m[k], b.adam.m[k]));
    CHECK(bit_equal(a.adam.v[k], b.adam.v[k]));
  }
  CHECK(a.adam.step == b.adam.step);
  CHECK(a.step == b.step);
  CHECK(a.rng == b.rng);
  CHECK(a.config.to_key_values() == b.config.to_key_values());
}

FormatError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("decode succeeded");
  return FormatError::Kind::io;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("recot_ckpt_" + std::to_string(Rng(std::random_device{}()).next_u64()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("checkpoint round-trips bit for bit") {
  const auto data = corpus();
  TrainState s = init_train_state(small_config());
  for (int k = 0; k < 3; ++k) recot_step(s, data);
  const std::vector<std::uint8_t> bytes = encode_checkpoint(s);
  const TrainState back = decode_checkpoint(bytes);
  check_same_state(s, back);
  CHECK(encode_checkpoint(back) == bytes);
}

TEST_CASE("checkpoint corruption is reported by kind") {
  const std::vector<std::uint8_t> good = encode_checkpoint(init_train_state(small_config()));

  auto magic = good;
  magic[0] ^= 0xFF;
  CHECK(decode_kind(magic) == FormatError::Kind::bad_magic);

  auto version = good;
  version[4] = 99;
  CHECK(decode_kind(version) == FormatError::Kind::version_mismatch);

  auto truncated = good;
  truncated.resize(good.size() / 2);
  CHECK(decode_kind(truncated) == FormatError::Kind::truncated);
  CHECK(decode_kind(std::vector<std::uint8_t>(good.begin(), good.begin() + 3)) == FormatError::Kind::truncated);

  auto flipped = good;
  flipped[good.size() - 20] ^= 0x01;
  CHECK(decode_kind(flipped) == FormatError::Kind::checksum_mismatch);
}

TEST_CASE("checkpoint rejects containers of another kind") {
  Container other;
  other.config = {{"kind", "selector"}};
  other.tensors.push_back({"w", Tensor({2}, {1.0, 2.0})});
  CHECK(decode_kind(encode_container(other)) == FormatError::Kind::malformed);

  // A train_state whose tensors do not fit the config.
  Container c = decode_container(encode_checkpoint(init_train_state(small_config())));
  c.tensors[0].tensor = Tensor({3});
  CHECK(decode_kind(encode_container(c)) == FormatError::Kind::malformed);
}

TEST_CASE("resume from a checkpoint matches an uninterrupted run") {
  const auto data = corpus();
  TempDir dir;
  TrainState straight = init_train_state(small_config());
  train(straight, data);

  TrainState first = init_train_state(small_config());
  for (int k = 0; k < 5; ++k) recot_step(first, data);
  save_checkpoint(dir.path / "ckpt.rcot", first);
  TrainState resumed = load_checkpoint(dir.path / "ckpt.rcot");
  CHECK(resumed.step == 5);
  train(resumed, data);
  check_same_state(straight, resumed);
}

TEST_CASE("load_model reads the DTS part of a checkpoint") {
  TempDir dir;
  const TrainState s = init_train_state(small_config());
  save_checkpoint(dir.path / "c.rcot", s);
  const DtsModel m = load_model(dir.path / "c.rcot");
  const auto a = m.parameters();
  const auto b = s.model.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(bit_equal(*a[k].second, *b[k].second));
  CHECK(*m.config.decoder_depth == *s.model.config.decoder_depth);

  try {
    load_checkpoint(dir.path / "missing.rcot");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::io);
  }
}
