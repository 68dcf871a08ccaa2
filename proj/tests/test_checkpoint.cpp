#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cmda/checkpoint.hpp"
#include "doctest.h"

using namespace cmda;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("checkpoints round-trip tensors, meta, and flags") {
  const std::string path = temp_path("cmda_test_roundtrip.ckpt");
  CheckpointMeta meta;
  meta.vocab_size = 123;
  meta.flags = kFlagMaskedLm | kFlagSideTarget;
  meta.config_digest = "deadbeef00112233";
  std::vector<std::pair<std::string, Tensor<double>>> tensors;
  tensors.emplace_back("a", Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6.5}));
  tensors.emplace_back("b.c", Tensor<double>({1}, {-0.25}));
  save_checkpoint(path, meta, tensors);

  auto ck = load_checkpoint<double>(path);
  CHECK(ck.meta.vocab_size == 123);
  CHECK(ck.meta.flags == (kFlagMaskedLm | kFlagSideTarget));
  CHECK(ck.meta.config_digest == "deadbeef00112233");
  REQUIRE(ck.tensors.size() == 2);
  const Tensor<double>* a = ck.find("a");
  REQUIRE(a != nullptr);
  CHECK(a->shape() == Shape{2, 3});
  CHECK((*a)[5] == 6.5);
  CHECK((*ck.find("b.c"))[0] == -0.25);
  CHECK(ck.find("missing") == nullptr);
  std::remove(path.c_str());
}

TEST_CASE("float values survive the f64 on-disk widening exactly") {
  const std::string path = temp_path("cmda_test_f32.ckpt");
  Tensor<float> t({3}, {0.1f, -3.25f, 7.0e-3f});
  save_checkpoint<float>(path, CheckpointMeta{}, {{"t", t}});
  auto ck = load_checkpoint<float>(path);
  for (Index i = 0; i < 3; ++i) CHECK((*ck.find("t"))[i] == t[i]);
  // And the same bytes load as doubles without surprises.
  auto ck64 = load_checkpoint<double>(path);
  for (Index i = 0; i < 3; ++i)
    CHECK((*ck64.find("t"))[i] == static_cast<double>(t[i]));
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = temp_path("cmda_test_corrupt.ckpt");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(load_checkpoint<double>(path), DataError);

  save_checkpoint<double>(path, CheckpointMeta{}, {{"t", Tensor<double>({2}, {1, 2})}});
  // Truncate mid-record.
  {
    std::ifstream in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size() - 5));
  }
  CHECK_THROWS_AS(load_checkpoint<double>(path), DataError);

  save_checkpoint<double>(path, CheckpointMeta{}, {{"t", Tensor<double>({2}, {1, 2})}});
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f << "junk";
  }
  CHECK_THROWS_AS(load_checkpoint<double>(path), DataError);

  CHECK_THROWS_AS(load_checkpoint<double>(temp_path("cmda_no_such_file.ckpt")),
                  DataError);
  std::remove(path.c_str());
}

TEST_CASE("saving twice replaces the file atomically") {
  const std::string path = temp_path("cmda_test_replace.ckpt");
  save_checkpoint<double>(path, CheckpointMeta{}, {{"t", Tensor<double>({1}, {1.0})}});
  save_checkpoint<double>(path, CheckpointMeta{}, {{"t", Tensor<double>({1}, {2.0})}});
  auto ck = load_checkpoint<double>(path);
  CHECK((*ck.find("t"))[0] == 2.0);
  CHECK(!std::filesystem::exists(path + ".tmp"));
  std::remove(path.c_str());
}
