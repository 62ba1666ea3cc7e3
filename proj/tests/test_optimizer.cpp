#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "lsc/checkpoint.hpp"
#include "lsc/optimizer.hpp"
#include "lsc/rng.hpp"

using namespace lsc;

namespace {

ad::Param make_param(const std::string& name, std::vector<float> values) {
  Tensor t({int(values.size())});
  t.data = values;
  return ad::Param(name, t);
}

std::filesystem::path temp_file(const std::string& stem) {
  return std::filesystem::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
}

}  // namespace

TEST_CASE("sgd follows the momentum and weight-decay recurrence by hand") {
  ad::Param p = make_param("w", {1.0f, -2.0f});
  opt::SgdConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  opt::Sgd sgd({&p}, cfg);

  // Two steps with constant gradient g = (0.5, -1.0), tracked in double:
  //   v <- 0.9 v + g + 0.01 x;  x <- x - 0.1 v
  double x0 = 1.0, x1 = -2.0, v0 = 0.0, v1 = 0.0;
  for (int step = 0; step < 2; ++step) {
    p.grad.data[0] = 0.5f;
    p.grad.data[1] = -1.0f;
    v0 = 0.9 * v0 + 0.5 + 0.01 * x0;
    v1 = 0.9 * v1 + (-1.0) + 0.01 * x1;
    x0 -= 0.1 * v0;
    x1 -= 0.1 * v1;
    sgd.step();
    CHECK(p.grad.data[0] == 0.0f);  // step zeroes gradients
    CHECK(p.grad.data[1] == 0.0f);
    CHECK(p.value.data[0] == doctest::Approx(x0).epsilon(1e-6));
    CHECK(p.value.data[1] == doctest::Approx(x1).epsilon(1e-6));
  }
}

TEST_CASE("schedule divides the rate once per reached epoch") {
  ad::Param p = make_param("w", {0.0f});
  opt::SgdConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.schedule = {{10, 10.0}, {20, 10.0}};
  opt::Sgd sgd({&p}, cfg);

  sgd.set_epoch(0);
  CHECK(sgd.learning_rate() == doctest::Approx(0.01));
  sgd.set_epoch(9);
  CHECK(sgd.learning_rate() == doctest::Approx(0.01));
  sgd.set_epoch(10);
  CHECK(sgd.learning_rate() == doctest::Approx(0.001));
  sgd.set_epoch(19);
  CHECK(sgd.learning_rate() == doctest::Approx(0.001));
  sgd.set_epoch(20);
  CHECK(sgd.learning_rate() == doctest::Approx(0.0001));
  sgd.set_epoch(99);
  CHECK(sgd.learning_rate() == doctest::Approx(0.0001));
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  ad::Param p = make_param("w", {3.0f, 4.0f});
  opt::SgdConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.weight_decay = 0.1;
  opt::Sgd sgd({&p}, cfg);
  p.grad.data = {5.0f, 6.0f};
  sgd.step();
  CHECK(p.value.data[0] == 3.0f);
  CHECK(p.value.data[1] == 4.0f);
}

TEST_CASE("a non-finite gradient aborts the step with no parameter change") {
  ad::Param a = make_param("a", {1.0f});
  ad::Param b = make_param("b", {2.0f});
  opt::SgdConfig cfg;
  cfg.learning_rate = 0.1;
  opt::Sgd sgd({&a, &b}, cfg);
  a.grad.data[0] = 1.0f;
  b.grad.data[0] = std::nanf("");
  CHECK_THROWS_AS(sgd.step(), NumericError);
  CHECK(a.value.data[0] == 1.0f);  // earlier param not partially updated
  CHECK(b.value.data[0] == 2.0f);
}

TEST_CASE("checkpoint save, perturb, restore round trip") {
  ad::Param w = make_param("layer.weight", {1.5f, -0.25f, 3.0f});
  ad::Param b = make_param("layer.bias", {0.5f});
  auto path = temp_file("lsc_opt_ckpt");
  ckpt::save(path.string(), {&w, &b}, "{\"kind\":\"test\"}");

  std::vector<float> w0 = w.value.data;
  w.value.fill(9.0f);
  b.value.fill(-9.0f);

  ckpt::Loaded loaded = ckpt::load(path.string());
  CHECK(loaded.meta_json == "{\"kind\":\"test\"}");
  ckpt::restore(loaded, {&w, &b});
  CHECK(w.value.data == w0);
  CHECK(b.value.data[0] == 0.5f);
  std::filesystem::remove(path);
}

TEST_CASE("restore rejects missing names and mismatched shapes") {
  ad::Param w = make_param("w", {1.0f, 2.0f});
  auto path = temp_file("lsc_opt_ckpt2");
  ckpt::save(path.string(), {&w}, "{}");
  ckpt::Loaded loaded = ckpt::load(path.string());

  ad::Param other = make_param("other", {0.0f});
  CHECK_THROWS_AS(ckpt::restore(loaded, {&other}), DataError);

  ad::Param wrong_shape("w", Tensor({3}));
  CHECK_THROWS_AS(ckpt::restore(loaded, {&wrong_shape}), ShapeError);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects foreign and truncated files") {
  auto path = temp_file("lsc_opt_ckpt3");
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("not a checkpoint", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(ckpt::load(path.string()), StreamError);
  std::filesystem::remove(path);
}
