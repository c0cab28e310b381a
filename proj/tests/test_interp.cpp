#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "nestopt/interp.hpp"
#include "nestopt/ir.hpp"

using namespace nestopt;

namespace {
ConvSpec spec(long long ci, long long co, long long h, long long w,
              long long kh = 1, long long kw = 1, long long pad = 0,
              long long groups = 1) {
  ConvSpec s;
  s.ci = ci;
  s.co = co;
  s.h = h;
  s.w = w;
  s.kh = kh;
  s.kw = kw;
  s.pad = pad;
  s.groups = groups;
  return s;
}

TensorI random_tensor(std::vector<long long> shape, std::mt19937_64& rng) {
  TensorI t(std::move(shape));
  for (auto& v : t.data) v = static_cast<long long>(rng() % 17) - 8;
  return t;
}

TensorI run_nest(const ConvSpec& s, const TensorI& in, const TensorI& k) {
  ExecEnv<long long> env;
  env.bindings["I"] = in;
  env.bindings["K"] = k;
  return execute(conv_nest(s), env);
}
}  // namespace

TEST_CASE("1x1 convolution multiplies the two scalars", "[interp]") {
  ConvSpec s = spec(1, 1, 1, 1);
  TensorI in({1, 1, 1});
  in.data = {2};
  TensorI k({1, 1, 1, 1});
  k.data = {3};
  TensorI out = run_nest(s, in, k);
  REQUIRE(out.shape == std::vector<long long>{1, 1, 1});
  CHECK(out.data[0] == 6);
}

TEST_CASE("nest execution matches the straight-line reference", "[interp]") {
  std::mt19937_64 rng(12345);
  int trials = 0;
  for (long long g : {1LL, 2LL, 4LL}) {
    for (long long b : {1LL, 2LL, 4LL}) {
      for (long long k : {1LL, 3LL}) {
        for (int rep = 0; rep < 14; ++rep) {
          ConvSpec s = spec(4, 8, 4, 4, k, k, k > 1 ? 1 : 0, g);
          s.bottleneck_out = b;
          if (s.co_eff() % s.groups != 0) continue;
          TensorI in = random_tensor({s.ci, s.h, s.w}, rng);
          TensorI w = random_tensor({s.co_eff(), s.ci, s.kh, s.kw}, rng);
          CHECK(run_nest(s, in, w) == reference_conv(s, in, w));
          ++trials;
        }
      }
    }
  }
  CHECK(trials >= 200);
}

TEST_CASE("grouped convolution only mixes channels within a group", "[interp]") {
  ConvSpec s = spec(4, 4, 1, 1, 1, 1, 0, 2);
  TensorI in({4, 1, 1});
  in.data = {1, 10, 100, 1000};
  TensorI w({4, 4, 1, 1});
  for (auto& v : w.data) v = 1;
  TensorI out = run_nest(s, in, w);
  // Groups: outputs 0,1 see inputs {0,1}; outputs 2,3 see inputs {2,3}.
  CHECK(out.data == std::vector<long long>{11, 11, 1100, 1100});
}

TEST_CASE("mac count for the all-bounds-2 nest is 16", "[interp]") {
  CHECK(count_macs(conv_nest(spec(2, 2, 2, 2))) == 16);
}

TEST_CASE("mac count is unaffected by unroll annotations", "[interp]") {
  LoopNest nest = conv_nest(spec(4, 8, 4, 4, 3, 3, 1));
  long long base = count_macs(nest);
  for (auto& iv : nest.parts[0].spine)
    if (iv.name == "ci") iv.unroll = 4;
  CHECK(count_macs(nest) == base);
}

TEST_CASE("padded border taps contribute zero", "[interp]") {
  ConvSpec s = spec(1, 1, 2, 2, 3, 3, 1);
  TensorI in({1, 2, 2});
  in.data = {1, 2, 3, 4};
  TensorI w({1, 1, 3, 3});
  for (auto& v : w.data) v = 1;
  TensorI out = run_nest(s, in, w);
  // Every output sums all four in-bounds pixels for this size.
  CHECK(out.data == std::vector<long long>{10, 10, 10, 10});
}

TEST_CASE("missing and malformed bindings are rejected", "[interp]") {
  ConvSpec s = spec(2, 2, 2, 2);
  LoopNest nest = conv_nest(s);
  ExecEnv<long long> env;
  env.bindings["I"] = TensorI({2, 2, 2});
  CHECK_THROWS_AS(execute(nest, env), UnboundTensor);
  env.bindings["K"] = TensorI({2, 2});  // rank 2, access arity 4
  CHECK_THROWS_AS(execute(nest, env), RankMismatch);
  env.bindings["K"] = TensorI({2, 2, 1, 1});
  CHECK_NOTHROW(execute(nest, env));
  // Unpadded out-of-range read.
  ConvSpec s2 = spec(1, 1, 1, 1);
  LoopNest n2 = conv_nest(s2);
  n2.parts[0].stmts[1].accesses[2].indices[1] = AffineExpr::constant(5);
  ExecEnv<long long> e2;
  e2.bindings["I"] = TensorI({1, 1, 1});
  e2.bindings["K"] = TensorI({1, 1, 1, 1});
  CHECK_THROWS_AS(execute(n2, e2), IndexOutOfRange);
}

TEST_CASE("reference conv validates tensor shapes", "[interp]") {
  ConvSpec s = spec(2, 4, 3, 3);
  CHECK_THROWS_AS(reference_conv(s, TensorI({2, 3, 2}), TensorI({4, 2, 1, 1})),
                  ShapeMismatch);
  CHECK_THROWS_AS(reference_conv(s, TensorI({2, 3, 3}), TensorI({4, 1, 1, 1})),
                  ShapeMismatch);
}

TEST_CASE("binary tensor io round-trips", "[interp]") {
  std::mt19937_64 rng(7);
  TensorI t = random_tensor({3, 4, 2}, rng);
  std::stringstream ss;
  save_tensor(t, ss);
  CHECK(load_tensor<long long>(ss) == t);

  TensorF f({2, 2});
  f.data = {1.5, -2.25, 0.0, 3.0e-7};
  std::stringstream fs;
  save_tensor(f, fs);
  CHECK(load_tensor<double>(fs) == f);
}

TEST_CASE("text tensor io round-trips", "[interp]") {
  TensorF f({2, 3});
  f.data = {0.5, -1.0, 2.0, 1e-3, 4.0, -7.5};
  std::stringstream ss;
  save_tensor_text(f, ss);
  TensorF back = load_tensor_text<double>(ss);
  REQUIRE(back.shape == f.shape);
  for (size_t i = 0; i < f.data.size(); ++i)
    CHECK(back.data[i] == Catch::Approx(f.data[i]).epsilon(1e-12));
}
