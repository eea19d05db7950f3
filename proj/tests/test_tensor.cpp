#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grouplane/checkpoint.hpp"
#include "grouplane/rng.hpp"
#include "grouplane/tensor.hpp"
#include "oracles.hpp"

using namespace grouplane;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0,
                     bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("conv2d_grouped identity 1x1 kernel") {
  Rng rng(1);
  Tensor x = random_tensor(rng, {2, 3, 4, 5});
  // identity mapping: w[c, c, 0, 0] = 1
  std::vector<double> w(3 * 3, 0.0);
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  Tensor weight = Tensor::from_values({3, 3, 1, 1}, std::move(w));
  Tensor out = conv2d_grouped(x, weight, Tensor(), {});
  REQUIRE(out.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d_grouped zero-weight group outputs exactly its bias") {
  Rng rng(2);
  Tensor x = random_tensor(rng, {1, 4, 6, 6});
  std::vector<double> w(4 * 2 * 3 * 3);
  for (double& v : w) v = rng.uniform(-1, 1);
  // zero all filters of group 2 (output channels 2..3)
  for (size_t i = 2 * 2 * 9; i < w.size(); ++i) w[i] = 0.0;
  Tensor weight = Tensor::from_values({4, 2, 3, 3}, std::move(w));
  Tensor bias = Tensor::from_values({4}, {0.5, -0.25, 1.5, 2.5});
  Conv2dSpec spec;
  spec.groups = 2;
  spec.pad_h = spec.pad_w = 1;
  Tensor out = conv2d_grouped(x, weight, bias, spec);
  for (int c = 2; c < 4; ++c) {
    for (int64_t i = 0; i < 36; ++i) {
      CHECK(out.values()[(c * 36) + i] == bias.values()[c]);
    }
  }
}

TEST_CASE("conv2d_grouped matches brute-force loop nest") {
  Rng rng(3);
  Tensor x = random_tensor(rng, {1, 4, 5, 5});
  Tensor w = random_tensor(rng, {4, 2, 3, 3});
  Tensor b = random_tensor(rng, {4});
  Conv2dSpec spec;
  spec.groups = 2;
  spec.pad_h = spec.pad_w = 1;
  Tensor out = conv2d_grouped(x, w, b, spec);
  auto ref = oracle::conv2d_loops(
      {x.values().begin(), x.values().end()}, 1, 4, 5, 5,
      {w.values().begin(), w.values().end()}, 4, 3, 3, 2,
      {b.values().begin(), b.values().end()}, 1, 1, 1, 1);
  REQUIRE(out.numel() == static_cast<int64_t>(ref.size()));
  for (size_t i = 0; i < ref.size(); ++i) {
    CHECK(out.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("grouped conv equals dense conv with block-diagonal weights, bitwise") {
  // Identical scalar accumulation order inside each filter makes the two
  // routes bit-equal, not merely close.
  Rng rng(4);
  Tensor x = random_tensor(rng, {1, 4, 5, 5});
  Tensor wg = random_tensor(rng, {6, 2, 3, 3});
  Conv2dSpec gspec;
  gspec.groups = 2;
  gspec.pad_h = gspec.pad_w = 1;
  Tensor yg = conv2d_grouped(x, wg, Tensor(), gspec);

  // expand to dense [6, 4, 3, 3] with zeros off the diagonal blocks
  std::vector<double> wd(6 * 4 * 9, 0.0);
  for (int co = 0; co < 6; ++co) {
    const int g = co / 3;
    for (int ci = 0; ci < 2; ++ci)
      for (int k = 0; k < 9; ++k)
        wd[(co * 4 + g * 2 + ci) * 9 + k] = wg.values()[(co * 2 + ci) * 9 + k];
  }
  Conv2dSpec dspec;
  dspec.pad_h = dspec.pad_w = 1;
  Tensor yd = conv2d_grouped(x, Tensor::from_values({6, 4, 3, 3}, std::move(wd)),
                             Tensor(), dspec);
  REQUIRE(yg.shape() == yd.shape());
  for (int64_t i = 0; i < yg.numel(); ++i) {
    CHECK(yg.values()[i] == yd.values()[i]);
  }
}

TEST_CASE("conv2d_grouped rejects bad group counts") {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  Tensor w = Tensor::zeros({4, 1, 1, 1});
  Conv2dSpec spec;
  spec.groups = 2;
  CHECK_THROWS(conv2d_grouped(x, w, Tensor(), spec));
}

TEST_CASE("reduce_max basics and tie gradient routing") {
  Tensor a = Tensor::from_values({2, 2}, {1, 3, 2, 0});
  Tensor m = reduce_max(a, 1);
  CHECK(m.values()[0] == 3);
  CHECK(m.values()[1] == 2);

  Tensor x = Tensor::from_values({1, 3}, {5, 5, 5}, true);
  Tensor loss = sum_all(reduce_max(x, 1));
  loss.backward();
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);

  CHECK_THROWS(reduce_max(a, 2));
}

TEST_CASE("reduce_max matches scalar loop oracle on 2x4x6x5") {
  Rng rng(5);
  Shape shape{2, 4, 6, 5};
  Tensor x = random_tensor(rng, shape);
  Tensor m = reduce_max(x, 3);
  auto ref = oracle::reduce_max_loops({x.values().begin(), x.values().end()},
                                      shape, 3);
  REQUIRE(m.numel() == static_cast<int64_t>(ref.size()));
  for (size_t i = 0; i < ref.size(); ++i) CHECK(m.values()[i] == ref[i]);
}

TEST_CASE("softmax_lastdim fixed points") {
  Tensor s = softmax_lastdim(Tensor::from_values({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) {
    CHECK(s.values()[i] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  }

  Tensor big = softmax_lastdim(Tensor::from_values({2}, {1000, 0}));
  CHECK(big.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big.values()[1] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor t = softmax_lastdim(Tensor::from_values({3}, {1, 2, 3}));
  CHECK(t.values()[0] == doctest::Approx(0.09003057).epsilon(1e-7));
  CHECK(t.values()[1] == doctest::Approx(0.24472847).epsilon(1e-7));
  CHECK(t.values()[2] == doctest::Approx(0.66524096).epsilon(1e-7));
}

TEST_CASE("softmax rows sum to one for inputs up to 1e3") {
  Rng rng(6);
  Tensor x = random_tensor(rng, {8, 11}, -1e3, 1e3);
  Tensor s = softmax_lastdim(x);
  for (int r = 0; r < 8; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 11; ++c) sum += s.values()[r * 11 + c];
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("elementwise fixed values") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigmoid(Tensor::scalar(1)).item() ==
        doctest::Approx(0.7310585786).epsilon(1e-9));

  Tensor x = Tensor::from_values({1}, {-3}, true);
  Tensor r = relu(x);
  CHECK(r.item() == 0.0);
  sum_all(r).backward();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("linear identity and hand-checked case") {
  Rng rng(7);
  Tensor x = random_tensor(rng, {4, 3});
  std::vector<double> id(9, 0.0);
  for (int i = 0; i < 3; ++i) id[i * 3 + i] = 1.0;
  Tensor y = linear(x, Tensor::from_values({3, 3}, std::move(id)),
                    Tensor::zeros({3}));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);

  Tensor out = linear(Tensor::from_values({2}, {1, 2}),
                      Tensor::from_values({1, 2}, {1, 1}),
                      Tensor::from_values({1}, {1}));
  CHECK(out.item() == 4.0);
}

TEST_CASE("linear matches loop oracle") {
  Rng rng(8);
  Tensor x = random_tensor(rng, {3, 5});
  Tensor w = random_tensor(rng, {4, 5});
  Tensor b = random_tensor(rng, {4});
  Tensor y = linear(x, w, b);
  auto ref = oracle::linear_loops({x.values().begin(), x.values().end()}, 3, 5,
                                  {w.values().begin(), w.values().end()}, 4,
                                  {b.values().begin(), b.values().end()});
  for (size_t i = 0; i < ref.size(); ++i) {
    CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward closed forms") {
  Rng rng(9);
  Tensor x = random_tensor(rng, {2, 3, 4}, -2, 2, true);
  sum_all(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();

  Tensor x2 = Tensor::from_values({2}, {1, 2}, true);
  sum_all(mul(x2, x2)).backward();
  CHECK(x2.grad()[0] == doctest::Approx(2.0));
  CHECK(x2.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward error paths") {
  Tensor x = Tensor::from_values({2}, {1, 2}, true);
  Tensor v = mul(x, x);
  CHECK_THROWS(v.backward());  // non-scalar

  Tensor loss = sum_all(v);
  loss.backward();
  CHECK_THROWS(loss.backward());  // second call, no fresh forward

  Tensor detached = Tensor::from_values({1}, {3});
  CHECK_THROWS(sum_all(detached).backward());
}

TEST_CASE("fan-out accumulates both contributions") {
  Tensor x = Tensor::from_values({3}, {0.5, -1.25, 2.0}, true);
  // y = sum(x*x) + sum(x): grad = 2x + 1
  Tensor loss = add(sum_all(mul(x, x)), sum_all(x));
  loss.backward();
  for (int i = 0; i < 3; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2 * x.values()[i] + 1).epsilon(1e-12));
  }

  auto fd = oracle::gradcheck(
      {x}, [&] { return add(sum_all(mul(x, x)), sum_all(x)); });
  CHECK(fd.max_rel_err <= 1e-4);
}

TEST_CASE("finite-difference sweep over every differentiable op, 20 seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(Rng::mix(1234, seed));

    // conv, grouped with stride and padding
    {
      Tensor x = random_tensor(rng, {2, 4, 5, 6}, -2, 2, true);
      Tensor w = random_tensor(rng, {4, 2, 3, 3}, -1, 1, true);
      Tensor b = random_tensor(rng, {4}, -1, 1, true);
      Tensor mask = random_tensor(rng, {2, 4, 3, 3});
      Conv2dSpec spec;
      spec.groups = 2;
      spec.stride_h = spec.stride_w = 2;
      spec.pad_h = spec.pad_w = 1;
      auto fd = oracle::gradcheck({x, w, b}, [&] {
        return sum_all(mul(conv2d_grouped(x, w, b, spec), mask));
      });
      CAPTURE(seed);
      CHECK(fd.max_rel_err <= 1e-4);
    }

    // linear
    {
      Tensor x = random_tensor(rng, {3, 4}, -2, 2, true);
      Tensor w = random_tensor(rng, {5, 4}, -1, 1, true);
      Tensor b = random_tensor(rng, {5}, -1, 1, true);
      Tensor mask = random_tensor(rng, {3, 5});
      auto fd = oracle::gradcheck(
          {x, w, b}, [&] { return sum_all(mul(linear(x, w, b), mask)); });
      CHECK(fd.max_rel_err <= 1e-4);
    }

    // softmax + log + sigmoid chain
    {
      Tensor x = random_tensor(rng, {4, 6}, -2, 2, true);
      Tensor mask = random_tensor(rng, {4, 6});
      auto fd = oracle::gradcheck({x}, [&] {
        return sum_all(mul(safe_log(softmax_lastdim(x)), mask));
      });
      CHECK(fd.max_rel_err <= 1e-4);
      x.zero_grad();
      auto fd2 = oracle::gradcheck(
          {x}, [&] { return sum_all(mul(sigmoid(x), mask)); });
      CHECK(fd2.max_rel_err <= 1e-4);
    }

    // kinked ops: keep inputs away from 0 and keep max gaps wide
    {
      auto vals = oracle::random_values_away_from(rng, 24, -2, 2, {0.0}, 0.05);
      Tensor x = Tensor::from_values({4, 6}, vals, true);
      Tensor mask = random_tensor(rng, {4, 6});
      auto fd = oracle::gradcheck(
          {x}, [&] { return sum_all(mul(relu(x), mask)); });
      CHECK(fd.max_rel_err <= 1e-4);
      x.zero_grad();
      auto fd2 = oracle::gradcheck(
          {x}, [&] { return sum_all(mul(abs_value(x), mask)); });
      CHECK(fd2.max_rel_err <= 1e-4);
    }
    {
      std::vector<double> vals(2 * 3 * 4);
      for (size_t i = 0; i < vals.size(); ++i) {
        vals[i] = rng.uniform(-2, 2) + 0.2 * static_cast<double>(i % 7);
      }
      Tensor x = Tensor::from_values({2, 3, 4}, vals, true);
      Tensor mask = random_tensor(rng, {2, 4});
      auto fd = oracle::gradcheck({x}, [&] {
        return sum_all(mul(reduce_max(x, 1), mask));
      });
      CHECK(fd.max_rel_err <= 1e-4);
    }

    // reductions, reshape, transpose, slice, concat
    {
      Tensor x = random_tensor(rng, {3, 4, 2}, -2, 2, true);
      Tensor mask = random_tensor(rng, {3, 2});
      auto fd = oracle::gradcheck({x}, [&] {
        return sum_all(mul(reduce_sum(x, 1), mask));
      });
      CHECK(fd.max_rel_err <= 1e-4);
      x.zero_grad();
      Tensor mask2 = random_tensor(rng, {4, 6});
      auto fd2 = oracle::gradcheck({x}, [&] {
        return sum_all(mul(reshape(x, {4, 6}), mask2));
      });
      CHECK(fd2.max_rel_err <= 1e-4);
      x.zero_grad();
      Tensor mask3 = random_tensor(rng, {3, 2, 4});
      auto fd3 = oracle::gradcheck({x}, [&] {
        return sum_all(mul(transpose_last2(x), mask3));
      });
      CHECK(fd3.max_rel_err <= 1e-4);
      x.zero_grad();
      Tensor mask4 = random_tensor(rng, {3, 2, 2});
      auto fd4 = oracle::gradcheck({x}, [&] {
        return sum_all(mul(slice(x, 1, 1, 2), mask4));
      });
      CHECK(fd4.max_rel_err <= 1e-4);
    }
    {
      Tensor a = random_tensor(rng, {2, 3}, -2, 2, true);
      Tensor b2 = random_tensor(rng, {2, 2}, -2, 2, true);
      Tensor mask = random_tensor(rng, {2, 5});
      auto fd = oracle::gradcheck({a, b2}, [&] {
        return sum_all(mul(concat({a, b2}, 1), mask));
      });
      CHECK(fd.max_rel_err <= 1e-4);
    }
  }
}

TEST_CASE("non-finite forward output is rejected") {
  Tensor x = Tensor::from_values({1}, {1e308});
  CHECK_THROWS(mul(x, x));  // overflows to inf
  CHECK_THROWS(Tensor::from_values({1}, {std::nan("")}));
}

TEST_CASE("slice/concat round trip") {
  Rng rng(10);
  Tensor x = random_tensor(rng, {2, 6, 3});
  Tensor lo = slice(x, 1, 0, 3);
  Tensor hi = slice(x, 1, 3, 3);
  Tensor back = concat({lo, hi}, 1);
  REQUIRE(back.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.values()[i] == x.values()[i]);
}

TEST_CASE("f32 storage policy quantizes values") {
  set_default_dtype(Dtype::F32);
  Tensor x = Tensor::from_values({1}, {0.1});
  CHECK(x.values()[0] == static_cast<double>(0.1f));
  CHECK(x.values()[0] != 0.1);
  set_default_dtype(Dtype::F64);
  Tensor y = Tensor::from_values({1}, {0.1});
  CHECK(y.values()[0] == 0.1);
}

TEST_CASE("checkpoint round trip preserves names, shapes, f32 payloads") {
  Rng rng(11);
  std::map<std::string, Tensor> params;
  params.emplace("net.bias", random_tensor(rng, {7}));
  params.emplace("net.weight", random_tensor(rng, {4, 7}));
  params.emplace("head.weight", random_tensor(rng, {2, 3, 1, 1}));
  const std::string path = "test_ckpt_roundtrip.bin";
  save_checkpoint(path, params);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == params.size());
  for (const auto& [name, t] : params) {
    REQUIRE(loaded.count(name) == 1);
    const Tensor& l = loaded.at(name);
    REQUIRE(l.shape() == t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) {
      CHECK(l.values()[i] == static_cast<double>(static_cast<float>(t.values()[i])));
    }
  }
  std::remove(path.c_str());
  CHECK_THROWS(load_checkpoint("does_not_exist.bin"));
}
