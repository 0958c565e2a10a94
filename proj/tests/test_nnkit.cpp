#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "tract/autodiff.hpp"
#include "tract/checkpoint.hpp"
#include "tract/optim.hpp"
#include "tract/rng.hpp"

using namespace tract;
using nn::Value;

namespace {

Array random_array(rng::Stream& rng, int r, int c, double lo, double hi) {
  Array a(r, c);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

// Away-from-zero samples for ops with a documented non-smooth point at 0.
Array random_array_nonzero(rng::Stream& rng, int r, int c) {
  Array a(r, c);
  for (std::size_t i = 0; i < a.size(); ++i) {
    double mag = rng.uniform(0.05, 1.5);
    a[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return a;
}

}  // namespace

TEST_CASE("forward op examples") {
  Value a = Value::constant(Array::col({1, 0}));
  Value b = Value::constant(Array::col({0, 1}));
  CHECK(nn::dot(a, b).scalar() == 0.0);

  Value z = Value::constant(Array::col({0, 0}));
  CHECK_THAT(nn::logsumexp(z).scalar(), Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));

  nn::ParamSet ps;
  Value x = ps.add("x", Array::scalar(0.0));
  nn::backward(nn::tanh(x));
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("backward analytic examples") {
  nn::ParamSet ps;
  Value p = ps.add("p", Array::col({1, 2, 3}));
  nn::backward(nn::sum(p));
  CHECK(p.grad()[0] == 1.0);
  CHECK(p.grad()[1] == 1.0);
  CHECK(p.grad()[2] == 1.0);

  nn::ParamSet ps2;
  Value q = ps2.add("q", Array::col({1, 2}));
  nn::backward(nn::dot(q, q));
  CHECK(q.grad()[0] == 2.0);
  CHECK(q.grad()[1] == 4.0);
}

TEST_CASE("backward twice doubles adjoints; reset zeroes them") {
  nn::ParamSet ps;
  Value p = ps.add("p", Array::col({1, 2}));
  Value loss = nn::dot(p, p);
  nn::backward(loss);
  nn::backward(loss);
  CHECK(p.grad()[0] == 4.0);
  CHECK(p.grad()[1] == 8.0);
  nn::zero_all_grads(loss);
  CHECK(p.grad()[0] == 0.0);
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("backward contract and shape errors") {
  nn::ParamSet ps;
  Value p = ps.add("p", Array::col({1, 2}));
  CHECK_THROWS_AS(nn::backward(p), ContractError);

  Value a = Value::constant(Array(2, 3, 1.0));
  Value b = Value::constant(Array(3, 2, 1.0));
  CHECK_THROWS_AS(nn::add(a, b), ConfigError);
  try {
    nn::add(a, b);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(2 x 3)") != std::string::npos);
    CHECK(msg.find("(3 x 2)") != std::string::npos);
  }
  CHECK_THROWS_AS(nn::matmul(a, a), ConfigError);
}

TEST_CASE("logsumexp is overflow-safe for large magnitudes") {
  Value big = Value::constant(Array::col({1e4, 1e4 - 1.0, -1e4}));
  double lse = nn::logsumexp(big).scalar();
  CHECK(std::isfinite(lse));
  CHECK_THAT(lse, Catch::Matchers::WithinAbs(1e4 + std::log(1.0 + std::exp(-1.0)), 1e-9));

  Value m = Value::constant(Array(2, 2, 1e4));
  Array rl = nn::row_logsumexp(m).data();
  CHECK_THAT(rl[0], Catch::Matchers::WithinAbs(1e4 + std::log(2.0), 1e-9));
}

TEST_CASE("per-op gradients match central finite differences at random points") {
  rng::Stream rng(20240501);
  const double tol = 1e-4;

  auto check = [&](const char* what, nn::ParamSet& ps, const std::function<Value()>& build) {
    auto rep = nn::grad_check(build, ps, 1e-4, tol);
    INFO(what << " max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
  };

  for (int trial = 0; trial < 20; ++trial) {
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 2, 3, -1, 1));
      Value b = ps.add("b", random_array(rng, 2, 3, -1, 1));
      check("add/sub/mul", ps, [&] { return nn::sum(nn::mul(nn::add(a, b), nn::sub(a, b))); });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 2, 3, -1, 1));
      Value b = ps.add("b", random_array(rng, 3, 2, -1, 1));
      check("matmul/transpose", ps,
            [&] { return nn::sum(nn::matmul(nn::transpose(nn::matmul(a, b)), a)); });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 3, 4, -2, 2));
      Value b = ps.add("b", random_array(rng, 1, 4, -1, 1));
      Value s = ps.add("s", random_array(rng, 3, 1, 0.2, 1.5));
      check("add_rowvec/rowwise_scale/tanh", ps,
            [&] { return nn::mean(nn::tanh(nn::rowwise_scale(nn::add_rowvec(a, b), s))); });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array_nonzero(rng, 3, 3));
      check("relu away from kink", ps, [&] { return nn::sum(nn::relu(a)); });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 2, 3, -1.5, 1.5));
      check("exp/logsumexp", ps, [&] { return nn::logsumexp(nn::exp(a)); });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 2, 3, 0.5, 2.0));
      check("log/sqrt/recip", ps,
            [&] { return nn::sum(nn::log(nn::sqrt(nn::recip(a)))); });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 4, 5, -2, 2));
      check("row ops", ps, [&] {
        return nn::sum(nn::mul(nn::row_logsumexp(a), nn::row_sum(a)));
      });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 3, 6, -1, 1));
      Value b = ps.add("b", random_array(rng, 3, 2, -1, 1));
      check("slice/concat", ps, [&] {
        Value left = nn::slice_cols(a, 0, 2);
        Value right = nn::slice_cols(a, 4, 6);
        return nn::sum(nn::mul(nn::concat_cols({left, b}), nn::concat_cols({b, right})));
      });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 5, 4, -1, 1));
      std::vector<std::vector<int>> groups{{0, 2, 4}, {}, {1, 3}};
      check("group_mean_rows", ps, [&] {
        return nn::sum(nn::mul(nn::group_mean_rows(a, groups), nn::group_mean_rows(a, groups)));
      });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 2, 2 * 3 * 2, -1, 1));
      check("time_cumsum", ps, [&] {
        Value c = nn::time_cumsum(a, 2, 3);
        return nn::sum(nn::mul(c, c));
      });
    }
    {
      nn::ParamSet ps;
      Value a = ps.add("a", random_array(rng, 3, 4, -1, 1));
      check("unit_rows/l2norm composite", ps, [&] {
        Value u = nn::unit_rows(a);
        return nn::add(nn::sum(nn::mul(u, u)), nn::l2norm(nn::row_sum(a)));
      });
    }
  }
}

TEST_CASE("composite expression gradient matches finite differences") {
  rng::Stream rng(77);
  nn::ParamSet ps;
  Value w1 = ps.add("w1", random_array(rng, 4, 6, -0.5, 0.5));
  Value w2 = ps.add("w2", random_array(rng, 6, 3, -0.5, 0.5));
  Value b = ps.add("b", random_array(rng, 1, 6, -0.1, 0.1));
  Array x = random_array(rng, 5, 4, -1, 1);
  auto build = [&] {
    Value h = nn::tanh(nn::add_rowvec(nn::matmul(Value::constant(x), w1), b));
    Value out = nn::matmul(h, w2);
    Value u = nn::unit_rows(out);
    return nn::add(nn::mean(nn::mul(out, out)), nn::sum(nn::row_logsumexp(u)));
  };
  auto rep = nn::grad_check(build, ps, 1e-4, 1e-4);
  INFO("max rel err " << rep.max_rel_err << " at " << rep.worst_param);
  CHECK(rep.pass);
}

TEST_CASE("backward over a replayed graph is bitwise deterministic") {
  rng::Stream rng(99);
  Array wa = random_array(rng, 6, 6, -1, 1);
  Array xa = random_array(rng, 6, 6, -1, 1);
  auto run = [&]() {
    nn::ParamSet ps;
    Value w = ps.add("w", wa);
    Value x = Value::constant(xa);
    Value loss = nn::sum(nn::mul(nn::tanh(nn::matmul(x, w)), nn::matmul(w, x)));
    nn::backward(loss);
    return w.grad();
  };
  Array g1 = run();
  Array g2 = run();
  CHECK(g1 == g2);
}

TEST_CASE("grad_check on a quadratic form is tight") {
  rng::Stream rng(5);
  nn::ParamSet ps;
  Value x = ps.add("x", random_array(rng, 4, 1, -1, 1));
  Array wa = random_array(rng, 4, 4, -1, 1);
  auto build = [&] {
    Value wx = nn::matmul(Value::constant(wa), x);
    return nn::dot(wx, wx);
  };
  auto rep = nn::grad_check(build, ps, 1e-4, 1e-4);
  CHECK(rep.max_rel_err < 1e-6);

  CHECK_THROWS_AS(nn::grad_check(build, ps, 0.5, 1e-4), ContractError);
  CHECK_THROWS_AS(nn::grad_check(build, ps, 0.0, 1e-4), ContractError);
}

TEST_CASE("adam update behavior") {
  SECTION("zero gradient leaves parameters unchanged") {
    nn::ParamSet ps;
    Value p = ps.add("p", Array::col({0.3, -0.7}));
    nn::Adam opt({}, ps);
    opt.step(ps);
    CHECK(p.data()[0] == 0.3);
    CHECK(p.data()[1] == -0.7);
    CHECK(opt.step_count() == 1);
  }

  SECTION("first bias-corrected step moves by about lr") {
    nn::ParamSet ps;
    Value p = ps.add("p", Array::scalar(1.0));
    p.grad()[0] = 1.0;
    nn::AdamConfig cfg;
    cfg.lr = 0.1;
    nn::Adam opt(cfg, ps);
    opt.step(ps);
    // m_hat = 1, v_hat = 1 after bias correction: step = lr / (1 + eps)
    CHECK_THAT(p.data()[0], Catch::Matchers::WithinAbs(0.9, 1e-8));
  }

  SECTION("identical runs are bitwise identical") {
    auto run = [] {
      rng::Stream rng(31);
      nn::ParamSet ps;
      Value p = ps.add("p", random_array(rng, 3, 3, -1, 1));
      nn::Adam opt({}, ps);
      for (int step = 0; step < 25; ++step) {
        ps.zero_grad();
        nn::backward(nn::sum(nn::mul(nn::tanh(p), p)));
        opt.step(ps);
      }
      return p.data();
    };
    CHECK(run() == run());
  }

  SECTION("non-finite gradient names the parameter") {
    nn::ParamSet ps;
    Value p = ps.add("speed_weights", Array::col({1.0}));
    p.grad()[0] = std::nan("");
    nn::Adam opt({}, ps);
    CHECK_THROWS_WITH(opt.step(ps), Catch::Matchers::ContainsSubstring("speed_weights"));
  }
}

TEST_CASE("parameter checkpoint round-trips bitwise") {
  rng::Stream rng(12345);
  nn::ParamSet ps;
  ps.add("enc.w", random_array(rng, 7, 5, -2, 2));
  ps.add("enc.b", random_array(rng, 1, 5, -1, 1));
  ps.add("dec.w", random_array(rng, 5, 3, -3, 3));

  auto path = std::filesystem::temp_directory_path() / "tract_test_params.json";
  nlohmann::json meta;
  meta["note"] = "unit test";
  nn::save_params(path, ps, meta);

  nlohmann::json meta2;
  nn::ParamSet loaded = nn::load_params(path, &meta2);
  CHECK(meta2["note"] == "unit test");
  REQUIRE(loaded.all().size() == ps.all().size());
  for (const Value& p : ps.all()) {
    REQUIRE(loaded.has(p.name()));
    CHECK(loaded.at(p.name()).data() == p.data());
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint with wrong header is rejected") {
  auto path = std::filesystem::temp_directory_path() / "tract_bad_params.json";
  {
    std::ofstream out(path);
    out << R"({"format":"something-else","params":{}})" << "\n";
  }
  CHECK_THROWS_AS(nn::load_params(path), DataError);
  std::filesystem::remove(path);
}
