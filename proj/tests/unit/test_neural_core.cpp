#include <cmath>

#include "ctxalign/dep_parser.hpp"
#include "ctxalign/nn/checkpoint.hpp"
#include "ctxalign/nn/gradcheck.hpp"
#include "ctxalign/nn/layers.hpp"
#include "ctxalign/nn/optim.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxalign;
using namespace ctxalign::nn;

namespace {

constexpr double kTol = 1e-4;

// Reduces any expression to a scalar with a random (fixed) weighting so that
// every output entry receives a distinct upstream gradient.
Expr weighted_sum(Expr e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul_constant(e, test_util::random_matrix(e.rows(), e.cols(), rng)));
}

double check(ParameterSet& params, const std::function<Expr(Graph&)>& f) {
  auto r = check_gradients(params, f);
  INFO("worst entry: " << r.worst_entry);
  CHECK(r.entries_checked > 0);
  return r.max_relative_error;
}

Parameter& random_param(ParameterSet& ps, const std::string& name, Index r, Index c, std::mt19937_64& rng) {
  return ps.add(name, test_util::random_matrix(r, c, rng));
}

}  // namespace

TEST_CASE("analytic gradients of sum and squared norm") {
  ParameterSet ps;
  Matrix wv(2, 3);
  wv << 1, 2, 3, 4, 5, 6;
  auto& w = ps.add("w", wv);
  Matrix x(1, 2);
  x << 1, -1;
  Graph g;
  Expr y = matmul(g.constant(x), g.parameter(w));
  g.backward(squared_norm(y));
  // d||xW||^2/dW = 2 x^T (xW)
  Matrix expect = 2.0 * x.transpose() * (x * wv);
  CHECK((w.grad - expect).norm() < 1e-12);

  ps.zero_grad();
  Graph h;
  h.backward(sum(h.parameter(w)));
  CHECK((w.grad - Matrix::Ones(2, 3)).norm() < 1e-12);
}

TEST_CASE("gradient check: elementwise and structural ops") {
  std::mt19937_64 rng(1);
  ParameterSet ps;
  auto& a = random_param(ps, "a", 3, 4, rng);
  auto& b = random_param(ps, "b", 3, 4, rng);
  auto& row = random_param(ps, "row", 1, 4, rng);
  auto& m = random_param(ps, "m", 4, 2, rng);
  Matrix c = test_util::random_matrix(3, 4, rng);

  std::vector<std::pair<std::string, std::function<Expr(Graph&)>>> cases = {
      {"matmul", [&](Graph& g) { return weighted_sum(matmul(g.parameter(a), g.parameter(m)), 1); }},
      {"transpose", [&](Graph& g) { return weighted_sum(transpose(g.parameter(a)), 2); }},
      {"add", [&](Graph& g) { return weighted_sum(add(g.parameter(a), g.parameter(b)), 3); }},
      {"add broadcast", [&](Graph& g) { return weighted_sum(add(g.parameter(a), g.parameter(row)), 4); }},
      {"sub", [&](Graph& g) { return weighted_sum(sub(g.parameter(a), g.parameter(b)), 5); }},
      {"cmul", [&](Graph& g) { return weighted_sum(cmul(g.parameter(a), g.parameter(b)), 6); }},
      {"scale", [&](Graph& g) { return weighted_sum(scale(g.parameter(a), -1.7), 7); }},
      {"add_constant", [&](Graph& g) { return weighted_sum(add_constant(g.parameter(a), c), 8); }},
      {"tanh", [&](Graph& g) { return weighted_sum(tanh(g.parameter(a)), 9); }},
      {"sigmoid", [&](Graph& g) { return weighted_sum(sigmoid(g.parameter(a)), 10); }},
      {"leaky_relu", [&](Graph& g) { return weighted_sum(leaky_relu(g.parameter(a), 0.1), 11); }},
      {"elu", [&](Graph& g) { return weighted_sum(elu(g.parameter(a)), 12); }},
      {"concat_cols", [&](Graph& g) { return weighted_sum(concat_cols({g.parameter(a), g.parameter(b)}), 13); }},
      {"concat_rows", [&](Graph& g) { return weighted_sum(concat_rows({g.parameter(a), g.parameter(row)}), 14); }},
      {"slice_cols", [&](Graph& g) { return weighted_sum(slice_cols(g.parameter(a), 1, 2), 15); }},
      {"slice_rows", [&](Graph& g) { return weighted_sum(slice_rows(g.parameter(a), 1, 2), 16); }},
      {"gather_rows", [&](Graph& g) { return weighted_sum(gather_rows(g.parameter(a), {2, 0, 2, 1}), 17); }},
      {"mean", [&](Graph& g) { return mean(cmul(g.parameter(a), g.parameter(b))); }},
      {"squared_norm", [&](Graph& g) { return squared_norm(g.parameter(a)); }},
      {"sum_all", [&](Graph& g) { return sum_all({sum(g.parameter(a)), squared_norm(g.parameter(b))}); }},
      {"softmax_cross_entropy", [&](Graph& g) { return softmax_cross_entropy(g.parameter(a), {3, -1, 0}); }},
      {"sigmoid_cross_entropy",
       [&](Graph& g) { return sigmoid_cross_entropy(slice_cols(g.parameter(a), 0, 1), {0.9, 0.1, 0.8}); }},
  };
  for (const auto& [name, f] : cases) {
    INFO(name);
    CHECK(check(ps, f) < kTol);
  }
}

TEST_CASE("gradient check: biaffine, bilinear rows, dense and affine") {
  std::mt19937_64 rng(2);
  ParameterSet ps;
  auto& h1 = random_param(ps, "h1", 4, 3, rng);
  auto& h2 = random_param(ps, "h2", 4, 2, rng);
  auto& u = random_param(ps, "u", 3, 2, rng);
  auto& u1 = random_param(ps, "u1", 3, 1, rng);
  auto& u2 = random_param(ps, "u2", 2, 1, rng);
  auto& bb = random_param(ps, "b", 1, 1, rng);
  auto& ul = random_param(ps, "ul", 3, 3 * 2, rng);
  auto dense = add_dense(ps, "d", 3, 5, rng);

  CHECK(check(ps, [&](Graph& g) {
          return weighted_sum(biaffine(g.parameter(h1), g.parameter(h2), g.parameter(u), g.parameter(u1),
                                       g.parameter(u2), g.parameter(bb)),
                              1);
        }) < kTol);
  CHECK(check(ps, [&](Graph& g) { return weighted_sum(biaffine(g.parameter(h1), g.parameter(h2), g.parameter(u)), 2); }) <
        kTol);
  CHECK(check(ps, [&](Graph& g) {
          return weighted_sum(bilinear_rows(g.parameter(h1), g.parameter(h2), g.parameter(ul), 3), 3);
        }) < kTol);
  CHECK(check(ps, [&](Graph& g) { return weighted_sum(apply(g, dense, g.parameter(h1)), 4); }) < kTol);
  CHECK(check(ps, [&](Graph& g) {
          return weighted_sum(affine(g.parameter(h1), g.parameter(*dense.w), g.parameter(*dense.b)), 5);
        }) < kTol);
}

TEST_CASE("biaffine matches an explicit triple loop") {
  std::mt19937_64 rng(3);
  Matrix h1 = test_util::random_matrix(5, 3, rng), h2 = test_util::random_matrix(4, 2, rng);
  Matrix u = test_util::random_matrix(3, 2, rng), u1 = test_util::random_matrix(3, 1, rng),
         u2 = test_util::random_matrix(2, 1, rng), b = test_util::random_matrix(1, 1, rng);
  Graph g;
  Matrix s = biaffine(g.constant(h1), g.constant(h2), g.constant(u), g.constant(u1), g.constant(u2), g.constant(b))
                 .value();
  REQUIRE(s.rows() == 5);
  REQUIRE(s.cols() == 4);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 4; ++j) {
      double e = b(0, 0);
      for (Index p = 0; p < 3; ++p) {
        for (Index q = 0; q < 2; ++q) e += h1(i, p) * u(p, q) * h2(j, q);
        e += u1(p, 0) * h1(i, p);
      }
      for (Index q = 0; q < 2; ++q) e += u2(q, 0) * h2(j, q);
      CHECK(s(i, j) == doctest::Approx(e).epsilon(1e-12));
    }
  }
}

TEST_CASE("lstm: single step closed form and zero weights") {
  std::mt19937_64 rng(4);
  ParameterSet ps;
  auto layer = add_lstm(ps, "l", 3, 2, rng);
  Matrix x = test_util::random_matrix(1, 3, rng);
  Graph g;
  Matrix h = lstm_sequence(g, g.constant(x), layer, false).value();
  Matrix z = x * layer.wx->value + layer.b->value;  // h0 = 0
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (Index k = 0; k < 2; ++k) {
    const double i = sig(z(0, k)), gg = std::tanh(z(0, 4 + k)), o = sig(z(0, 6 + k));
    CHECK(h(0, k) == doctest::Approx(o * std::tanh(i * gg)).epsilon(1e-12));
  }
  // forget-gate bias starts at one, the rest at zero
  CHECK(layer.b->value.block(0, 2, 1, 2).isApprox(Matrix::Ones(1, 2)));
  CHECK(layer.b->value.block(0, 0, 1, 2).isZero());

  for (std::size_t p = 0; p < ps.size(); ++p) ps.at(p).value.setZero();
  Graph g2;
  Matrix xs = test_util::random_matrix(6, 3, rng);
  CHECK(lstm_sequence(g2, g2.constant(xs), layer, false).value().isZero());
  CHECK(lstm_sequence(g2, g2.constant(Matrix(0, 3)), layer, true).value().rows() == 0);
}

TEST_CASE("gradient check: lstm in both directions and a stacked bilstm") {
  std::mt19937_64 rng(5);
  ParameterSet ps;
  auto& x = random_param(ps, "x", 4, 3, rng);
  auto layer = add_lstm(ps, "l", 3, 2, rng);
  for (bool reverse : {false, true}) {
    CHECK(check(ps, [&](Graph& g) { return weighted_sum(lstm_sequence(g, g.parameter(x), layer, reverse), 6); }) <
          kTol);
  }
  ParameterSet ps2;
  auto& x2 = random_param(ps2, "x", 3, 3, rng);
  auto enc = add_bilstm(ps2, "enc", 3, 2, 2, rng);
  CHECK(check(ps2, [&](Graph& g) { return weighted_sum(bilstm_sequence(g, g.parameter(x2), enc), 7); }) < kTol);
}

TEST_CASE("gradient check: full parser loss on a three-token sentence") {
  ParserConfig cfg;
  cfg.pos_dim = 3;
  cfg.lstm_hidden = 3;
  cfg.lstm_layers = 2;
  cfg.arc_mlp_dim = 4;
  cfg.rel_mlp_dim = 3;
  cfg.dropout = 0.0;
  ParserModel model(cfg, 4, {"NOUN", "VERB"}, {"nsubj", "obj", "root"});
  Sentence s;
  s.id = "t";
  for (auto [form, upos, head, rel] : std::vector<std::tuple<std::string, std::string, int, std::string>>{
           {"a", "NOUN", 2, "nsubj"}, {"b", "VERB", 0, "root"}, {"c", "NOUN", 2, "obj"}}) {
    ConlluToken t;
    t.form = form;
    t.upos = upos;
    t.head = head;
    t.deprel = rel;
    s.tokens.push_back(t);
  }
  std::mt19937_64 rng(6);
  Matrix emb = test_util::random_matrix(3, 4, rng);
  auto r = check_gradients(model.params(), [&](Graph& g) { return model.loss(g, emb, s); });
  INFO("worst entry: " << r.worst_entry);
  CHECK(r.max_relative_error < kTol);
}

TEST_CASE("unused parameters receive zero gradient") {
  std::mt19937_64 rng(7);
  ParameterSet ps;
  auto& a = random_param(ps, "a", 2, 2, rng);
  auto& b = random_param(ps, "b", 2, 2, rng);
  Graph g;
  Expr used = squared_norm(g.parameter(a));
  Expr dangling = tanh(g.parameter(b));
  (void)dangling;
  g.backward(used);
  CHECK(b.grad.isZero());
  CHECK_FALSE(a.grad.isZero());
}

TEST_CASE("adam follows a hand-computed trajectory") {
  ParameterSet ps;
  Matrix init(1, 2);
  init << 0.5, -2.0;
  auto& p = ps.add("p", init);
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam adam(ps, cfg);
  Matrix m = Matrix::Zero(1, 2), v = Matrix::Zero(1, 2), x = init;
  for (int t = 1; t <= 50; ++t) {
    // loss = sum(x^3) / 3, gradient x^2 with a sign flip every other step
    Matrix grad = x.cwiseProduct(x) * (t % 2 ? 1.0 : -0.5);
    p.grad = grad;
    adam.step();
    m = cfg.beta1 * m + (1 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1 - cfg.beta2) * grad.cwiseProduct(grad);
    Matrix mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
    x = x - cfg.lr * mh.cwiseQuotient((vh.cwiseSqrt().array() + cfg.eps).matrix());
    CHECK((p.value - x).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(adam.steps() == 50);
}

TEST_CASE("dropout keeps the expected fraction and rescales") {
  const Index n = 100000;
  Graph train(true, 9);
  Matrix out = dropout(train.constant(Matrix::Ones(1, n)), 0.3).value();
  Index kept = 0;
  for (Index i = 0; i < n; ++i) {
    if (out(0, i) != 0.0) {
      ++kept;
      CHECK(out(0, i) == doctest::Approx(1.0 / 0.7));
    }
  }
  CHECK(std::abs(static_cast<double>(kept) / n - 0.7) < 0.01);
  Graph eval(false, 9);
  CHECK(dropout(eval.constant(Matrix::Ones(1, 10)), 0.3).value() == Matrix::Ones(1, 10));
}

TEST_CASE("checkpoint round trip is bit exact") {
  test_util::TempDir dir("nn");
  std::mt19937_64 rng(10);
  ParameterSet a;
  random_param(a, "w", 3, 5, rng);
  random_param(a, "b", 1, 5, rng);
  a.get("w").value(0, 0) = 1.0 / 3.0;
  save_checkpoint(dir.file("a.ckpt"), a, "{\"k\":1}");
  auto ck = load_checkpoint(dir.file("a.ckpt"));
  CHECK(ck.metadata == "{\"k\":1}");
  ParameterSet b;
  b.add("w", Matrix::Zero(3, 5));
  b.add("b", Matrix::Zero(1, 5));
  restore(b, ck);
  CHECK(b.get("w").value == a.get("w").value);
  CHECK(b.get("b").value == a.get("b").value);
  save_checkpoint(dir.file("b.ckpt"), b, "{\"k\":1}");
  CHECK(test_util::read_text(dir.file("a.ckpt")) == test_util::read_text(dir.file("b.ckpt")));

  ParameterSet wrong;
  wrong.add("w", Matrix::Zero(3, 4));
  wrong.add("b", Matrix::Zero(1, 5));
  CHECK_THROWS(restore(wrong, ck));
  test_util::write_text(dir.file("junk.ckpt"), "not a checkpoint");
  CHECK_THROWS(load_checkpoint(dir.file("junk.ckpt")));
}
