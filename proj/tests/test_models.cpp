#include <doctest.h>

#include "iwd/data.hpp"
#include "iwd/errors.hpp"
#include "iwd/models.hpp"
#include "iwd/random.hpp"

#include <cmath>

using namespace iwd;

TEST_CASE("parameter layouts") {
  CHECK(param_count(ArchDescriptor::linear(3, 4)) == 3 * 4 + 4);
  CHECK(param_count(ArchDescriptor::mlp(2, {16}, 2)) == 2 * 16 + 16 + 16 * 2 + 2);
  CHECK(param_count(ArchDescriptor::mlp(2, {5, 3}, 2)) == 10 + 5 + 15 + 3 + 6 + 2);
  CHECK(param_count(ArchDescriptor::tinyconv(5, 3)) == 9 * 8 + 8 + 8 * 3 + 3);

  const auto layout = param_layout(ArchDescriptor::mlp(2, {4}, 3));
  REQUIRE(layout.size() == 4);
  CHECK(layout[0].name == "hidden0.weight");
  CHECK(layout[3].name == "fc.bias");
  CHECK(layout[3].offset == 8 + 4 + 12);
}

TEST_CASE("invalid architectures are rejected") {
  CHECK_THROWS_AS(ArchDescriptor::linear(2, 1).validate(), ContractError);
  CHECK_THROWS_AS(ArchDescriptor::linear(0, 2).validate(), ContractError);
  CHECK_THROWS_AS(ArchDescriptor::mlp(2, {0}, 2).validate(), ContractError);
  CHECK_THROWS_AS(ArchDescriptor::mlp(2, {}, 2).validate(), ContractError);
  ArchDescriptor conv = ArchDescriptor::tinyconv(4, 2);
  conv.input_dim = 15;
  CHECK_THROWS_AS(conv.validate(), ContractError);
  CHECK(arch_kind_from_string(to_string(ArchKind::tinyconv)) == ArchKind::tinyconv);
  CHECK_THROWS_AS(arch_kind_from_string("resnet"), ContractError);
}

TEST_CASE("init_model is deterministic and seed-sensitive") {
  const auto arch = ArchDescriptor::mlp(8, {32}, 4);
  const ModelState a = init_model(arch, {}, 7);
  const ModelState b = init_model(arch, {}, 7);
  CHECK(a.theta == b.theta);
  CHECK(a.theta.allFinite());

  const ModelState c = init_model(arch, {}, 8);
  const Index differ = (a.theta.array() != c.theta.array()).count();
  CHECK(static_cast<double>(differ) >= 0.99 * static_cast<double>(a.theta.size()));

  const ModelState z = init_model(arch, {InitKind::normal, 0.0}, 3);
  CHECK(z.theta.isZero(0.0));

  const ModelState n = init_model(arch, {InitKind::normal, 0.1}, 3);
  CHECK(n.theta.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("kaiming bound follows the fan-in") {
  const auto arch = ArchDescriptor::linear(16, 3);
  const ModelState m = init_model(arch, {}, 1);
  CHECK(m.theta.cwiseAbs().maxCoeff() <= 0.25);
}

TEST_CASE("weighted loss reductions") {
  WeightedDataset ds = gen_gaussian_mixture(3, 5, 4, 0.7, 2);
  const auto arch = ArchDescriptor::mlp(4, {6}, 3);
  const ModelState m = init_model(arch, {}, 5);
  const Index n = ds.size();

  SUBCASE("uniform weights give the mean loss") {
    double mean = 0.0;
    for (Index i = 0; i < n; ++i) {
      mean += weighted_loss(m, ds.X.row(i), std::span<const int>(&ds.y[i], 1),
                            Vector::Ones(1));
    }
    mean /= static_cast<double>(n);
    CHECK(weighted_loss(m, ds.X, ds.y, uniform_weights(n)) == doctest::Approx(mean).epsilon(1e-14));
  }
  SUBCASE("one-hot weights pick one instance") {
    const Index j = 4;
    const double single =
        weighted_loss(m, ds.X.row(j), std::span<const int>(&ds.y[j], 1), Vector::Ones(1));
    CHECK(weighted_loss(m, ds.X, ds.y, Vector::Unit(n, j)) == single);
  }
  SUBCASE("zero model on ten classes") {
    WeightedDataset ten = gen_gaussian_mixture(10, 2, 3, 1.0, 4);
    ModelState zero{ArchDescriptor::linear(3, 10), Vector::Zero(40), 0};
    CHECK(weighted_loss(zero, ten.X, ten.y, ten.w) ==
          doctest::Approx(std::log(10.0)).epsilon(1e-13));
  }
  SUBCASE("size mismatch and negative weights") {
    CHECK_THROWS_AS(weighted_loss(m, ds.X, ds.y, uniform_weights(n - 1)), ContractError);
    Vector w = uniform_weights(n);
    w[0] = -0.1;
    CHECK_THROWS_AS(weighted_loss(m, ds.X, ds.y, w), ContractError);
  }
}

TEST_CASE("loss gradient is linear in the weights") {
  WeightedDataset ds = gen_two_moons(30, 0.1, 3);
  const auto arch = ArchDescriptor::mlp(2, {8}, 2);
  const Vector theta = init_model(arch, {}, 2).theta;
  Rng rng = make_rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector w1(ds.size());
  Vector w2(ds.size());
  for (Index i = 0; i < ds.size(); ++i) {
    w1[i] = u(rng);
    w2[i] = u(rng);
  }
  const Vector g1 = loss_function(arch, ds.X, ds.y, w1).grad(theta);
  const Vector g2 = loss_function(arch, ds.X, ds.y, w2).grad(theta);
  const Vector g12 = loss_function(arch, ds.X, ds.y, w1 + w2).grad(theta);
  CHECK((g12 - g1 - g2).norm() <= 1e-10 * g12.norm());
}

TEST_CASE("damped logistic Hessian is positive definite") {
  WeightedDataset ds = gen_gaussian_mixture(2, 20, 5, 1.0, 6);
  const auto arch = ArchDescriptor::linear(5, 2);
  const auto f = loss_function(arch, ds.X, ds.y, ds.w);
  const Vector theta = init_model(arch, {}, 1).theta;
  const double lambda = 0.01;
  Rng rng = make_rng(9);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    Vector v(theta.size());
    for (Index i = 0; i < v.size(); ++i) v[i] = nd(rng);
    CHECK(v.dot(f.hvp(theta, v) + lambda * v) > 0.0);
  }
}

TEST_CASE("sgd_step recurrences") {
  ModelState m{ArchDescriptor::linear(1, 2), Vector::Zero(4), 0};
  m.theta << 1.0, 2.0, 3.0, 4.0;
  const Vector g = Vector::Constant(4, 0.5);
  const Vector v0 = Vector::Zero(4);

  auto [same, v_same] = sgd_step(m, g, {0.0, 0.9, 0.0}, v0);
  CHECK(same.theta == m.theta);

  auto [plain, v_plain] = sgd_step(m, g, {0.1, 0.0, 0.0}, v0);
  CHECK(plain.theta.isApprox(m.theta - 0.1 * g, 1e-15));

  CHECK_THROWS_AS(sgd_step(m, Vector::Zero(3), {0.1, 0.0, 0.0}, v0), ContractError);
}

TEST_CASE("two momentum steps on a quadratic match the scalar recurrence") {
  // f(θ) = θ²/2 so g = θ.
  double theta = 1.0;
  double vel = 0.0;
  const double lr = 0.1;
  const double mom = 0.9;
  ModelState m{ArchDescriptor::linear(1, 2), Vector::Zero(4), 0};
  m.theta[0] = 1.0;
  Vector v = Vector::Zero(4);
  for (int step = 0; step < 2; ++step) {
    vel = mom * vel + theta;
    theta -= lr * vel;
    Vector g = Vector::Zero(4);
    g[0] = m.theta[0];
    std::tie(m, v) = sgd_step(m, g, {lr, mom, 0.0}, v);
    if (step == 0) {
      CHECK(m.theta[0] == doctest::Approx(0.9));
      CHECK(v[0] == doctest::Approx(1.0));
    }
  }
  CHECK(m.theta[0] == doctest::Approx(theta));
  CHECK(v[0] == doctest::Approx(vel));
  CHECK(m.theta[0] == doctest::Approx(0.72));
  CHECK(v[0] == doctest::Approx(1.8));
}

TEST_CASE("mlp separates linearly separable data") {
  WeightedDataset ds = gen_gaussian_mixture(2, 40, 2, 0.1, 12);
  const auto arch = ArchDescriptor::mlp(2, {16}, 2);
  ModelState m = init_model(arch, {}, 3);
  m = train_full_batch(m, ds.X, ds.y, ds.w, {0.5, 0.9, 0.0}, 200);
  CHECK(accuracy(m, ds.X, ds.y) == 1.0);
}

TEST_CASE("tinyconv features are pooled channel activations") {
  const auto arch = ArchDescriptor::tinyconv(3, 2, 4);
  const ModelState m = init_model(arch, {}, 8);
  Matrix X = Matrix::Zero(2, 9);
  X(1, 4) = 1.0;
  const Matrix h = penultimate_features(m, X);
  CHECK(h.rows() == 2);
  CHECK(h.cols() == 4);
  CHECK((h.array() >= 0.0).all());
  // A zero image sees only the conv bias at every pixel.
  const Vector bias = m.theta.segment(36, 4);
  for (Index c = 0; c < 4; ++c) CHECK(h(0, c) == doctest::Approx(std::max(bias[c], 0.0)));
}
