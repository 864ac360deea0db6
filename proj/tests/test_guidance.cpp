#include <doctest.h>

#include <cmath>

#include "gsdm/guidance.hpp"

using namespace gsdm;

namespace {

Element quad_at(double cx, double cy, double half = 0.15, int class_id = 0) {
  Element e;
  e.kind = ElementKind::polygon;
  e.class_id = class_id;
  e.vertices.resize(4, 2);
  e.vertices << cx - half, cy - half, cx + half, cy - half, cx + half, cy + half,
      cx - half, cy + half;
  return e;
}

PolySet three_quads() {
  PolySet s;
  s.scene_id = "q3";
  s.elements = {quad_at(-0.5, -0.5), quad_at(0.5, -0.4), quad_at(0.0, 0.55)};
  return s;
}

GuidanceNetConfig tiny_cfg() {
  GuidanceNetConfig cfg;
  cfg.pe_dim = 16;
  cfg.width = 32;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.ffn = 64;
  return cfg;
}

PolySet random_quads(RngStream& rng, int n) {
  PolySet s;
  s.scene_id = "r";
  for (int i = 0; i < n; ++i)
    s.elements.push_back(
        quad_at(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(0.05, 0.2)));
  return s;
}

}  // namespace

TEST_CASE("encode_guidance returns one pair per element with positive scales") {
  GuidanceNet<double> net(tiny_cfg(), 42);
  PolySet one;
  one.scene_id = "one";
  one.elements = {quad_at(0.1, -0.2)};
  const GuidanceField g = encode_guidance(net, one);
  CHECK(g.size() == 1);
  CHECK(g.sigma_T[0] > 0.0);

  RngStream rng(7);
  for (int trial = 0; trial < 10000; ++trial) {
    PolySet s = random_quads(rng, 1 + trial % 3);
    const GuidanceField f = encode_guidance(net, s);
    CHECK((f.sigma_T.array() > 0.0).all());
  }
}

TEST_CASE("encode_guidance is equivariant to element reordering") {
  GuidanceNet<double> net(tiny_cfg(), 43);
  // Softplus head at zero weights is constant; perturb the parameters so the
  // outputs actually depend on the inputs.
  RngStream prng(3);
  for (auto& [name, p] : net.params)
    if (p.trainable)
      for (Eigen::Index r = 0; r < p.value.rows(); ++r)
        for (Eigen::Index c = 0; c < p.value.cols(); ++c)
          p.value(r, c) += 0.05 * prng.normal();

  const PolySet s = three_quads();
  const GuidanceField g = encode_guidance(net, s);

  PolySet perm;
  perm.scene_id = s.scene_id;
  const std::vector<int> order{2, 0, 1};
  for (int i : order) perm.elements.push_back(s.elements[i]);
  const GuidanceField gp = encode_guidance(net, perm);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(gp.sigma_T[i] - g.sigma_T[order[i]]) < 1e-6);
    CHECK(std::abs(gp.mu_T(i, 0) - g.mu_T(order[i], 0)) < 1e-6);
    CHECK(std::abs(gp.mu_T(i, 1) - g.mu_T(order[i], 1)) < 1e-6);
  }
}

TEST_CASE("encoding is batch-invariant") {
  GuidanceNet<double> net(tiny_cfg(), 44);
  RngStream rng(9);
  const PolySet a = random_quads(rng, 2);
  const PolySet b = random_quads(rng, 3);
  const GuidanceField alone = encode_guidance(net, a);
  const std::vector<PolySet> batch{a, b};
  const auto fwd = net.forward(std::span<const PolySet>(batch.data(), 2));
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(fwd.mu(i, 0) - alone.mu_T(i, 0)) < 1e-12);
    CHECK(std::abs(fwd.sigma[i] - alone.sigma_T[i]) < 1e-12);
  }
}

TEST_CASE("proxy loss is zero when margins are satisfied") {
  GuidanceLossConfig cfg;
  const PolySet x0 = three_quads();
  // xt equal to x0: diagonal distances are 0 and the elements are far apart,
  // so every hinge is inactive.
  CHECK(perm_loss_proxy(x0, x0, cfg) == 0.0);
}

TEST_CASE("proxy loss punishes a transposition") {
  GuidanceLossConfig cfg;
  const PolySet x0 = three_quads();
  PolySet xt = x0;
  std::swap(xt.elements[0], xt.elements[1]);
  // With elements i and j swapped, D(i,i) is large while D(j,i) = 0, so both
  // triplet directions violate the margin for the two swapped rows.
  const double loss = perm_loss_proxy(x0, xt, cfg);
  CHECK(loss >= 2.0 * cfg.margin * 2 - 1e-12);
  // Hand check for N=2.
  PolySet a2;
  a2.scene_id = "a2";
  a2.elements = {quad_at(-0.5, 0.0), quad_at(0.5, 0.0)};
  PolySet b2 = a2;
  std::swap(b2.elements[0], b2.elements[1]);
  // D(0,0) = D(1,1) = 1.0 (swap distance), D(0,1) = D(1,0) = 0.
  // Each row contributes hinge(0.1 + 1.0 - 0) twice.
  CHECK(perm_loss_proxy(a2, b2, cfg) == doctest::Approx(4 * 1.1).epsilon(1e-12));
}

TEST_CASE("proxy loss distance evaluations scale as N^2") {
  GuidanceLossConfig cfg;
  RngStream rng(11);
  for (int n : {2, 4, 8}) {
    const PolySet x0 = random_quads(rng, n);
    const auto res = perm_loss_proxy_grad(x0, x0, cfg, false);
    CHECK(res.distance_evaluations == long(n) * n);
  }
  const PolySet single = random_quads(rng, 1);
  CHECK(perm_loss_proxy(single, single, cfg) == 0.0);
}

TEST_CASE("proxy loss subgradient matches finite differences away from kinks") {
  GuidanceLossConfig cfg;
  RngStream rng(13);
  const PolySet x0 = random_quads(rng, 3);
  PolySet xt = x0;
  for (auto& e : xt.elements) e.vertices.array() += 0.03;
  std::swap(xt.elements[1], xt.elements[2]);
  const auto base = perm_loss_proxy_grad(x0, xt, cfg, true);
  const double eps = 1e-7;
  for (int i = 0; i < xt.size(); ++i)
    for (int v = 0; v < xt.elements[i].vertex_count(); ++v)
      for (int c = 0; c < 2; ++c) {
        PolySet up = xt, dn = xt;
        up.elements[i].vertices(v, c) += eps;
        dn.elements[i].vertices(v, c) -= eps;
        const double fd =
            (perm_loss_proxy(x0, up, cfg) - perm_loss_proxy(x0, dn, cfg)) / (2 * eps);
        CHECK(std::abs(fd - base.grad_xt[i](v, c)) < 1e-5);
      }
}

TEST_CASE("exact loss oracle cases") {
  GuidanceLossConfig cfg;
  PolySet one;
  one.scene_id = "1";
  one.elements = {quad_at(0, 0)};
  CHECK(perm_loss_exact(one, one, cfg) == 0.0);

  // Two identical elements: every permutation ties, so both hinges sit at
  // exactly the margin.
  PolySet twins;
  twins.scene_id = "2";
  twins.elements = {quad_at(0.3, 0.3), quad_at(0.3, 0.3)};
  CHECK(perm_loss_exact(twins, twins, cfg) ==
        doctest::Approx(2 * cfg.margin).epsilon(1e-12));

  // xt close to x0 and far from other permutations -> 0.
  const PolySet x0 = three_quads();
  PolySet xt = x0;
  for (auto& e : xt.elements) e.vertices.array() += 0.01;
  CHECK(perm_loss_exact(x0, xt, cfg) == 0.0);

  PolySet big = x0;
  big.elements.push_back(quad_at(0.8, 0.8));
  big.elements.push_back(quad_at(-0.8, 0.8));
  CHECK_THROWS_AS((void)perm_loss_exact(big, big, cfg), std::invalid_argument);
}

TEST_CASE("guide loss reduces to the scale regularizer for an identity net") {
  GuidanceNetConfig cfg = tiny_cfg();
  GuidanceNet<double> net(cfg, 45);
  // Pin the scale head so sigma_T is exactly 1 after the positivity floor.
  net.params.at("guide.head_sigma.b").value(0, 0) =
      std::log(std::exp(1.0 - cfg.sigma_floor) - 1.0);

  GuidanceLossConfig lcfg;
  lcfg.lambda1 = 0.0;
  lcfg.lambda3 = 0.0;
  const NoiseSchedule sched = NoiseSchedule::linear(100);
  const PolySet x0 = three_quads();
  const int t = 60;
  RngStream rng(1);
  const double loss = guide_loss(net, sched, x0, t, rng, lcfg);
  const double expect = lcfg.lambda2 * 3.0 / (1.0 - sched.alpha_bar[t]);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-9));

  // With only the permutation term and satisfied margins the loss vanishes:
  // elements are far apart and t is small, so xt stays near x0.
  GuidanceLossConfig only_perm;
  only_perm.lambda2 = only_perm.lambda3 = 0.0;
  RngStream rng2(2);
  const double perm_only = guide_loss(net, sched, x0, 1, rng2, only_perm);
  CHECK(perm_only == 0.0);
}

TEST_CASE("guide loss gradients reach the network parameters") {
  GuidanceNetConfig cfg = tiny_cfg();
  GuidanceNet<double> net(cfg, 46);
  RngStream prng(5);
  for (auto& [name, p] : net.params)
    if (p.trainable)
      for (Eigen::Index r = 0; r < p.value.rows(); ++r)
        for (Eigen::Index c = 0; c < p.value.cols(); ++c)
          p.value(r, c) += 0.05 * prng.normal();

  const NoiseSchedule sched = NoiseSchedule::linear(50);
  const std::vector<PolySet> batch{three_quads()};
  const int t = 50;

  auto loss = [&]() {
    net.params.zero_grad();
    const auto fwd = net.forward(std::span<const PolySet>(batch.data(), 1));
    Eigen::Matrix<double, Eigen::Dynamic, 2> mu(3, 2);
    Eigen::VectorXd sigma(3);
    for (int i = 0; i < 3; ++i) {
      mu(i, 0) = fwd.mu(i, 0);
      mu(i, 1) = fwd.mu(i, 1);
      sigma[i] = fwd.sigma[i];
    }
    // Deterministic eps inside: reseed per evaluation for stable finite
    // differences.
    RngStream draw(777);
    GuidanceLossConfig lcfg;
    const auto terms =
        detail::guide_loss_terms(batch[0], mu, sigma, sched, t, draw, lcfg, true);
    nn::Mat<double> dmu(3, 2);
    Eigen::VectorXd dsig(3);
    for (int i = 0; i < 3; ++i) {
      dmu(i, 0) = terms.dmu(i, 0);
      dmu(i, 1) = terms.dmu(i, 1);
      dsig[i] = terms.dsigma[i];
    }
    net.backward(fwd, dmu, dsig);
    return terms.value;
  };
  RngStream probe(6);
  CHECK(nn::grad_check(net.params, loss, 1e-4, probe, 2) < 1e-4);
}

TEST_CASE("training for zero iterations leaves the net unchanged") {
  GuidanceNet<double> net(tiny_cfg(), 47);
  const auto before = net.params.at("guide.input.W").value;
  GuidanceTrainConfig tcfg;
  tcfg.iterations = 0;
  RngStream rng(1);
  const NoiseSchedule sched = NoiseSchedule::linear(10);
  const std::vector<PolySet> data{three_quads()};
  const auto trace = train_guidance(net, data, sched, tcfg, GuidanceLossConfig{}, rng);
  CHECK(trace.empty());
  CHECK((net.params.at("guide.input.W").value.array() == before.array()).all());
  CHECK(!net.trained_flag());
}

TEST_CASE("short training run reduces the smoothed loss on tiny scenes") {
  GuidanceNet<float> net(tiny_cfg(), 48);
  RngStream data_rng(21);
  std::vector<PolySet> data;
  for (int i = 0; i < 64; ++i) data.push_back(random_quads(data_rng, 3));
  const NoiseSchedule sched = NoiseSchedule::linear(100);
  GuidanceTrainConfig tcfg;
  tcfg.iterations = 220;
  tcfg.batch = 8;
  tcfg.lr = 1e-3;
  RngStream rng(2);
  const auto trace = train_guidance(net, data, sched, tcfg, GuidanceLossConfig{}, rng);
  REQUIRE(trace.size() == 220);
  auto window = [&](int a, int b) {
    double s = 0;
    for (int i = a; i < b; ++i) s += trace[i];
    return s / (b - a);
  };
  CHECK(window(170, 220) < window(0, 50));
  CHECK(net.trained_flag());
}
