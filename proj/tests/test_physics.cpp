#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hoiopt/body_model.hpp"
#include "hoiopt/finite_diff.hpp"
#include "hoiopt/physics.hpp"

using namespace hoiopt;

namespace {

// independent analytic box SDF used only by the oracles below
double oracle_box_sdf(double hx, double hy, double hz, double x, double y, double z) {
  double qx = std::abs(x) - hx, qy = std::abs(y) - hy, qz = std::abs(z) - hz;
  double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0), oz = std::max(qz, 0.0);
  return std::sqrt(ox * ox + oy * oy + oz * oz) + std::min(std::max({qx, qy, qz}), 0.0);
}

double oracle_nn_dist(const Tensor& a, int64_t i, const Tensor& b) {
  double best = 1e30;
  for (int64_t j = 0; j < b.rows(); ++j) {
    double dx = a.at(i, 0) - b.at(j, 0);
    double dy = a.at(i, 1) - b.at(j, 1);
    double dz = a.at(i, 2) - b.at(j, 2);
    best = std::min(best, dx * dx + dy * dy + dz * dz);
  }
  return std::sqrt(best);
}

Tensor random_cloud(Rng& rng, int64_t n, double cx, double cy, double cz, double spread) {
  std::vector<double> d;
  for (int64_t i = 0; i < n; ++i) {
    d.push_back(cx + spread * rng.normal());
    d.push_back(cy + spread * rng.normal());
    d.push_back(cz + spread * rng.normal());
  }
  return Tensor({n, 3}, std::move(d));
}

const ObjectTemplate& unit_box() {
  static ObjectTemplate t = make_primitive_template("ubox", SdfKind::Box, {0.5, 0.5, 0.5});
  return t;
}

WorldSdf identity_sdf(const ObjectTemplate& t, double tx = 0, double ty = 0, double tz = 0) {
  return make_world_sdf(t, identity_rot6d(), Tensor({3}, {tx, ty, tz}));
}

}  // namespace

TEST_CASE("contact mask prediction") {
  Rng rng(42);
  SECTION("far apart: m_h and m_o empty") {
    Tensor vh = random_cloud(rng, 40, 0, 1.0, 0, 0.1);
    Tensor vo = random_cloud(rng, 30, 3.0, 1.0, 0, 0.1);
    ContactMasks m = predict_contact_masks(vh, vo, identity_sdf(unit_box(), 3.0, 1.0, 0));
    REQUIRE(m.count_h() == 0);
    REQUIRE(m.count_o() == 0);
  }
  SECTION("object resting on the floor marks only the bottom band") {
    // unit box resting on y=0: center at y=0.5
    Tape t(false);
    auto pose = object_forward(t, unit_box(), t.constant(identity_rot6d()),
                               t.constant(Tensor({3}, {0, 0.5, 0})));
    Tensor vo = pose.vertices.val();
    Tensor vh = random_cloud(rng, 10, 0, 5, 0, 0.01);  // far away human
    ContactMasks m = predict_contact_masks(vh, vo, identity_sdf(unit_box(), 0, 0.5, 0));
    for (int64_t j = 0; j < vo.rows(); ++j) {
      bool bottom = vo.at(j, 1) <= kContactThreshold;
      REQUIRE((m.m_f[j] > 0) == bottom);
    }
    REQUIRE(m.count_f() == 4);  // the four bottom corners
  }
  SECTION("hand-built capsule-vs-box scene matches all-pairs thresholding") {
    // box face at x = 0.5; capsule of points hovering close to that face
    std::vector<double> cap;
    for (int i = 0; i < 60; ++i) {
      double t01 = i / 59.0;
      cap.push_back(0.52 + 0.25 * t01);        // x: from 2cm to 27cm off the face
      cap.push_back(-0.3 + 0.6 * t01);         // sweep y
      cap.push_back(0.05 * std::sin(8 * t01)); // wiggle z
    }
    Tensor vh({60, 3}, std::move(cap));
    Tape t(false);
    auto pose = object_forward(t, unit_box(), t.constant(identity_rot6d()),
                               t.constant(Tensor::zeros({3})));
    Tensor vo = pose.vertices.val();
    ContactMasks m = predict_contact_masks(vh, vo, identity_sdf(unit_box()));

    for (int64_t i = 0; i < vh.rows(); ++i) {
      double phi = oracle_box_sdf(0.5, 0.5, 0.5, vh.at(i, 0), vh.at(i, 1), vh.at(i, 2));
      REQUIRE((m.m_h[i] > 0) == (std::abs(phi) <= kContactThreshold));
    }
    for (int64_t j = 0; j < vo.rows(); ++j)
      REQUIRE((m.m_o[j] > 0) == (oracle_nn_dist(vo, j, vh) <= kContactThreshold));
  }
  SECTION("empty mesh is an error") {
    Tensor vh = random_cloud(rng, 5, 0, 0, 0, 1);
    REQUIRE_THROWS_AS(predict_contact_masks(vh, Tensor::zeros({0, 3}), identity_sdf(unit_box())),
                      Error);
  }
}

TEST_CASE("loss_ho") {
  Rng rng(7);
  SECTION("all-zero masks give zero") {
    Tensor vh = random_cloud(rng, 20, 0, 0, 0, 1);
    Tensor vo = random_cloud(rng, 15, 1, 0, 0, 1);
    ContactMasks m{Tensor::zeros({20}), Tensor::zeros({15}), Tensor::zeros({15})};
    REQUIRE(loss_ho_plain(vh, vo, m) == 0.0);
    Tape t;
    Var l = loss_ho(t, t.leaf(vh), t.leaf(vo), m);
    REQUIRE(l.val().scalar_value() == 0.0);
  }
  SECTION("single masked vertex at 0.1m gives 0.1 in hard-min mode") {
    Tensor vh({1, 3}, {0.0, 0.0, 0.0});
    Tensor vo({2, 3}, {0.1, 0.0, 0.0, 5.0, 0.0, 0.0});
    ContactMasks m{Tensor({1}, {1.0}), Tensor::zeros({2}), Tensor::zeros({2})};
    REQUIRE(loss_ho_plain(vh, vo, m) == Catch::Approx(0.1).margin(1e-15));
  }
  SECTION("hard-min value matches the exhaustive oracle on random scenes") {
    for (int trial = 0; trial < 100; ++trial) {
      int64_t n = rng.uniform_int(3, 25), k = rng.uniform_int(3, 25);
      Tensor vh = random_cloud(rng, n, 0, 0, 0, 0.5);
      Tensor vo = random_cloud(rng, k, 0.4, 0, 0, 0.5);
      std::vector<double> mh(static_cast<size_t>(n)), mo(static_cast<size_t>(k));
      for (auto& v : mh) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;
      for (auto& v : mo) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;
      ContactMasks m{Tensor({n}, std::move(mh)), Tensor({k}, std::move(mo)), Tensor::zeros({k})};

      double acc = 0.0;  // independent re-summation
      for (int64_t i = 0; i < n; ++i)
        if (m.m_h[i] > 0) acc += oracle_nn_dist(vh, i, vo) * oracle_nn_dist(vh, i, vo);
      for (int64_t j = 0; j < k; ++j)
        if (m.m_o[j] > 0) acc += oracle_nn_dist(vo, j, vh) * oracle_nn_dist(vo, j, vh);
      double oracle = std::sqrt(acc);

      REQUIRE(loss_ho_plain(vh, vo, m) == Catch::Approx(oracle).epsilon(1e-12));
      // tape hard-min mode agrees as well
      Tape t;
      Var l = loss_ho(t, t.leaf(vh), t.leaf(vo), m, /*temperature=*/0.0);
      REQUIRE(l.val().scalar_value() == Catch::Approx(oracle).epsilon(1e-9));
    }
  }
  SECTION("soft-min converges to hard-min as temperature shrinks") {
    Tensor vh = random_cloud(rng, 12, 0, 0, 0, 0.4);
    Tensor vo = random_cloud(rng, 9, 0.3, 0.1, 0, 0.4);
    ContactMasks m{Tensor::full({12}, 1.0), Tensor::full({9}, 1.0), Tensor::zeros({9})};
    double hard = loss_ho_plain(vh, vo, m);
    double prev_gap = 1e30;
    for (double temp : {0.05, 0.02, 0.01, 0.002, 0.0005}) {
      Tape t;
      double soft = loss_ho(t, t.leaf(vh), t.leaf(vo), m, temp).val().scalar_value();
      double gap = std::abs(soft - hard);
      REQUIRE(gap <= prev_gap + 1e-12);
      prev_gap = gap;
    }
    REQUIRE(prev_gap < 1e-6);
  }
  SECTION("hard-min loss does not increase while a masked vertex walks toward its nearest") {
    Tensor vo = random_cloud(rng, 10, 0.5, 0, 0, 0.3);
    Tensor start = random_cloud(rng, 1, -0.5, 0, 0, 0.1);
    // nearest object vertex to the walker
    int64_t jn = 0;
    double best = 1e30;
    for (int64_t j = 0; j < 10; ++j) {
      double dx = start.at(0, 0) - vo.at(j, 0), dy = start.at(0, 1) - vo.at(j, 1),
             dz = start.at(0, 2) - vo.at(j, 2);
      double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) { best = d2; jn = j; }
    }
    ContactMasks m{Tensor({1}, {1.0}), Tensor::zeros({10}), Tensor::zeros({10})};
    double prev = 1e30;
    for (int s = 0; s <= 20; ++s) {
      double a = s / 20.0;
      Tensor vh({1, 3}, {start.at(0, 0) + a * (vo.at(jn, 0) - start.at(0, 0)),
                         start.at(0, 1) + a * (vo.at(jn, 1) - start.at(0, 1)),
                         start.at(0, 2) + a * (vo.at(jn, 2) - start.at(0, 2))});
      double l = loss_ho_plain(vh, vo, m);
      REQUIRE(l <= prev + 1e-12);
      prev = l;
    }
  }
}

TEST_CASE("loss_of") {
  Rng rng(11);
  SECTION("resting bottom vertices give zero") {
    Tensor vo({3, 3}, {0.1, 0.0, 0.0, -0.1, 0.0, 0.2, 0.0, 0.4, 0.0});
    ContactMasks m{Tensor::zeros({1}), Tensor::zeros({3}), Tensor({3}, {1, 1, 0})};
    REQUIRE(loss_of_plain(vo, m) == 0.0);
  }
  SECTION("4 masked vertices hovering at 5cm give 0.2") {
    Tensor vo({4, 3}, {0, 0.05, 0, 1, 0.05, 0, 0, 0.05, 1, 1, 0.05, 1});
    ContactMasks m{Tensor::zeros({1}), Tensor::zeros({4}), Tensor::full({4}, 1.0)};
    REQUIRE(loss_of_plain(vo, m) == Catch::Approx(0.2).margin(1e-15));
  }
  SECTION("random scenes match an independent summation") {
    for (int trial = 0; trial < 100; ++trial) {
      int64_t k = rng.uniform_int(1, 30);
      Tensor vo = random_cloud(rng, k, 0, 0.2, 0, 0.3);
      std::vector<double> mf(static_cast<size_t>(k));
      for (auto& v : mf) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
      ContactMasks m{Tensor::zeros({1}), Tensor::zeros({k}), Tensor({k}, std::move(mf))};
      double oracle = 0.0;
      for (int64_t j = 0; j < k; ++j) oracle += m.m_f[j] * std::abs(vo.at(j, 1));
      REQUIRE(loss_of_plain(vo, m) == Catch::Approx(oracle).epsilon(1e-14));
      Tape t;
      REQUIRE(loss_of(t, t.leaf(vo), m).val().scalar_value() ==
              Catch::Approx(oracle).epsilon(1e-14));
    }
  }
}

TEST_CASE("loss_pt") {
  Rng rng(13);
  SECTION("fully outside gives exactly zero") {
    Tensor vh = random_cloud(rng, 50, 3, 3, 3, 0.2);
    REQUIRE(loss_pt_plain(vh, identity_sdf(unit_box())) == 0.0);
  }
  SECTION("one vertex 0.1m inside a unit box, 100-vertex mesh, gives 0.001") {
    std::vector<double> d;
    d.insert(d.end(), {0.0, 0.4, 0.0});  // phi = -0.1 inside the unit box
    Rng r2(5);
    for (int i = 0; i < 99; ++i) {
      d.push_back(2.0 + r2.uniform01());
      d.push_back(2.0 + r2.uniform01());
      d.push_back(2.0 + r2.uniform01());
    }
    Tensor vh({100, 3}, std::move(d));
    REQUIRE(loss_pt_plain(vh, identity_sdf(unit_box())) == Catch::Approx(0.001).margin(1e-15));
  }
  SECTION("zero iff no penetrating vertex") {
    for (int trial = 0; trial < 100; ++trial) {
      Tensor vh = random_cloud(rng, 30, 0, 0.6, 0, 0.35);
      WorldSdf sdf = identity_sdf(unit_box());
      bool any_inside = false;
      for (int64_t i = 0; i < 30; ++i)
        any_inside = any_inside || sdf.phi(vh.at(i, 0), vh.at(i, 1), vh.at(i, 2)) < 0.0;
      double l = loss_pt_plain(vh, sdf);
      REQUIRE((l > 0.0) == any_inside);
    }
  }
  SECTION("invariant under a rigid transform applied to both human and object") {
    Tensor vh = random_cloud(rng, 25, 0.3, 0.3, 0, 0.4);
    WorldSdf base = identity_sdf(unit_box());
    double l0 = loss_pt_plain(vh, base);
    Tensor R = axis_angle_matrix(0.3, 1.0, -0.2, 0.8);
    Tensor shift({3}, {0.5, -0.2, 1.0});
    std::vector<double> moved;
    for (int64_t i = 0; i < 25; ++i) {
      double x = vh.at(i, 0), y = vh.at(i, 1), z = vh.at(i, 2);
      moved.push_back(R[0] * x + R[1] * y + R[2] * z + shift[0]);
      moved.push_back(R[3] * x + R[4] * y + R[5] * z + shift[1]);
      moved.push_back(R[6] * x + R[7] * y + R[8] * z + shift[2]);
    }
    WorldSdf movedSdf = make_world_sdf(unit_box(), rot6d_from_matrix(R), shift);
    double l1 = loss_pt_plain(Tensor({25, 3}, std::move(moved)), movedSdf);
    REQUIRE(l1 == Catch::Approx(l0).margin(1e-12));
  }
}

TEST_CASE("loss_total") {
  static const BodyModel body = build_mini_body();
  static const ObjectTemplate crate = make_primitive_template("crate", SdfKind::Box, {0.16, 0.13, 0.19});
  SceneModels models{&body, &crate};
  ParamLayout layout = body.layout();
  Rng rng(2718);

  auto make_x = [&](Rng& r) {
    PoseParams p;
    std::vector<double> th;
    for (int k = 0; k < 16; ++k) {
      Tensor m = axis_angle_matrix(r.normal(), r.normal(), r.normal(), r.uniform(-0.5, 0.5));
      Tensor r6 = rot6d_from_matrix(m);
      for (int j = 0; j < 6; ++j) th.push_back(r6[j]);
    }
    p.theta = Tensor({16, 6}, std::move(th));
    p.beta = Tensor::randn({10}, r, 0.3);
    p.rot_o = rot6d_from_matrix(axis_angle_matrix(0, 1, 0, r.uniform(-1, 1)));
    // near the torso so contacts/penetration are plausible
    p.trans_o = Tensor({3}, {r.uniform(-0.15, 0.15), r.uniform(0.9, 1.2), r.uniform(0.15, 0.4)});
    return flatten(p, layout);
  };

  auto masks_for = [&](const ParamVector& x) {
    PoseParams p = unflatten(x);
    auto [vh, js] = lbs_forward_plain(body, p.theta, p.beta);
    Tape t(false);
    auto obj = object_forward(t, crate, t.constant(p.rot_o), t.constant(p.trans_o));
    return predict_contact_masks(vh, obj.vertices.val(),
                                 make_world_sdf(crate, p.rot_o, p.trans_o), 0.12);
  };

  SECTION("all lambdas zero: zero value, zero gradient") {
    ParamVector x = make_x(rng);
    ContactMasks m = masks_for(x);
    Tape t;
    Var xv = t.leaf(x.flat);
    GuidanceTerms g = loss_total(t, xv, layout, m, GuidanceWeights{0, 0, 0, 1}, models);
    REQUIRE(g.total.val().scalar_value() == 0.0);
    Tensor grad = t.backward(g.total).get(xv);
    REQUIRE(l2_norm(grad) == 0.0);
  }

  SECTION("lambda_ho isolation") {
    ParamVector x = make_x(rng);
    ContactMasks m = masks_for(x);
    Tape t1;
    Var x1 = t1.leaf(x.flat);
    GuidanceTerms g1 = loss_total(t1, x1, layout, m, GuidanceWeights{1, 0, 0, 1}, models);
    PoseParams p = unflatten(x);
    auto [vh, js] = lbs_forward_plain(body, p.theta, p.beta);
    Tape t2(false);
    auto obj = object_forward(t2, crate, t2.constant(p.rot_o), t2.constant(p.trans_o));
    Tape t3;
    double expected = loss_ho(t3, t3.constant(vh), t3.constant(obj.vertices.val()), m)
                          .val().scalar_value();
    REQUIRE(g1.total.val().scalar_value() == Catch::Approx(expected).epsilon(1e-12));
  }

  SECTION("linear in the lambda weights for fixed geometry") {
    ParamVector x = make_x(rng);
    ContactMasks m = masks_for(x);
    auto value = [&](double a, double b, double c) {
      Tape t;
      return loss_total(t, t.leaf(x.flat), layout, m, GuidanceWeights{a, b, c, 1}, models)
          .total.val().scalar_value();
    };
    double ho = value(1, 0, 0), of = value(0, 1, 0), pt = value(0, 0, 1);
    REQUIRE(value(2.0, 0.5, 3.0) == Catch::Approx(2.0 * ho + 0.5 * of + 3.0 * pt).margin(1e-12));
    REQUIRE(ho >= 0.0);
    REQUIRE(of >= 0.0);
    REQUIRE(pt >= 0.0);
  }

  SECTION("gradient over the 115-dim parameter vector matches finite differences") {
    int checked = 0;
    for (int trial = 0; trial < 3; ++trial) {
      ParamVector x = make_x(rng);
      ContactMasks m = masks_for(x);
      if (m.count_h() == 0 || m.count_o() == 0) continue;
      GuidanceWeights w{1.0, 1.0, 1.0, 1.0};
      Tape t;
      Var xv = t.leaf(x.flat);
      GuidanceTerms g = loss_total(t, xv, layout, m, w, models);
      Tensor analytic = t.backward(g.total).get(xv);
      auto f = [&](const Tensor& xt) {
        Tape t2(false);
        return loss_total(t2, t2.leaf(xt, false), layout, m, w, models)
            .total.val().scalar_value();
      };
      Tensor numeric = finite_diff_grad(f, x.flat, 1e-6);
      INFO("worst rel err " << grad_max_rel_err(analytic, numeric));
      REQUIRE(grad_close(analytic, numeric, 1e-4));
      ++checked;
    }
    REQUIRE(checked >= 1);
  }
}
