#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>

#include "hoiopt/body_model.hpp"
#include "hoiopt/finite_diff.hpp"
#include "hoiopt/object_template.hpp"
#include "hoiopt/params.hpp"
#include "hoiopt/rotation.hpp"

using namespace hoiopt;

namespace {

// Independent Gram-Schmidt oracle, written with plain scalar math.
std::array<double, 9> gram_schmidt_oracle(const double* a) {
  auto norm = [](double x, double y, double z) { return std::sqrt(x * x + y * y + z * z); };
  double n1 = norm(a[0], a[1], a[2]);
  double b1[3] = {a[0] / n1, a[1] / n1, a[2] / n1};
  double d = b1[0] * a[3] + b1[1] * a[4] + b1[2] * a[5];
  double u[3] = {a[3] - d * b1[0], a[4] - d * b1[1], a[5] - d * b1[2]};
  double n2 = norm(u[0], u[1], u[2]);
  double b2[3] = {u[0] / n2, u[1] / n2, u[2] / n2};
  double b3[3] = {b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2],
                  b1[0] * b2[1] - b1[1] * b2[0]};
  return {b1[0], b2[0], b3[0], b1[1], b2[1], b3[1], b1[2], b2[2], b3[2]};
}

double det3(const Tensor& R) {
  return R[0] * (R[4] * R[8] - R[5] * R[7]) - R[1] * (R[3] * R[8] - R[5] * R[6]) +
         R[2] * (R[3] * R[7] - R[4] * R[6]);
}

// Independent LBS oracle: per-vertex weighted sum of per-joint rigid
// transforms, computed with explicit 3x3/vector math and a separate FK pass.
Tensor naive_lbs_oracle(const BodyModel& m, const Tensor& theta, const Tensor& beta) {
  int64_t N = m.vertex_count(), K = m.joint_count();
  std::vector<double> shaped(static_cast<size_t>(N * 3));
  for (int64_t i = 0; i < N * 3; ++i) {
    double v = m.template_vertices[i];
    for (int b = 0; b < 10; ++b) v += beta[b] * m.shape_basis[static_cast<size_t>(b)][i];
    shaped[static_cast<size_t>(i)] = v;
  }
  std::vector<double> joints(static_cast<size_t>(K * 3), 0.0);
  for (int64_t k = 0; k < K; ++k)
    for (int64_t i = 0; i < N; ++i)
      for (int d = 0; d < 3; ++d)
        joints[static_cast<size_t>(k * 3 + d)] +=
            m.joint_regressor.at(k, i) * shaped[static_cast<size_t>(i * 3 + d)];

  std::vector<Tensor> wr(static_cast<size_t>(K));
  std::vector<std::array<double, 3>> wt(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) {
    std::vector<double> r6(6);
    for (int j = 0; j < 6; ++j) r6[static_cast<size_t>(j)] = theta.at(k, j);
    auto R9 = gram_schmidt_oracle(r6.data());
    Tensor Rk({3, 3}, std::vector<double>(R9.begin(), R9.end()));
    int p = m.kinematic_parents[static_cast<size_t>(k)];
    if (p < 0) {
      wr[static_cast<size_t>(k)] = Rk;
      wt[static_cast<size_t>(k)] = {joints[static_cast<size_t>(k * 3)], joints[static_cast<size_t>(k * 3 + 1)],
                                    joints[static_cast<size_t>(k * 3 + 2)]};
    } else {
      wr[static_cast<size_t>(k)] = mat3_mul(wr[static_cast<size_t>(p)], Rk);
      std::array<double, 3> off = {joints[static_cast<size_t>(k * 3)] - joints[static_cast<size_t>(p * 3)],
                                   joints[static_cast<size_t>(k * 3 + 1)] - joints[static_cast<size_t>(p * 3 + 1)],
                                   joints[static_cast<size_t>(k * 3 + 2)] - joints[static_cast<size_t>(p * 3 + 2)]};
      const Tensor& Rp = wr[static_cast<size_t>(p)];
      for (int d = 0; d < 3; ++d)
        wt[static_cast<size_t>(k)][static_cast<size_t>(d)] =
            Rp[d * 3] * off[0] + Rp[d * 3 + 1] * off[1] + Rp[d * 3 + 2] * off[2] +
            wt[static_cast<size_t>(p)][static_cast<size_t>(d)];
    }
  }
  std::vector<double> out(static_cast<size_t>(N * 3), 0.0);
  for (int64_t i = 0; i < N; ++i)
    for (int64_t k = 0; k < K; ++k) {
      double w = m.skin_weights.at(i, k);
      if (w == 0.0) continue;
      const Tensor& R = wr[static_cast<size_t>(k)];
      double cx = shaped[static_cast<size_t>(i * 3)] - joints[static_cast<size_t>(k * 3)];
      double cy = shaped[static_cast<size_t>(i * 3 + 1)] - joints[static_cast<size_t>(k * 3 + 1)];
      double cz = shaped[static_cast<size_t>(i * 3 + 2)] - joints[static_cast<size_t>(k * 3 + 2)];
      for (int d = 0; d < 3; ++d)
        out[static_cast<size_t>(i * 3 + d)] +=
            w * (R[d * 3] * cx + R[d * 3 + 1] * cy + R[d * 3 + 2] * cz +
                 wt[static_cast<size_t>(k)][static_cast<size_t>(d)]);
    }
  return Tensor({N, 3}, std::move(out));
}

Tensor random_rot6d(Rng& rng, double max_angle = 1.0) {
  Tensor R = axis_angle_matrix(rng.normal(), rng.normal(), rng.normal(),
                               rng.uniform(-max_angle, max_angle));
  return rot6d_from_matrix(R);
}

Tensor random_theta(const BodyModel& m, Rng& rng, double max_angle = 1.0) {
  std::vector<double> d;
  for (int64_t k = 0; k < m.joint_count(); ++k) {
    Tensor r = random_rot6d(rng, max_angle);
    for (int j = 0; j < 6; ++j) d.push_back(r[j]);
  }
  return Tensor({m.joint_count(), 6}, std::move(d));
}

}  // namespace

TEST_CASE("rot6d basics") {
  SECTION("canonical input gives identity") {
    Tensor R = rot6d_to_matrix(Tensor({6}, {1, 0, 0, 0, 1, 0}));
    for (int i = 0; i < 9; ++i) REQUIRE(R[i] == ((i % 4 == 0) ? 1.0 : 0.0));
  }
  SECTION("scale invariance") {
    Tensor R = rot6d_to_matrix(Tensor({6}, {2, 0, 0, 0, 5, 0}));
    for (int i = 0; i < 9; ++i) REQUIRE(R[i] == Catch::Approx((i % 4 == 0) ? 1.0 : 0.0).margin(1e-15));
  }
  SECTION("degenerate inputs are hard errors") {
    REQUIRE_THROWS_AS(rot6d_to_matrix(Tensor({6}, {0, 0, 0, 0, 1, 0})), Error);
    REQUIRE_THROWS_AS(rot6d_to_matrix(Tensor({6}, {1, 0, 0, 1, 1e-12, 0})), Error);
    REQUIRE_THROWS_AS(rot6d_to_matrix(Tensor({6}, {1, 0, 0, 2, 0, 0})), Error);
  }
  SECTION("1000 random inputs: orthonormal, det +1, matches oracle") {
    Rng rng(314);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> a(6);
      for (auto& x : a) x = rng.uniform(-2, 2);
      Tensor in({6}, std::vector<double>(a));
      double n1 = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
      if (n1 < 1e-3) continue;
      Tensor R = rot6d_to_matrix(in);
      // R^T R == I
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double dot = R[i] * R[j] + R[3 + i] * R[3 + j] + R[6 + i] * R[6 + j];
          REQUIRE(dot == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-10));
        }
      REQUIRE(det3(R) == Catch::Approx(1.0).margin(1e-10));
      auto oracle = gram_schmidt_oracle(a.data());
      for (int i = 0; i < 9; ++i) REQUIRE(R[i] == Catch::Approx(oracle[static_cast<size_t>(i)]).margin(1e-12));
    }
  }
  SECTION("differentiable through the tape") {
    Rng rng(55);
    Tensor x0({1, 6}, {0.9, 0.1, -0.2, 0.05, 1.1, 0.3});
    Tensor w = Tensor::randn({9}, rng);
    Tape tape;
    Var x = tape.leaf(x0);
    Var r = rot6d_rows_to_matrices(x);
    Var root = sum(mul(reshape(r, {9}), tape.constant(w)));
    Tensor analytic = tape.backward(root).get(x);
    auto f = [&](const Tensor& t) {
      Tape t2(false);
      Var rr = rot6d_rows_to_matrices(t2.leaf(t, false));
      double s = 0;
      for (int i = 0; i < 9; ++i) s += rr.val()[i] * w[i];
      return s;
    };
    REQUIRE(grad_close(analytic, finite_diff_grad(f, x0, 1e-6), 1e-4));
  }
}

TEST_CASE("parameter vector layout") {
  SECTION("K=52 gives the full-body dimension 331") {
    ParamLayout l{52};
    REQUIRE(l.dim() == 331);
  }
  SECTION("K=16 gives 115") {
    ParamLayout l{16};
    REQUIRE(l.dim() == 115);
  }
  SECTION("flatten/unflatten round trip") {
    Rng rng(9);
    ParamLayout l{16};
    PoseParams p;
    p.theta = Tensor::randn({16, 6}, rng);
    p.beta = Tensor::randn({10}, rng);
    p.rot_o = Tensor::randn({6}, rng);
    p.trans_o = Tensor::randn({3}, rng);
    ParamVector x = flatten(p, l);
    REQUIRE(x.flat.numel() == 115);
    PoseParams q = unflatten(x);
    REQUIRE(max_abs_diff(p.theta, q.theta) == 0.0);
    REQUIRE(max_abs_diff(p.beta, q.beta) == 0.0);
    REQUIRE(max_abs_diff(p.rot_o, q.rot_o) == 0.0);
    REQUIRE(max_abs_diff(p.trans_o, q.trans_o) == 0.0);
  }
  SECTION("length mismatch is an error") {
    REQUIRE_THROWS_AS(ParamVector(Tensor::zeros({100}), ParamLayout{16}), Error);
  }
}

TEST_CASE("mini body model") {
  static const BodyModel body = build_mini_body();

  SECTION("construction sanity") {
    REQUIRE(body.joint_count() == 16);
    REQUIRE(body.vertex_count() >= 500);
    REQUIRE(body.vertex_count() <= 900);
    body.validate();
  }

  SECTION("identity pose and zero shape reproduce the template bit-for-bit") {
    std::vector<double> th;
    for (int k = 0; k < 16; ++k) {
      Tensor r = identity_rot6d();
      for (int j = 0; j < 6; ++j) th.push_back(r[j]);
    }
    auto [verts, joints] = lbs_forward_plain(body, Tensor({16, 6}, std::move(th)), Tensor::zeros({10}));
    REQUIRE(max_abs_diff(verts, body.template_vertices) == 0.0);
    REQUIRE(max_abs_diff(joints, body.rest_joints()) == 0.0);
  }

  SECTION("root-only rotation acts rigidly about the pelvis") {
    Tensor R = axis_angle_matrix(0, 1, 0, M_PI / 2.0);
    std::vector<double> th;
    for (int k = 0; k < 16; ++k) {
      Tensor r = k == 0 ? rot6d_from_matrix(R) : identity_rot6d();
      for (int j = 0; j < 6; ++j) th.push_back(r[j]);
    }
    auto [verts, joints] = lbs_forward_plain(body, Tensor({16, 6}, std::move(th)), Tensor::zeros({10}));
    Tensor j0 = body.rest_joints();
    double px = j0.at(0, 0), py = j0.at(0, 1), pz = j0.at(0, 2);
    for (int64_t i = 0; i < body.vertex_count(); ++i) {
      double cx = body.template_vertices.at(i, 0) - px;
      double cy = body.template_vertices.at(i, 1) - py;
      double cz = body.template_vertices.at(i, 2) - pz;
      double ex = R[0] * cx + R[1] * cy + R[2] * cz + px;
      double ey = R[3] * cx + R[4] * cy + R[5] * cz + py;
      double ez = R[6] * cx + R[7] * cy + R[8] * cz + pz;
      REQUIRE(std::abs(verts.at(i, 0) - ex) < 1e-9);
      REQUIRE(std::abs(verts.at(i, 1) - ey) < 1e-9);
      REQUIRE(std::abs(verts.at(i, 2) - ez) < 1e-9);
    }
  }

  SECTION("random poses match the naive per-vertex oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor theta = random_theta(body, rng);
      Tensor beta = Tensor::randn({10}, rng, 0.5);
      auto [verts, joints] = lbs_forward_plain(body, theta, beta);
      Tensor oracle = naive_lbs_oracle(body, theta, beta);
      REQUIRE(max_abs_diff(verts, oracle) < 1e-12);
    }
  }

  SECTION("NaN input is an error") {
    Tensor theta = Tensor::zeros({16, 6});
    REQUIRE_THROWS_AS(lbs_forward_plain(body, theta, Tensor({10}, {0, 0, 0, 0, 0, 0, 0, 0, 0,
                                                                    std::nan("")})),
                      Error);
  }

  SECTION("vertex gradients w.r.t. theta and beta match finite differences") {
    Rng rng(77);
    Tensor theta = random_theta(body, rng, 0.6);
    Tensor beta = Tensor::randn({10}, rng, 0.4);
    Tensor w = Tensor::randn({body.vertex_count() * 3}, rng);

    Tape tape;
    Var tv = tape.leaf(theta);
    Var bv = tape.leaf(beta);
    LbsResult r = lbs_forward(tape, body, tv, bv);
    Var root = sum(mul(reshape(r.vertices, {body.vertex_count() * 3}), tape.constant(w)));
    GradMap g = tape.backward(root);

    auto f_theta = [&](const Tensor& t) {
      Tape t2(false);
      LbsResult rr = lbs_forward(t2, body, t2.leaf(t, false), t2.leaf(beta, false));
      double s = 0;
      for (int64_t i = 0; i < rr.vertices.val().numel(); ++i) s += rr.vertices.val()[i] * w[i];
      return s;
    };
    auto f_beta = [&](const Tensor& b) {
      Tape t2(false);
      LbsResult rr = lbs_forward(t2, body, t2.leaf(theta, false), t2.leaf(b, false));
      double s = 0;
      for (int64_t i = 0; i < rr.vertices.val().numel(); ++i) s += rr.vertices.val()[i] * w[i];
      return s;
    };
    REQUIRE(grad_close(g.get(tv), finite_diff_grad(f_theta, theta, 1e-6), 1e-4));
    REQUIRE(grad_close(g.get(bv), finite_diff_grad(f_beta, beta, 1e-6), 1e-4));
  }
}

TEST_CASE("object templates and SDFs") {
  SECTION("object_forward identity is the canonical mesh") {
    ObjectTemplate box = make_primitive_template("b", SdfKind::Box, {0.5, 0.5, 0.5});
    Tape t(false);
    auto pose = object_forward(t, box, t.constant(identity_rot6d()),
                               t.constant(Tensor::zeros({3})));
    REQUIRE(max_abs_diff(pose.vertices.val(), box.mesh_vertices) == 0.0);
  }
  SECTION("translation shifts all vertices") {
    ObjectTemplate box = make_primitive_template("b", SdfKind::Box, {0.5, 0.5, 0.5});
    Tape t(false);
    auto pose = object_forward(t, box, t.constant(identity_rot6d()),
                               t.constant(Tensor({3}, {0, 1, 0})));
    for (int64_t i = 0; i < box.mesh_vertices.rows(); ++i)
      REQUIRE(pose.vertices.val().at(i, 1) == box.mesh_vertices.at(i, 1) + 1.0);
  }
  SECTION("inverse transform recovers the canonical mesh") {
    ObjectTemplate box = make_primitive_template("b", SdfKind::Box, {0.3, 0.2, 0.1});
    Rng rng(4);
    Tensor R = axis_angle_matrix(rng.normal(), rng.normal(), rng.normal(), 1.1);
    Tensor trans({3}, {0.4, -0.2, 0.9});
    Tape t(false);
    auto pose = object_forward(t, box, t.constant(rot6d_from_matrix(R)), t.constant(trans));
    // apply inverse: R^T (v - t)
    const Tensor& V = pose.vertices.val();
    for (int64_t i = 0; i < V.rows(); ++i) {
      double qx = V.at(i, 0) - trans[0], qy = V.at(i, 1) - trans[1], qz = V.at(i, 2) - trans[2];
      double lx = R[0] * qx + R[3] * qy + R[6] * qz;
      double ly = R[1] * qx + R[4] * qy + R[7] * qz;
      double lz = R[2] * qx + R[5] * qy + R[8] * qz;
      REQUIRE(std::abs(lx - box.mesh_vertices.at(i, 0)) < 1e-10);
      REQUIRE(std::abs(ly - box.mesh_vertices.at(i, 1)) < 1e-10);
      REQUIRE(std::abs(lz - box.mesh_vertices.at(i, 2)) < 1e-10);
    }
  }
  SECTION("degenerate rotation is an error") {
    ObjectTemplate box = make_primitive_template("b", SdfKind::Box, {0.3, 0.2, 0.1});
    Tape t(false);
    REQUIRE_THROWS_AS(object_forward(t, box, t.constant(Tensor({6}, {1, 0, 0, 1, 0, 0})),
                                     t.constant(Tensor::zeros({3}))),
                      Error);
  }

  SECTION("unit box SDF at center is -0.5") {
    ObjectTemplate box = make_primitive_template("b", SdfKind::Box, {0.5, 0.5, 0.5});
    REQUIRE(world_sdf(box, identity_rot6d(), Tensor::zeros({3}), Tensor::zeros({3})) == -0.5);
  }
  SECTION("unit sphere SDF at distance 2 is +1") {
    ObjectTemplate s = make_primitive_template("s", SdfKind::Sphere, {1.0});
    REQUIRE(world_sdf(s, identity_rot6d(), Tensor::zeros({3}), Tensor({3}, {2, 0, 0})) ==
            Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("grid-sampled icosphere SDF tracks the analytic sphere") {
    const double r = 0.15;
    MeshData ico = make_icosphere_mesh(r, 2);
    int64_t nv = static_cast<int64_t>(ico.verts.size() / 3);
    ObjectTemplate t = make_grid_template("ico", Tensor({nv, 3}, std::move(ico.verts)),
                                          std::move(ico.faces), 32, 0.1);
    double spacing = t.grid->spacing[0];
    Rng rng(99);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      double x = rng.uniform(-0.2, 0.2), y = rng.uniform(-0.2, 0.2), z = rng.uniform(-0.2, 0.2);
      double got = sdf_canonical(t, x, y, z);
      double exact = std::sqrt(x * x + y * y + z * z) - r;
      worst = std::max(worst, std::abs(got - exact));
    }
    // icosphere subdiv-2 underestimates the sphere by up to ~0.5% of r; the
    // grid itself adds O(spacing) interpolation error
    REQUIRE(worst < 2.0 * spacing);
  }
  SECTION("negative strictly inside, positive outside (all kinds)") {
    for (auto& t : make_default_templates()) {
      REQUIRE(sdf_canonical(t, 0, 0, 0) < 0.0);
      REQUIRE(sdf_canonical(t, 5, 5, 5) > 0.0);
    }
  }
  SECTION("1-Lipschitz along random rays for analytic primitives") {
    Rng rng(123);
    for (auto& t : make_default_templates()) {
      WorldSdf w = make_world_sdf(t, random_rot6d(rng), Tensor({3}, {0.1, 0.2, -0.1}));
      for (int ray = 0; ray < 50; ++ray) {
        double ox = rng.uniform(-1, 1), oy = rng.uniform(-1, 1), oz = rng.uniform(-1, 1);
        double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
        double n = std::sqrt(dx * dx + dy * dy + dz * dz);
        dx /= n; dy /= n; dz /= n;
        double prev = w.phi(ox, oy, oz);
        const double step = 0.03;
        for (int s = 1; s <= 40; ++s) {
          double cur = w.phi(ox + s * step * dx, oy + s * step * dy, oz + s * step * dz);
          REQUIRE(std::abs(cur - prev) <= step + 1e-6);
          prev = cur;
        }
      }
    }
  }
  SECTION("world SDF gradients match finite differences (query and pose)") {
    Rng rng(321);
    ObjectTemplate box = make_primitive_template("b", SdfKind::Box, {0.25, 0.4, 0.3});
    for (int trial = 0; trial < 10; ++trial) {
      Tensor rot6 = random_rot6d(rng);
      Tensor trans = Tensor::randn({3}, rng, 0.3);
      Tensor queries = Tensor::randn({5, 3}, rng, 0.5);
      Tensor w = Tensor::randn({5}, rng);

      Tape tape;
      Var r6 = tape.leaf(rot6);
      Var tr = tape.leaf(trans);
      Var q = tape.leaf(queries);
      Var R = reshape(rot6d_rows_to_matrices(reshape(r6, {1, 6})), {3, 3});
      Var phi = sdf_rows(tape, box, R, reshape(tr, {1, 3}), q);
      Var root = sum(mul(reshape(phi, {5}), tape.constant(w)));
      GradMap g = tape.backward(root);

      auto eval = [&](const Tensor& r6t, const Tensor& trt, const Tensor& qt) {
        Tape t2(false);
        Var Rv = reshape(rot6d_rows_to_matrices(t2.constant(r6t.reshaped({1, 6}))), {3, 3});
        Var p = sdf_rows(t2, box, Rv, t2.constant(trt.reshaped({1, 3})), t2.constant(qt));
        double s = 0;
        for (int i = 0; i < 5; ++i) s += p.val()[i] * w[i];
        return s;
      };
      Tensor fd_q = finite_diff_grad([&](const Tensor& t) { return eval(rot6, trans, t); },
                                     queries, 1e-6);
      Tensor fd_t = finite_diff_grad([&](const Tensor& t) { return eval(rot6, t, queries); },
                                     trans, 1e-6);
      Tensor fd_r = finite_diff_grad([&](const Tensor& t) { return eval(t, trans, queries); },
                                     rot6, 1e-6);
      REQUIRE(grad_close(g.get(q), fd_q, 2e-4));
      REQUIRE(grad_close(g.get(tr), fd_t, 2e-4));
      REQUIRE(grad_close(g.get(r6), fd_r, 2e-4));
    }
  }

  SECTION("registry save/load round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "hoiopt_tpl_test";
    fs::remove_all(dir);
    TemplateRegistry reg = TemplateRegistry::defaults();
    reg.save_dir(dir);
    TemplateRegistry loaded = TemplateRegistry::load_dir(dir);
    REQUIRE(loaded.size() == reg.size());
    for (auto& [id, t] : reg.all()) {
      const ObjectTemplate& l = loaded.get(id);
      REQUIRE(l.sdf_kind == t.sdf_kind);
      REQUIRE(max_abs_diff(l.mesh_vertices, t.mesh_vertices) < 1e-15);
      REQUIRE(max_abs_diff(l.coarse_points, t.coarse_points) < 1e-15);
      REQUIRE(l.faces == t.faces);
    }
    REQUIRE_THROWS_AS(loaded.get("nope"), Error);
    fs::remove_all(dir);
  }
}
