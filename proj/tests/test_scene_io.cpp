#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "hoiopt/metrics.hpp"
#include "hoiopt/scene.hpp"

using namespace hoiopt;
namespace fs = std::filesystem;

namespace {

const BodyModel& body() {
  static BodyModel b = build_mini_body();
  return b;
}

const TemplateRegistry& registry() {
  static TemplateRegistry r = TemplateRegistry::defaults();
  return r;
}

}  // namespace

TEST_CASE("scene sampling") {
  SECTION("same seed twice gives an identical scene") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::CarryBox;
    Scene a = sample_scene(spec, 77, body(), registry());
    Scene b = sample_scene(spec, 77, body(), registry());
    REQUIRE(max_abs_diff(a.gt.flat, b.gt.flat) == 0.0);
    REQUIRE(max_abs_diff(a.init.flat, b.init.flat) == 0.0);
    REQUIRE(max_abs_diff(a.observation, b.observation) == 0.0);
  }

  SECTION("noiseless limit: init equals gt, observation is clean") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::StandNear;
    spec.pose_jitter_sigma = 0.0;  // jitter stays: it shapes gt, not the noise model
    spec.sigma_init_joint = 0.0;
    spec.sigma_init_rot_deg = 0.0;
    spec.sigma_init_trans = 0.0;
    spec.sigma_init_beta = 0.0;
    spec.sigma_obs = 0.0;
    Scene s = sample_scene(spec, 5, body(), registry());
    REQUIRE(max_abs_diff(s.init.flat, s.gt.flat) == 0.0);
    PoseParams p = unflatten(s.gt);
    auto [v, joints] = lbs_forward_plain(body(), p.theta, p.beta);
    for (int64_t k = 0; k < body().joint_count(); ++k)
      for (int d = 0; d < 3; ++d)
        REQUIRE(s.observation[k * 3 + d] == joints.at(k, d));
    for (int d = 0; d < 3; ++d)
      REQUIRE(s.observation[body().joint_count() * 3 + d] == p.trans_o[d]);
  }

  SECTION("generated ground truths satisfy the physical invariants") {
    for (ScenarioKind kind : {ScenarioKind::SitOnBox, ScenarioKind::CarryBox,
                              ScenarioKind::LiftSphere, ScenarioKind::LeanOnCylinder,
                              ScenarioKind::StandNear}) {
      ScenarioSpec spec;
      spec.kind = kind;
      for (uint64_t seed : {1ull, 2ull, 3ull}) {
        Scene s = sample_scene(spec, seed, body(), registry());
        PoseParams p = unflatten(s.gt);
        auto [vh, joints] = lbs_forward_plain(body(), p.theta, p.beta);
        const ObjectTemplate& tmpl = registry().get(s.template_id);
        WorldSdf sdf = make_world_sdf(tmpl, p.rot_o, p.trans_o);
        Tape t(false);
        Tensor vo = object_forward(t, tmpl, t.constant(p.rot_o), t.constant(p.trans_o))
                        .vertices.val();
        ContactMasks masks = predict_contact_masks(vh, vo, sdf);

        INFO(scenario_name(kind) << " seed " << seed);
        REQUIRE(loss_pt_plain(vh, sdf) < 1e-4);
        if (spec.has_contact())
          REQUIRE(masks.count_h() >= 5);
        else
          REQUIRE(masks.count_h() == 0);
        if (spec.floor_supported()) REQUIRE(loss_of_plain(vo, masks) < 1e-4);
        for (int i = 0; i < 10; ++i) {
          REQUIRE(p.beta[i] >= -1.0);
          REQUIRE(p.beta[i] <= 1.0);
        }
      }
    }
  }

  SECTION("expected init-gt distance grows with the joint noise scale") {
    double prev = -1.0;
    for (double sigma : {0.02, 0.15, 0.40}) {
      double acc = 0;
      int n = 0;
      for (uint64_t seed = 1; seed <= 8; ++seed) {
        ScenarioSpec spec;
        spec.kind = ScenarioKind::CarryBox;
        spec.sigma_init_joint = sigma;
        Scene s = sample_scene(spec, seed, body(), registry());
        std::vector<double> d(static_cast<size_t>(s.gt.flat.numel()));
        for (int64_t i = 0; i < s.gt.flat.numel(); ++i)
          d[static_cast<size_t>(i)] = s.init.flat[i] - s.gt.flat[i];
        acc += l2_norm(Tensor({s.gt.flat.numel()}, std::move(d)));
        ++n;
      }
      double mean = acc / n;
      REQUIRE(mean > prev);
      prev = mean;
    }
  }

  SECTION("initial contact F-score lands in a useful band") {
    std::vector<EvalReport> reports;
    for (ScenarioKind kind : {ScenarioKind::SitOnBox, ScenarioKind::CarryBox,
                              ScenarioKind::LiftSphere, ScenarioKind::LeanOnCylinder}) {
      ScenarioSpec spec;
      spec.kind = kind;
      for (uint64_t seed = 10; seed < 16; ++seed) {
        Scene s = sample_scene(spec, seed, body(), registry());
        SceneModels models{&body(), &registry().get(s.template_id)};
        reports.push_back(evaluate_scene(s.init, s.gt, models));
      }
    }
    EvalReport med = median_report(reports);
    INFO("median initial contact F " << med.contact_f);
    REQUIRE(med.contact_f > 0.30);
    REQUIRE(med.contact_f < 0.70);
  }
}

TEST_CASE("scene JSON round trip") {
  ScenarioSpec spec;
  spec.kind = ScenarioKind::LeanOnCylinder;
  Scene s = sample_scene(spec, 99, body(), registry());
  s.id = "scene_test";
  fs::path path = fs::temp_directory_path() / "hoiopt_scene_test.json";
  save_scene(s, path);
  Scene r = load_scene(path);
  REQUIRE(r.id == s.id);
  REQUIRE(r.scenario == s.scenario);
  REQUIRE(r.template_id == s.template_id);
  REQUIRE(r.seed == s.seed);
  REQUIRE(r.gt.layout == s.gt.layout);
  REQUIRE(max_abs_diff(r.gt.flat, s.gt.flat) == 0.0);
  REQUIRE(max_abs_diff(r.init.flat, s.init.flat) == 0.0);
  REQUIRE(max_abs_diff(r.observation, s.observation) == 0.0);

  SECTION("bad JSON and version errors") {
    std::ofstream f(path);
    f << "{ not json";
    f.close();
    REQUIRE_THROWS_AS(load_scene(path), Error);
    std::ofstream g(path);
    g << "{\"format_version\": 99}";
    g.close();
    REQUIRE_THROWS_AS(load_scene(path), Error);
  }
  fs::remove(path);
}

TEST_CASE("dataset generation") {
  fs::path dir = fs::temp_directory_path() / "hoiopt_ds_test";
  fs::remove_all(dir);
  DatasetCounts counts{8, 3, 3};
  auto specs = default_scenarios();
  auto manifest = make_dataset(specs, counts, 1234, dir, body(), registry());

  SECTION("manifest totals match the files on disk") {
    for (auto& [name, want] : {std::pair<std::string, int64_t>{"train", 8},
                               {"val", 3},
                               {"test", 3}}) {
      int64_t files = 0;
      for (auto& e : fs::directory_iterator(dir / name)) {
        (void)e;
        ++files;
      }
      REQUIRE(files == want);
      REQUIRE(manifest["splits"][name]["count"].get<int64_t>() == want);
    }
  }

  SECTION("regeneration is bitwise identical") {
    fs::path dir2 = fs::temp_directory_path() / "hoiopt_ds_test2";
    fs::remove_all(dir2);
    auto manifest2 = make_dataset(specs, counts, 1234, dir2, body(), registry());
    REQUIRE(manifest2["splits"]["train"]["content_hash"] ==
            manifest["splits"]["train"]["content_hash"]);
    for (const char* split : {"train", "val", "test"})
      for (auto& e : fs::directory_iterator(dir / split)) {
        std::ifstream a(e.path()), b(dir2 / split / e.path().filename());
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        REQUIRE(sa == sb);
      }
    fs::remove_all(dir2);
  }

  SECTION("split seeds are pairwise disjoint") {
    std::set<uint64_t> seen;
    for (const char* split : {"train", "val", "test"}) {
      auto scenes = load_scene_dir(dir / split);
      for (auto& s : scenes) {
        REQUIRE(seen.count(s.seed) == 0);
        seen.insert(s.seed);
      }
    }
  }

  SECTION("loading the split returns ordered scenes") {
    auto scenes = load_scene_dir(dir / "train");
    REQUIRE(scenes.size() == 8);
    REQUIRE(scenes[0].id == "scene_00000");
    REQUIRE(scenes[7].id == "scene_00007");
  }
  fs::remove_all(dir);
}

TEST_CASE("OBJ export") {
  fs::path path = fs::temp_directory_path() / "hoiopt_obj_test.obj";
  SECTION("unit triangle produces 3 v records and 1 f record") {
    Tensor v({3, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0});
    export_obj(v, {{0, 1, 2}}, path, "tri");
    std::ifstream is(path);
    int nv = 0, nf = 0, ng = 0;
    std::string line;
    while (std::getline(is, line)) {
      if (line.rfind("v ", 0) == 0) ++nv;
      if (line.rfind("f ", 0) == 0) ++nf;
      if (line.rfind("g ", 0) == 0) ++ng;
    }
    REQUIRE(nv == 3);
    REQUIRE(nf == 1);
    REQUIRE(ng == 1);
  }
  SECTION("round trip preserves vertices exactly") {
    Rng rng(6);
    Tensor v = Tensor::randn({20, 3}, rng);
    std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {3, 4, 5}, {10, 12, 19}};
    export_obj(v, faces, path);
    ParsedObj p = parse_obj(path);
    REQUIRE(max_abs_diff(p.verts, v) == 0.0);
    REQUIRE(p.faces == faces);
  }
  SECTION("invalid face index is an error") {
    Tensor v({3, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0});
    REQUIRE_THROWS_AS(export_obj(v, {{0, 1, 7}}, path), Error);
  }
  SECTION("posed scene export carries human and object groups") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::SitOnBox;
    Scene s = sample_scene(spec, 11, body(), registry());
    export_scene_obj(s, body(), registry(), s.gt, path);
    ParsedObj p = parse_obj(path);
    REQUIRE(p.groups == std::vector<std::string>{"human", "object"});
    REQUIRE(p.verts.rows() ==
            body().vertex_count() + registry().get(s.template_id).mesh_vertices.rows());
  }
  fs::remove(path);
}
