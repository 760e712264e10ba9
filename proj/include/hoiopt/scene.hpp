#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "hoiopt/ddim.hpp"
#include "hoiopt/physics.hpp"

namespace hoiopt {

inline constexpr int kSceneFormatVersion = 1;

/// One synthetic scene: ground-truth parameters, the object template it
/// references, a noisy observation vector, a perturbed initial estimate and
/// the seed it was generated from.
struct Scene {
  std::string id;
  std::string scenario;
  std::string template_id;
  uint64_t seed = 0;
  ParamVector gt;
  ParamVector init;
  Tensor observation;
};

enum class ScenarioKind { SitOnBox, CarryBox, LiftSphere, LeanOnCylinder, StandNear };

inline std::string scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::SitOnBox: return "sit-on-box";
    case ScenarioKind::CarryBox: return "carry-box";
    case ScenarioKind::LiftSphere: return "lift-sphere";
    case ScenarioKind::LeanOnCylinder: return "lean-on-cylinder";
    case ScenarioKind::StandNear: return "stand-near";
  }
  return "?";
}

inline ScenarioKind scenario_from_name(const std::string& s) {
  if (s == "sit-on-box") return ScenarioKind::SitOnBox;
  if (s == "carry-box") return ScenarioKind::CarryBox;
  if (s == "lift-sphere") return ScenarioKind::LiftSphere;
  if (s == "lean-on-cylinder") return ScenarioKind::LeanOnCylinder;
  if (s == "stand-near") return ScenarioKind::StandNear;
  fail_config("unknown scenario '" + s + "'");
}

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::SitOnBox;
  double pose_jitter_sigma = 0.08;   // radians, applied to non-load-bearing joints
  double sigma_init_joint = 0.15;    // radians, initial-estimate joint noise
  double sigma_init_rot_deg = 10.0;  // degrees, initial object rotation noise
  double sigma_init_trans = 0.0577;  // meters per axis (~10 cm expected norm)
  double sigma_init_beta = 0.1;
  double sigma_obs = 0.03;  // meters, observation noise

  bool floor_supported() const {
    return kind == ScenarioKind::SitOnBox || kind == ScenarioKind::LeanOnCylinder ||
           kind == ScenarioKind::StandNear;
  }
  bool has_contact() const { return kind != ScenarioKind::StandNear; }

  std::string template_id() const {
    switch (kind) {
      case ScenarioKind::SitOnBox: return "box_seat";
      case ScenarioKind::CarryBox: return "crate";
      case ScenarioKind::LiftSphere: return "ball";
      case ScenarioKind::LeanOnCylinder: return "pillar";
      case ScenarioKind::StandNear: return "crate";
    }
    return "";
  }
};

inline std::vector<ScenarioSpec> default_scenarios() {
  std::vector<ScenarioSpec> out;
  for (ScenarioKind k : {ScenarioKind::SitOnBox, ScenarioKind::CarryBox, ScenarioKind::LiftSphere,
                         ScenarioKind::LeanOnCylinder, ScenarioKind::StandNear}) {
    ScenarioSpec s;
    s.kind = k;
    out.push_back(s);
  }
  return out;
}

namespace scenegen {

using minibody::Joint;

inline Tensor theta_identity(int64_t k) {
  std::vector<double> d;
  for (int64_t i = 0; i < k; ++i) {
    d.insert(d.end(), {1, 0, 0, 0, 1, 0});
  }
  return Tensor({k, 6}, std::move(d));
}

inline void set_joint(Tensor& theta, int joint, const Tensor& rot3x3) {
  std::vector<double> d(theta.vec());
  Tensor r6 = rot6d_from_matrix(rot3x3);
  for (int j = 0; j < 6; ++j) d[static_cast<size_t>(joint * 6 + j)] = r6[j];
  theta = Tensor(theta.shape(), std::move(d));
}

inline Tensor get_joint(const Tensor& theta, int joint) {
  std::vector<double> d(6);
  for (int j = 0; j < 6; ++j) d[static_cast<size_t>(j)] = theta.at(joint, j);
  return Tensor({6}, std::move(d));
}

inline void perturb_joint(Tensor& theta, int joint, Rng& rng, double sigma) {
  if (sigma <= 0.0) return;
  Tensor base = rot6d_to_matrix(get_joint(theta, joint));
  double angle = rng.normal(0.0, sigma);
  Tensor delta = axis_angle_matrix(rng.normal(), rng.normal(), rng.normal(), angle);
  set_joint(theta, joint, mat3_mul(base, delta));
}

/// Numerical outward direction of the object SDF at a point.
inline std::array<double, 3> sdf_gradient(const WorldSdf& sdf, double x, double y, double z,
                                          double h = 1e-5) {
  return {(sdf.phi(x + h, y, z) - sdf.phi(x - h, y, z)) / (2 * h),
          (sdf.phi(x, y + h, z) - sdf.phi(x, y - h, z)) / (2 * h),
          (sdf.phi(x, y, z + h) - sdf.phi(x, y, z - h)) / (2 * h)};
}

/// Moves the object until the closest focus vertex sits within [0, 1 cm] of
/// its surface and no body vertex penetrates: penetration is pushed out
/// along the outward SDF direction at the deepest vertex, gaps are closed by
/// the reverse move at the closest focus vertex. `horizontal_only` preserves
/// floor support. Returns false if it fails to converge in 100 steps.
inline bool snap_to_contact(const Tensor& v_h, const ObjectTemplate& tmpl, const Tensor& rot6,
                            Tensor& trans, bool horizontal_only,
                            const std::vector<int64_t>& focus_verts) {
  const double gap_hi = 0.01;
  for (int iter = 0; iter < 100; ++iter) {
    WorldSdf sdf = make_world_sdf(tmpl, rot6, trans);
    double pen_min = 1e30;
    int64_t pen_arg = -1;
    for (int64_t i = 0; i < v_h.rows(); ++i) {
      double phi = sdf.phi(v_h.at(i, 0), v_h.at(i, 1), v_h.at(i, 2));
      if (phi < pen_min) {
        pen_min = phi;
        pen_arg = i;
      }
    }
    double focus_min = 1e30;
    int64_t focus_arg = -1;
    for (int64_t i : focus_verts) {
      double phi = sdf.phi(v_h.at(i, 0), v_h.at(i, 1), v_h.at(i, 2));
      if (phi < focus_min) {
        focus_min = phi;
        focus_arg = i;
      }
    }
    if (pen_min >= 0.0 && focus_min <= gap_hi) return true;

    // resolve penetration first, then close the contact gap
    int64_t arg = pen_min < 0.0 ? pen_arg : focus_arg;
    double step = pen_min < 0.0 ? -pen_min + 5e-4 : -(focus_min - 0.5 * gap_hi);
    auto g = sdf_gradient(sdf, v_h.at(arg, 0), v_h.at(arg, 1), v_h.at(arg, 2));
    if (horizontal_only) g[1] = 0.0;
    double gn = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (gn < 1e-9) return false;
    // moving the object by delta changes phi at a fixed point by -grad . delta
    trans = Tensor({3}, {trans[0] - step * g[0] / gn, trans[1] - step * g[1] / gn,
                         trans[2] - step * g[2] / gn});
  }
  return false;
}

/// Lowest surface point of the posed object, used to rest it on the floor.
inline double object_min_y(const ObjectTemplate& tmpl, const Tensor& rot6, const Tensor& trans) {
  Tape t(false);
  Tensor v = object_forward(t, tmpl, t.constant(rot6), t.constant(trans)).vertices.val();
  double m = 1e30;
  for (int64_t i = 0; i < v.rows(); ++i) m = std::min(m, v.at(i, 1));
  return m;
}

}  // namespace scenegen

/// Deterministic scene synthesis for one scenario. Poses the body from a
/// per-kind base pose plus jitter, places the object against the target body
/// part with the push-out snap (floor-supported kinds keep the object
/// resting on y=0), then derives the observation vector and the perturbed
/// initial estimate. Retries with follow-up seeds when the snap fails, and
/// errors after 10 attempts.
inline Scene sample_scene(const ScenarioSpec& spec, uint64_t seed, const BodyModel& body,
                          const TemplateRegistry& registry);

namespace scenegen {

struct PosedBody {
  Tensor theta;
  Tensor beta;
  Tensor verts;
  Tensor joints;
};

inline PosedBody pose_body(const BodyModel& body, const ScenarioSpec& spec, Rng& rng) {
  using minibody::Joint;
  const int64_t K = body.joint_count();
  Tensor theta = theta_identity(K);
  // raw shape coefficients live in [-3,3]; the stored beta is that divided by 3
  std::vector<double> beta(10);
  for (auto& b : beta) b = std::clamp(rng.normal(0.0, 0.7), -3.0, 3.0) / 3.0;

  auto rx = [](double a) { return axis_angle_matrix(1, 0, 0, a); };
  auto ry = [](double a) { return axis_angle_matrix(0, 1, 0, a); };
  auto rz = [](double a) { return axis_angle_matrix(0, 0, 1, a); };

  switch (spec.kind) {
    case ScenarioKind::SitOnBox:
      // hip pitch set later by the seat solve; knees bent to hang the shanks
      set_joint(theta, Joint::kHipL, rx(-M_PI / 2));
      set_joint(theta, Joint::kHipR, rx(-M_PI / 2));
      set_joint(theta, Joint::kKneeL, rx(M_PI / 2));
      set_joint(theta, Joint::kKneeR, rx(M_PI / 2));
      set_joint(theta, Joint::kShoulderL, rz(rng.uniform(-0.45, -0.15)));
      set_joint(theta, Joint::kShoulderR, rz(rng.uniform(0.15, 0.45)));
      break;
    case ScenarioKind::CarryBox:
      set_joint(theta, Joint::kShoulderL, ry(-M_PI / 2));
      set_joint(theta, Joint::kShoulderR, ry(M_PI / 2));
      break;
    case ScenarioKind::LiftSphere:
      set_joint(theta, Joint::kShoulderL, mat3_mul(rx(-M_PI / 4), ry(-M_PI / 2)));
      set_joint(theta, Joint::kShoulderR, mat3_mul(rx(-M_PI / 4), ry(M_PI / 2)));
      break;
    case ScenarioKind::LeanOnCylinder:
      set_joint(theta, Joint::kShoulderL, rz(rng.uniform(-0.75, -0.45)));
      set_joint(theta, Joint::kShoulderR, rz(rng.uniform(0.3, 0.6)));
      break;
    case ScenarioKind::StandNear:
      set_joint(theta, Joint::kShoulderL, rz(rng.uniform(-0.6, -0.1)));
      set_joint(theta, Joint::kShoulderR, rz(rng.uniform(0.1, 0.6)));
      break;
  }

  // jitter the joints that do not carry the contact placement
  std::vector<int> jitter_joints = {Joint::kSpine1, Joint::kSpine2, Joint::kNeck,
                                    Joint::kElbowL, Joint::kElbowR, Joint::kWristL,
                                    Joint::kWristR};
  if (spec.kind == ScenarioKind::StandNear || spec.kind == ScenarioKind::CarryBox) {
    jitter_joints.push_back(Joint::kHipL);
    jitter_joints.push_back(Joint::kHipR);
    jitter_joints.push_back(Joint::kKneeL);
    jitter_joints.push_back(Joint::kKneeR);
  }
  if (spec.kind == ScenarioKind::CarryBox || spec.kind == ScenarioKind::LiftSphere) {
    // keep wrists steady so the object sits against the hands
    jitter_joints.erase(std::remove(jitter_joints.begin(), jitter_joints.end(),
                                    static_cast<int>(Joint::kWristL)),
                        jitter_joints.end());
    jitter_joints.erase(std::remove(jitter_joints.begin(), jitter_joints.end(),
                                    static_cast<int>(Joint::kWristR)),
                        jitter_joints.end());
  }
  for (int j : jitter_joints) perturb_joint(theta, j, rng, spec.pose_jitter_sigma);
  // small yaw of the whole body
  set_joint(theta, Joint::kPelvis, ry(rng.uniform(-0.3, 0.3)));

  PosedBody out;
  out.theta = theta;
  out.beta = Tensor({10}, std::move(beta));
  auto [v, j] = lbs_forward_plain(body, out.theta, out.beta);
  out.verts = v;
  out.joints = j;
  return out;
}

/// Vertices of the body parts an object should rest against.
inline std::vector<int64_t> focus_vertices(const Tensor& verts,
                                           const Tensor& joints, ScenarioKind kind) {
  std::vector<int64_t> out;
  using minibody::Joint;
  auto near_joint = [&](int joint, double radius) {
    for (int64_t i = 0; i < verts.rows(); ++i) {
      double dx = verts.at(i, 0) - joints.at(joint, 0);
      double dy = verts.at(i, 1) - joints.at(joint, 1);
      double dz = verts.at(i, 2) - joints.at(joint, 2);
      if (dx * dx + dy * dy + dz * dz < radius * radius) out.push_back(i);
    }
  };
  switch (kind) {
    case ScenarioKind::SitOnBox:
      near_joint(Joint::kHipL, 0.28);
      near_joint(Joint::kHipR, 0.28);
      break;
    case ScenarioKind::CarryBox:
    case ScenarioKind::LiftSphere:
      near_joint(Joint::kWristL, 0.16);
      near_joint(Joint::kWristR, 0.16);
      break;
    case ScenarioKind::LeanOnCylinder:
      near_joint(Joint::kWristL, 0.14);
      break;
    case ScenarioKind::StandNear:
      break;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace scenegen

inline Scene sample_scene(const ScenarioSpec& spec, uint64_t seed, const BodyModel& body,
                          const TemplateRegistry& registry) {
  using namespace scenegen;
  using minibody::Joint;
  const ObjectTemplate& tmpl = registry.get(spec.template_id());
  const ParamLayout layout = body.layout();

  for (int attempt = 0; attempt < 10; ++attempt) {
    uint64_t attempt_seed = attempt == 0 ? seed : Rng::derive(seed, "resample",
                                                              static_cast<uint64_t>(attempt));
    Rng rng(Rng::derive(attempt_seed, "scene"));
    PosedBody posed = pose_body(body, spec, rng);

    Tensor rot6 = rot6d_from_matrix(axis_angle_matrix(0, 1, 0, rng.uniform(-M_PI, M_PI)));
    Tensor trans = Tensor::zeros({3});
    bool ok = true;

    switch (spec.kind) {
      case ScenarioKind::SitOnBox: {
        // Solve the hip pitch so the underside of the thighs meets the seat
        // top. The thigh-region minimum height rises with the pitch on
        // [60, 95] degrees (the legs swing from hanging to horizontal), so a
        // bisection on that rising branch lands the contact; the knees follow
        // the hips to keep the shanks vertical and clear of the seat.
        double seat_top = tmpl.sdf_params[1] - object_min_y(tmpl, rot6, Tensor::zeros({3}));
        double lo = M_PI / 3, hi = 1.66;
        Tensor theta = posed.theta;
        auto thigh_bottom = [&](double alpha) {
          set_joint(theta, Joint::kHipL, axis_angle_matrix(1, 0, 0, -alpha));
          set_joint(theta, Joint::kHipR, axis_angle_matrix(1, 0, 0, -alpha));
          set_joint(theta, Joint::kKneeL, axis_angle_matrix(1, 0, 0, alpha));
          set_joint(theta, Joint::kKneeR, axis_angle_matrix(1, 0, 0, alpha));
          auto [v, j] = lbs_forward_plain(body, theta, posed.beta);
          double m = 1e30;
          for (int64_t i : focus_vertices(v, j, spec.kind)) m = std::min(m, v.at(i, 1));
          return m;
        };
        double target = seat_top + 0.003;
        if (thigh_bottom(lo) > target || thigh_bottom(hi) < target) {
          ok = false;
          break;
        }
        for (int it = 0; it < 48; ++it) {
          double mid = 0.5 * (lo + hi);
          (thigh_bottom(mid) < target ? lo : hi) = mid;
        }
        thigh_bottom(0.5 * (lo + hi));
        posed.theta = theta;
        auto [v, j] = lbs_forward_plain(body, posed.theta, posed.beta);
        posed.verts = v;
        posed.joints = j;
        // seat under the thighs, biased toward the hips, resting on the floor
        auto focus = focus_vertices(posed.verts, posed.joints, spec.kind);
        double mid_z = 0.0;
        for (int64_t i : focus) mid_z += posed.verts.at(i, 2);
        mid_z = mid_z / static_cast<double>(focus.size()) - 0.03;
        double rest_y = -object_min_y(tmpl, rot6, Tensor::zeros({3}));
        trans = Tensor({3}, {0.0, rest_y, mid_z});
        ok = snap_to_contact(posed.verts, tmpl, rot6, trans, /*horizontal_only=*/true, focus);
        break;
      }
      case ScenarioKind::CarryBox:
      case ScenarioKind::LiftSphere: {
        auto focus = focus_vertices(posed.verts, posed.joints, spec.kind);
        double cx = 0, cy = 0, cz = 0;
        for (int64_t i : focus) {
          cx += posed.verts.at(i, 0);
          cy += posed.verts.at(i, 1);
          cz += posed.verts.at(i, 2);
        }
        double n = static_cast<double>(focus.size());
        cx /= n; cy /= n; cz /= n;
        // start just beyond the hands, outward from the torso
        double out_z = spec.kind == ScenarioKind::CarryBox ? 0.22 : 0.18;
        double drop = spec.kind == ScenarioKind::CarryBox ? -0.10 : 0.02;
        trans = Tensor({3}, {cx, cy + drop, cz + out_z});
        ok = snap_to_contact(posed.verts, tmpl, rot6, trans, /*horizontal_only=*/false, focus);
        break;
      }
      case ScenarioKind::LeanOnCylinder: {
        auto focus = focus_vertices(posed.verts, posed.joints, spec.kind);
        double hx = posed.joints.at(Joint::kWristL, 0);
        double hz = posed.joints.at(Joint::kWristL, 2);
        double ground = -object_min_y(tmpl, rot6, Tensor::zeros({3}));
        trans = Tensor({3}, {hx + 0.30, ground, hz});
        ok = snap_to_contact(posed.verts, tmpl, rot6, trans, /*horizontal_only=*/true, focus);
        break;
      }
      case ScenarioKind::StandNear: {
        double ang = rng.uniform(0, 2 * M_PI), dist = rng.uniform(1.3, 2.0);
        double ground = -object_min_y(tmpl, rot6, Tensor::zeros({3}));
        trans = Tensor({3}, {dist * std::cos(ang), ground, dist * std::sin(ang)});
        ok = true;
        break;
      }
    }
    if (!ok) continue;

    // ground-truth sanity: penetration, floor rest, contact support
    PoseParams gt;
    gt.theta = posed.theta;
    gt.beta = posed.beta;
    gt.rot_o = rot6;
    gt.trans_o = trans;
    ParamVector gt_flat = flatten(gt, layout);
    WorldSdf sdf = make_world_sdf(tmpl, rot6, trans);
    if (loss_pt_plain(posed.verts, sdf) >= 1e-4) continue;
    Tape tp(false);
    Tensor v_o = object_forward(tp, tmpl, tp.constant(rot6), tp.constant(trans)).vertices.val();
    ContactMasks masks = predict_contact_masks(posed.verts, v_o, sdf);
    if (spec.has_contact() && masks.count_h() < 5) continue;
    if (spec.floor_supported()) {
      if (loss_of_plain(v_o, masks) >= 1e-4) continue;
    }
    if (!spec.has_contact() && masks.count_h() > 0) continue;

    // observation: noisy posed joints + noisy object center + the noise scale
    Rng obs_rng(Rng::derive(attempt_seed, "obs"));
    std::vector<double> obs;
    obs.reserve(static_cast<size_t>(body.joint_count() * 3 + 4));
    for (int64_t k = 0; k < body.joint_count(); ++k)
      for (int64_t d = 0; d < 3; ++d)
        obs.push_back(posed.joints.at(k, d) + obs_rng.normal(0.0, spec.sigma_obs));
    for (int64_t d = 0; d < 3; ++d) obs.push_back(trans[d] + obs_rng.normal(0.0, spec.sigma_obs));
    obs.push_back(spec.sigma_obs);

    // structured initial-estimate perturbation
    Rng init_rng(Rng::derive(attempt_seed, "init"));
    PoseParams init = gt;
    Tensor theta_init = gt.theta;
    for (int64_t k = 0; k < body.joint_count(); ++k)
      perturb_joint(theta_init, static_cast<int>(k), init_rng, spec.sigma_init_joint);
    init.theta = theta_init;
    std::vector<double> beta_init(10);
    for (int i = 0; i < 10; ++i)
      beta_init[static_cast<size_t>(i)] =
          std::clamp(gt.beta[i] + init_rng.normal(0.0, spec.sigma_init_beta), -1.0, 1.0);
    init.beta = Tensor({10}, std::move(beta_init));
    if (spec.sigma_init_rot_deg > 0.0) {
      double rot_noise = init_rng.normal(0.0, spec.sigma_init_rot_deg * M_PI / 180.0);
      Tensor axis_rot = axis_angle_matrix(init_rng.normal(), init_rng.normal(), init_rng.normal(),
                                          rot_noise);
      init.rot_o = rot6d_from_matrix(mat3_mul(rot6d_to_matrix(gt.rot_o), axis_rot));
    }
    init.trans_o = Tensor({3}, {gt.trans_o[0] + init_rng.normal(0.0, spec.sigma_init_trans),
                                gt.trans_o[1] + init_rng.normal(0.0, spec.sigma_init_trans),
                                gt.trans_o[2] + init_rng.normal(0.0, spec.sigma_init_trans)});

    Scene scene;
    scene.scenario = scenario_name(spec.kind);
    scene.template_id = tmpl.id;
    scene.seed = seed;
    scene.gt = gt_flat;
    scene.init = flatten(init, layout);
    int64_t obs_n = static_cast<int64_t>(obs.size());
    scene.observation = Tensor({obs_n}, std::move(obs));
    return scene;
  }
  fail_numeric("sample_scene: failed to build a valid '" + scenario_name(spec.kind) +
               "' scene from seed " + std::to_string(seed) + " after 10 attempts");
}

// ---------------------------------------------------------------------------
// JSON serialization (versioned, exact round trip)

inline nlohmann::ordered_json scene_to_json(const Scene& s) {
  nlohmann::ordered_json j;
  j["format_version"] = kSceneFormatVersion;
  j["id"] = s.id;
  j["scenario"] = s.scenario;
  j["template_id"] = s.template_id;
  j["seed"] = s.seed;
  j["joints"] = s.gt.layout.joints;
  j["gt"] = s.gt.flat.vec();
  j["init"] = s.init.flat.vec();
  j["observation"] = s.observation.vec();
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j["format_version"].get<int>() != kSceneFormatVersion)
    fail_data("scene: missing or unsupported format_version");
  Scene s;
  s.id = j.value("id", "");
  s.scenario = j.at("scenario").get<std::string>();
  s.template_id = j.at("template_id").get<std::string>();
  s.seed = j.at("seed").get<uint64_t>();
  ParamLayout layout{j.at("joints").get<int64_t>()};
  auto grab = [&](const char* key) {
    std::vector<double> v = j.at(key).get<std::vector<double>>();
    int64_t n = static_cast<int64_t>(v.size());
    return Tensor({n}, std::move(v));
  };
  s.gt = ParamVector(grab("gt"), layout);
  s.init = ParamVector(grab("init"), layout);
  s.observation = grab("observation");
  return s;
}

inline void save_scene(const Scene& s, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) fail_data("save_scene: cannot write " + path.string());
  f << scene_to_json(s).dump(1) << "\n";
}

inline Scene load_scene(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail_data("load_scene: cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    fail_data("load_scene: bad JSON in " + path.string() + ": " + e.what());
  }
  Scene s = scene_from_json(j);
  if (s.id.empty()) s.id = path.stem().string();
  return s;
}

// ---------------------------------------------------------------------------
// dataset generation with manifest

struct DatasetCounts {
  int64_t train = 1000;
  int64_t val = 100;
  int64_t test = 100;
};

inline uint64_t fnv1a_file(const std::filesystem::path& p, uint64_t h = 0xcbf29ce484222325ULL) {
  std::ifstream f(p, std::ios::binary);
  char c;
  while (f.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Writes train/val/test scene files plus a manifest recording the specs,
/// counts, per-split seed scheme and content hashes. Regeneration from the
/// same arguments is bitwise identical.
inline nlohmann::ordered_json make_dataset(const std::vector<ScenarioSpec>& specs,
                                           const DatasetCounts& counts, uint64_t seed,
                                           const std::filesystem::path& outdir,
                                           const BodyModel& body,
                                           const TemplateRegistry& registry) {
  if (specs.empty()) fail_config("make_dataset: no scenario specs");
  if (counts.train < 1 || counts.val < 0 || counts.test < 0)
    fail_config("make_dataset: bad counts");
  std::filesystem::create_directories(outdir);

  nlohmann::ordered_json manifest;
  manifest["format_version"] = kSceneFormatVersion;
  manifest["seed"] = seed;
  nlohmann::ordered_json spec_list = nlohmann::ordered_json::array();
  for (const auto& s : specs) {
    nlohmann::ordered_json sj;
    sj["kind"] = scenario_name(s.kind);
    sj["pose_jitter_sigma"] = s.pose_jitter_sigma;
    sj["sigma_init_joint"] = s.sigma_init_joint;
    sj["sigma_init_rot_deg"] = s.sigma_init_rot_deg;
    sj["sigma_init_trans"] = s.sigma_init_trans;
    sj["sigma_init_beta"] = s.sigma_init_beta;
    sj["sigma_obs"] = s.sigma_obs;
    spec_list.push_back(sj);
  }
  manifest["scenarios"] = spec_list;

  nlohmann::ordered_json splits;
  auto build_split = [&](const std::string& name, int64_t count) {
    std::filesystem::create_directories(outdir / name);
    uint64_t hash = 0xcbf29ce484222325ULL;
    for (int64_t i = 0; i < count; ++i) {
      const ScenarioSpec& spec = specs[static_cast<size_t>(i) % specs.size()];
      uint64_t scene_seed = Rng::derive(seed, "split-" + name, static_cast<uint64_t>(i));
      Scene s = sample_scene(spec, scene_seed, body, registry);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "scene_%05lld", static_cast<long long>(i));
      s.id = buf;
      save_scene(s, outdir / name / (s.id + ".json"));
      hash = fnv1a_file(outdir / name / (s.id + ".json"), hash);
    }
    nlohmann::ordered_json sj;
    sj["count"] = count;
    sj["seed_tag"] = "split-" + name;
    sj["content_hash"] = hash;
    splits[name] = sj;
  };
  build_split("train", counts.train);
  build_split("val", counts.val);
  build_split("test", counts.test);
  manifest["splits"] = splits;

  std::ofstream mf(outdir / "manifest.json");
  if (!mf) fail_data("make_dataset: cannot write manifest");
  mf << manifest.dump(1) << "\n";
  return manifest;
}

inline std::vector<Scene> load_scene_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail_data("load_scene_dir: not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json" && e.path().filename() != "manifest.json")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Scene> out;
  out.reserve(files.size());
  for (auto& f : files) out.push_back(load_scene(f));
  if (out.empty()) fail_data("load_scene_dir: no scene files in " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------
// OBJ export

inline void export_obj(const Tensor& verts, const std::vector<std::array<int, 3>>& faces,
                       const std::filesystem::path& path, const std::string& group = "mesh") {
  for (auto& f : faces)
    for (int v : f)
      if (v < 0 || v >= verts.rows())
        fail_data("export_obj: face index " + std::to_string(v) + " out of range");
  std::ofstream os(path);
  if (!os) fail_data("export_obj: cannot write " + path.string());
  os.precision(17);
  os << "g " << group << "\n";
  for (int64_t i = 0; i < verts.rows(); ++i)
    os << "v " << verts.at(i, 0) << " " << verts.at(i, 1) << " " << verts.at(i, 2) << "\n";
  for (auto& f : faces) os << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

/// Posed human + object in one file, as named groups.
inline void export_scene_obj(const Scene& s, const BodyModel& body,
                             const TemplateRegistry& registry, const ParamVector& x,
                             const std::filesystem::path& path) {
  PoseParams p = unflatten(x);
  auto [vh, joints] = lbs_forward_plain(body, p.theta, p.beta);
  const ObjectTemplate& tmpl = registry.get(s.template_id);
  Tape t(false);
  Tensor vo = object_forward(t, tmpl, t.constant(p.rot_o), t.constant(p.trans_o)).vertices.val();
  std::ofstream os(path);
  if (!os) fail_data("export_scene_obj: cannot write " + path.string());
  os.precision(17);
  os << "g human\n";
  for (int64_t i = 0; i < vh.rows(); ++i)
    os << "v " << vh.at(i, 0) << " " << vh.at(i, 1) << " " << vh.at(i, 2) << "\n";
  for (auto& f : body.faces) os << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  os << "g object\n";
  for (int64_t i = 0; i < vo.rows(); ++i)
    os << "v " << vo.at(i, 0) << " " << vo.at(i, 1) << " " << vo.at(i, 2) << "\n";
  int64_t off = vh.rows();
  for (auto& f : tmpl.faces)
    os << "f " << f[0] + 1 + off << " " << f[1] + 1 + off << " " << f[2] + 1 + off << "\n";
}

struct ParsedObj {
  std::vector<std::string> groups;
  Tensor verts;
  std::vector<std::array<int, 3>> faces;
};

inline ParsedObj parse_obj(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail_data("parse_obj: cannot open " + path.string());
  ParsedObj out;
  std::vector<double> verts;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "g") {
      std::string name;
      ls >> name;
      out.groups.push_back(name);
    } else if (tag == "v") {
      double x, y, z;
      ls >> x >> y >> z;
      verts.insert(verts.end(), {x, y, z});
    } else if (tag == "f") {
      int a, b, c;
      ls >> a >> b >> c;
      out.faces.push_back({a - 1, b - 1, c - 1});
    }
  }
  int64_t n = static_cast<int64_t>(verts.size() / 3);
  out.verts = Tensor({n, 3}, std::move(verts));
  return out;
}

}  // namespace hoiopt
