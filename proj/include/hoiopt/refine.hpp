#pragma once

#include <chrono>

#include "hoiopt/ddim.hpp"
#include "hoiopt/metrics.hpp"
#include "hoiopt/scene.hpp"

namespace hoiopt {

/// Outer refinement configuration: how many mask-update/denoise rounds to
/// run and with what guidance.
struct RefineConfig {
  int64_t n_iters = 10;
  GuidedStepConfig step;      // tau, delta_t, rho, grad mode
  GuidanceWeights weights;    // lambda_ho / lambda_of / lambda_pt (+ rho mirror)
  double contact_threshold = kContactThreshold;
  bool early_stop = false;          // stop when steps stall (off by default)
  double early_stop_norm = 1e-5;

  void validate(const NoiseSchedule& sched) const {
    if (n_iters < 1) fail_config("RefineConfig: n_iters must be >= 1");
    step.validate(sched);
    weights.validate();
    if (contact_threshold <= 0) fail_config("RefineConfig: contact threshold must be positive");
  }
};

struct RefineIterRecord {
  int64_t iteration = 0;     // 0 = initial state
  Tensor x;                  // parameters entering this iteration
  PhysLosses losses;         // physical losses at x under that iteration's masks
  int64_t mask_h = 0, mask_o = 0, mask_f = 0;
  uint64_t mask_fingerprint = 0;
  double step_norm = 0.0;    // |x - previous x|
};

struct RefineTrace {
  std::vector<RefineIterRecord> records;  // n_iters + 1 entries
};

struct RefineResult {
  ParamVector x_final;
  RefineTrace trace;
};

namespace detail {

inline ContactMasks masks_of(const ParamVector& x, const SceneModels& models, double threshold) {
  PoseParams p = unflatten(x);
  auto [v_h, joints] = lbs_forward_plain(*models.body, p.theta, p.beta);
  Tape t(false);
  Tensor v_o = object_forward(t, *models.object, t.constant(p.rot_o), t.constant(p.trans_o))
                   .vertices.val();
  return predict_contact_masks(v_h, v_o, make_world_sdf(*models.object, p.rot_o, p.trans_o),
                               threshold);
}

}  // namespace detail

/// Mask-driven iterative refinement: each round re-estimates the contact
/// masks from the current parameters, inverts them to the configured noise
/// level, and runs the guided sampling loop back down with those masks held
/// fixed. Deterministic given (inputs, config, denoiser weights).
inline RefineResult refine_run(const ParamVector& x0_init, const SceneModels& models,
                               const Denoiser& den, const Conditions& conds,
                               const RefineConfig& cfg, const NoiseSchedule& sched) {
  cfg.validate(sched);
  if (!x0_init.flat.all_finite()) fail_numeric("refine_run: non-finite initial estimate");
  const ParamLayout layout = x0_init.layout;
  if (layout.joints != models.body->joint_count())
    fail_shape("refine_run: layout joints " + std::to_string(layout.joints) +
               " do not match the body model");

  RefineResult out;
  ParamVector x = x0_init;
  double last_norm = 0.0;
  int64_t stall_count = 0;
  for (int64_t n = 0; n < cfg.n_iters; ++n) {
    try {
      ContactMasks masks = detail::masks_of(x, models, cfg.contact_threshold);
      out.trace.records.push_back({n, x.flat, eval_phys_losses(x, masks, models), masks.count_h(),
                                   masks.count_o(), masks.count_f(), masks.fingerprint(),
                                   last_norm});
      GuidanceFn guidance = physics_guidance(masks, cfg.weights, models, layout,
                                             cfg.step.softmin_temperature);
      Tensor x_tau = ddim_invert(x.flat, cfg.step.tau, cfg.step.delta_t, den, conds, sched);
      Tensor x_next = ddim_sample_loop(x_tau, cfg.step.tau, cfg.step.delta_t, den, conds, sched,
                                       cfg.step.rho, guidance, layout, cfg.step.grad_mode,
                                       cfg.step.grad_max_norm);
      std::vector<double> diff(static_cast<size_t>(x.flat.numel()));
      for (int64_t i = 0; i < x.flat.numel(); ++i)
        diff[static_cast<size_t>(i)] = x_next[i] - x.flat[i];
      last_norm = l2_norm(Tensor({x.flat.numel()}, std::move(diff)));
      x = ParamVector(x_next, layout);
    } catch (const Error& e) {
      throw Error(e.kind(),
                  "refine iteration " + std::to_string(n) + ": " + std::string(e.what()));
    }
    if (cfg.early_stop) {
      stall_count = last_norm < cfg.early_stop_norm ? stall_count + 1 : 0;
      if (stall_count >= 2) break;
    }
  }
  ContactMasks masks = detail::masks_of(x, models, cfg.contact_threshold);
  out.trace.records.push_back({static_cast<int64_t>(out.trace.records.size()), x.flat,
                               eval_phys_losses(x, masks, models), masks.count_h(),
                               masks.count_o(), masks.count_f(), masks.fingerprint(), last_norm});
  out.x_final = x;
  return out;
}

/// Line-delimited trace export for plotting.
inline void write_trace_jsonl(const RefineTrace& trace, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) fail_data("write_trace_jsonl: cannot write " + path.string());
  for (const auto& r : trace.records) {
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["loss_ho"] = r.losses.ho;
    j["loss_of"] = r.losses.of;
    j["loss_pt"] = r.losses.pt;
    j["mask_h"] = r.mask_h;
    j["mask_o"] = r.mask_o;
    j["mask_f"] = r.mask_f;
    j["mask_fingerprint"] = r.mask_fingerprint;
    j["step_norm"] = r.step_norm;
    os << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// hyperparameter sweep harness

struct SweepRow {
  int64_t n_iters = 0, tau = 0, delta_t = 0;
  double rho = 0.0;
  int64_t scenes = 0, failures = 0;
  EvalReport mean;      // mean over evaluated scenes
  EvalReport median;    // median over evaluated scenes
  double wall_seconds = 0.0;
};

inline std::string sweep_csv_header() {
  return "n_iters,tau,delta_t,rho,scenes,failures,cd_human_cm,cd_object_cm,contact_p,contact_r,"
         "contact_f,median_cd_human_cm,median_cd_object_cm,median_contact_f,wall_seconds";
}

inline std::string sweep_csv_row(const SweepRow& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << r.n_iters << "," << r.tau << "," << r.delta_t << "," << r.rho << "," << r.scenes << ","
     << r.failures << "," << r.mean.cd_human << "," << r.mean.cd_object << "," << r.mean.contact_p
     << "," << r.mean.contact_r << "," << r.mean.contact_f << "," << r.median.cd_human << ","
     << r.median.cd_object << "," << r.median.contact_f << "," << r.wall_seconds;
  return os.str();
}

/// Runs each configuration over the scene set and aggregates the evaluation
/// metrics. Per-scene failures either propagate or are skipped and counted,
/// depending on `skip_failures`.
inline std::vector<SweepRow> sweep(const std::vector<RefineConfig>& configs,
                                   const std::vector<Scene>& scenes, const BodyModel& body,
                                   const TemplateRegistry& registry, const Denoiser& den,
                                   const NoiseSchedule& sched, bool skip_failures = true,
                                   std::ostream* log = nullptr) {
  if (scenes.empty()) fail_config("sweep: need at least one scene");
  std::vector<SweepRow> rows;
  for (const RefineConfig& cfg : configs) {
    SweepRow row;
    row.n_iters = cfg.n_iters;
    row.tau = cfg.step.tau;
    row.delta_t = cfg.step.delta_t;
    row.rho = cfg.step.rho;
    std::vector<EvalReport> reports;
    auto t0 = std::chrono::steady_clock::now();
    for (const Scene& s : scenes) {
      SceneModels models{&body, &registry.get(s.template_id)};
      Conditions conds{s.observation, registry.get(s.template_id).coarse_points};
      try {
        RefineResult r = refine_run(s.init, models, den, conds, cfg, sched);
        reports.push_back(evaluate_scene(r.x_final, s.gt, models));
      } catch (const Error& e) {
        if (!skip_failures) throw;
        ++row.failures;
        if (log) (*log) << "sweep: scene " << s.id << " skipped: " << e.what() << "\n";
      }
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.scenes = static_cast<int64_t>(reports.size());
    row.mean = mean_report(reports);
    row.median = median_report(reports);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace hoiopt
