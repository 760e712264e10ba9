#pragma once

#include <map>
#include <string>

#include "hoiopt/denoiser.hpp"
#include "hoiopt/params.hpp"

namespace hoiopt {

/// Architecture of the conditional noise predictor.
///
/// Parameter slices (one token per joint 6D block, object rotation, object
/// translation; the shape block runs through its own mirrored branch) are
/// embedded to `width`, conditioned on the timestep via per-channel
/// scale-shift, then refined by `layers` blocks of dual cross-attention:
/// one attention over observation tokens and a parallel adapter attention
/// over geometry tokens, concatenated and fused by a linear head with a
/// residual connection.
struct DenoiserArch {
  int64_t joints = 16;
  int64_t width = 64;
  int64_t heads = 4;
  int64_t layers = 3;
  int64_t obs_dim = 52;
  int64_t obs_tokens = 2;
  int64_t geo_tokens = 2;
  int64_t geo_hidden = 64;
  int64_t time_dim = 64;
  int64_t time_hidden = 128;
  bool conditional = true;

  ParamLayout layout() const { return ParamLayout{joints}; }
  int64_t dim() const { return layout().dim(); }

  std::string describe() const {
    return "denoiser-v1 joints=" + std::to_string(joints) + " width=" + std::to_string(width) +
           " heads=" + std::to_string(heads) + " layers=" + std::to_string(layers) +
           " obs_dim=" + std::to_string(obs_dim) + " obs_tokens=" + std::to_string(obs_tokens) +
           " geo_tokens=" + std::to_string(geo_tokens) +
           " geo_hidden=" + std::to_string(geo_hidden) + " time_dim=" + std::to_string(time_dim) +
           " time_hidden=" + std::to_string(time_hidden) +
           " conditional=" + (conditional ? "1" : "0");
  }

  uint64_t hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : describe()) {
      h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  void validate() const {
    if (joints < 1 || width < 4 || heads < 1 || layers < 1)
      fail_config("DenoiserArch: bad dimensions");
    if (width % heads != 0) fail_config("DenoiserArch: heads must divide width");
  }

  bool operator==(const DenoiserArch&) const = default;
};

/// Named-tensor bundle: the denoiser, its condition encoders and the
/// timestep encoder. Ordered by name for deterministic serialization.
struct DenoiserWeights {
  DenoiserArch arch;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail_data("DenoiserWeights: missing tensor '" + name + "'");
    return it->second;
  }

  static DenoiserWeights init(const DenoiserArch& arch, Rng& rng) {
    arch.validate();
    DenoiserWeights w;
    w.arch = arch;
    auto dense = [&](const std::string& name, int64_t in, int64_t out, double scale = -1.0) {
      if (scale < 0) scale = 1.0 / std::sqrt(static_cast<double>(in));
      w.tensors[name + ".w"] = Tensor::randn({in, out}, rng, scale);
      w.tensors[name + ".b"] = Tensor::zeros({1, out});
    };
    auto zeros = [&](const std::string& name, int64_t in, int64_t out) {
      w.tensors[name + ".w"] = Tensor::zeros({in, out});
      w.tensors[name + ".b"] = Tensor::zeros({1, out});
    };
    const int64_t W = arch.width;
    for (int64_t k = 0; k < arch.joints; ++k) dense("embed.theta." + std::to_string(k), 6, W);
    dense("embed.beta", 10, W);
    dense("embed.rot", 6, W);
    dense("embed.trans", 3, W);
    dense("time.fc1", arch.time_dim, arch.time_hidden);
    zeros("time.fc2", arch.time_hidden, 2 * W);  // scale starts at 1, shift at 0
    dense("obs.fc1", arch.obs_dim, 128);
    dense("obs.fc2", 128, arch.obs_tokens * W);
    dense("geo.fc1", 3, arch.geo_hidden);
    dense("geo.fc2", arch.geo_hidden, arch.geo_hidden);
    dense("geo.fc3", arch.geo_hidden, arch.geo_tokens * W);
    w.tensors["null.obs"] = Tensor::randn({arch.obs_tokens, W}, rng, 0.02);
    w.tensors["null.geo"] = Tensor::randn({arch.geo_tokens, W}, rng, 0.02);
    for (const char* branch : {"main", "beta"}) {
      for (int64_t l = 0; l < arch.layers; ++l) {
        std::string p = std::string(branch) + ".l" + std::to_string(l) + ".";
        w.tensors[p + "ln.g"] = Tensor::full({1, W}, 1.0);
        w.tensors[p + "ln.b"] = Tensor::zeros({1, W});
        double s = 1.0 / std::sqrt(static_cast<double>(W));
        w.tensors[p + "wq"] = Tensor::randn({W, W}, rng, s);
        w.tensors[p + "wk_obs"] = Tensor::randn({W, W}, rng, s);
        w.tensors[p + "wv_obs"] = Tensor::randn({W, W}, rng, s);
        w.tensors[p + "wk_geo"] = Tensor::randn({W, W}, rng, s);
        w.tensors[p + "wv_geo"] = Tensor::randn({W, W}, rng, s);
        zeros(p + "fuse", 2 * W, W);  // blocks start as identity maps
      }
    }
    for (int64_t k = 0; k < arch.joints; ++k) zeros("out.theta." + std::to_string(k), W, 6);
    zeros("out.beta", W, 10);
    zeros("out.rot", W, 6);
    zeros("out.trans", W, 3);
    return w;
  }
};

/// Supplies weight tensors as tape nodes: constants during guidance and
/// sampling, differentiable leaves during training.
using WeightProvider = std::function<Var(Tape&, const std::string&)>;

class NeuralDenoiser : public Denoiser {
 public:
  explicit NeuralDenoiser(const DenoiserWeights* w) : w_(w) { w->arch.validate(); }

  int64_t dim() const override { return w_->arch.dim(); }
  const DenoiserArch& arch() const { return w_->arch; }

  Var eval(Tape& tape, Var x_t, int64_t t, const NoiseSchedule& sched,
           const Conditions& c) const override {
    WeightProvider constants = [this](Tape& tp, const std::string& name) {
      return tp.constant(w_->at(name));
    };
    return eval_with(tape, x_t, t, sched, c, constants);
  }

  /// Same forward pass with caller-controlled weight nodes (training).
  Var eval_with(Tape& tape, Var x_t, int64_t t, const NoiseSchedule& sched, const Conditions& c,
                const WeightProvider& p) const {
    const DenoiserArch& a = w_->arch;
    if (x_t.val().numel() != a.dim())
      fail_shape("neural denoiser: x_t has " + std::to_string(x_t.val().numel()) +
                 " entries, expected " + std::to_string(a.dim()));
    (void)sched;

    auto linear = [&](Var in, const std::string& name) {
      return add_rowvec(matmul(in, p(tape, name + ".w")), p(tape, name + ".b"));
    };

    Var kv_obs = encode_obs(tape, c, p);
    Var kv_geo = encode_geo(tape, c, p);

    // timestep scale-shift from a sinusoidal embedding
    Var temb = tape.constant(sinusoidal_embedding(static_cast<double>(t), a.time_dim));
    Var th = gelu(linear(temb, "time.fc1"));
    Var sb = linear(th, "time.fc2");  // 1 x 2W
    Var t_scale = add_scalar(slice_cols(sb, 0, a.width), 1.0);
    Var t_shift = slice_cols(sb, a.width, 2 * a.width);

    PoseVars blocks = unflatten_var(x_t, a.layout());

    std::vector<Var> main_toks;
    for (int64_t k = 0; k < a.joints; ++k)
      main_toks.push_back(linear(slice_rows(blocks.theta, k, k + 1),
                                 "embed.theta." + std::to_string(k)));
    main_toks.push_back(linear(blocks.rot_o, "embed.rot"));
    main_toks.push_back(linear(blocks.trans_o, "embed.trans"));
    Var main = concat_rows(main_toks);                       // (K+2) x W
    Var beta_tok = linear(reshape(blocks.beta, {1, 10}), "embed.beta");

    main = add_rowvec(mul_rowvec(main, t_scale), t_shift);
    beta_tok = add_rowvec(mul_rowvec(beta_tok, t_scale), t_shift);

    for (int64_t l = 0; l < a.layers; ++l) {
      main = block(tape, main, kv_obs, kv_geo, "main.l" + std::to_string(l), p);
      beta_tok = block(tape, beta_tok, kv_obs, kv_geo, "beta.l" + std::to_string(l), p);
    }

    std::vector<Var> parts;
    for (int64_t k = 0; k < a.joints; ++k)
      parts.push_back(linear(slice_rows(main, k, k + 1), "out.theta." + std::to_string(k)));
    parts.push_back(linear(beta_tok, "out.beta"));
    parts.push_back(linear(slice_rows(main, a.joints, a.joints + 1), "out.rot"));
    parts.push_back(linear(slice_rows(main, a.joints + 1, a.joints + 2), "out.trans"));
    return reshape(concat_cols(parts), {a.dim()});
  }

  static Tensor sinusoidal_embedding(double t, int64_t dim) {
    std::vector<double> e(static_cast<size_t>(dim));
    int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                             static_cast<double>(half > 1 ? half - 1 : 1));
      e[static_cast<size_t>(2 * i)] = std::sin(t * freq);
      e[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return Tensor({1, dim}, std::move(e));
  }

 private:
  Var encode_obs(Tape& tape, const Conditions& c, const WeightProvider& p) const {
    const DenoiserArch& a = w_->arch;
    if (!a.conditional || c.obs.numel() == 0) return p(tape, "null.obs");
    if (c.obs.numel() != a.obs_dim)
      fail_shape("neural denoiser: observation has " + std::to_string(c.obs.numel()) +
                 " entries, expected " + std::to_string(a.obs_dim));
    Var o = tape.constant(c.obs.reshaped({1, a.obs_dim}));
    Var h = relu(add_rowvec(matmul(o, p(tape, "obs.fc1.w")), p(tape, "obs.fc1.b")));
    Var toks = add_rowvec(matmul(h, p(tape, "obs.fc2.w")), p(tape, "obs.fc2.b"));
    return reshape(toks, {a.obs_tokens, a.width});
  }

  Var encode_geo(Tape& tape, const Conditions& c, const WeightProvider& p) const {
    const DenoiserArch& a = w_->arch;
    if (!a.conditional || c.geo.numel() == 0) return p(tape, "null.geo");
    if (c.geo.ndim() != 2 || c.geo.rows() != 64 || c.geo.cols() != 3)
      fail_shape("neural denoiser: geometry condition must be 64 x 3, got " +
                 shape_str(c.geo.shape()));
    Var pts = tape.constant(c.geo);
    Var h = relu(add_rowvec(matmul(pts, p(tape, "geo.fc1.w")), p(tape, "geo.fc1.b")));
    h = relu(add_rowvec(matmul(h, p(tape, "geo.fc2.w")), p(tape, "geo.fc2.b")));
    // permutation-invariant max pool over the 64 points
    Var pooled = reshape(row_max(transpose(h)), {1, a.geo_hidden});
    Var toks = add_rowvec(matmul(pooled, p(tape, "geo.fc3.w")), p(tape, "geo.fc3.b"));
    return reshape(toks, {a.geo_tokens, a.width});
  }

  Var attention(Var q_in, Var kv, const std::string& prefix, const std::string& which,
                Tape& tape, const WeightProvider& p) const {
    const DenoiserArch& a = w_->arch;
    Var Q = matmul(q_in, p(tape, prefix + ".wq"));
    Var K = matmul(kv, p(tape, prefix + ".wk_" + which));
    Var V = matmul(kv, p(tape, prefix + ".wv_" + which));
    int64_t hd = a.width / a.heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Var> outs;
    for (int64_t h = 0; h < a.heads; ++h) {
      Var Qh = slice_cols(Q, h * hd, (h + 1) * hd);
      Var Kh = slice_cols(K, h * hd, (h + 1) * hd);
      Var Vh = slice_cols(V, h * hd, (h + 1) * hd);
      Var attn = softmax_rows(mul_scalar(matmul(Qh, transpose(Kh)), scale));
      outs.push_back(matmul(attn, Vh));
    }
    return concat_cols(outs);
  }

  Var block(Tape& tape, Var tokens, Var kv_obs, Var kv_geo, const std::string& prefix,
            const WeightProvider& p) const {
    Var normed = add_rowvec(mul_rowvec(layer_norm_rows(tokens), p(tape, prefix + ".ln.g")),
                            p(tape, prefix + ".ln.b"));
    Var a_obs = attention(normed, kv_obs, prefix, "obs", tape, p);
    Var a_geo = attention(normed, kv_geo, prefix, "geo", tape, p);
    Var fused = add_rowvec(matmul(concat_cols({a_obs, a_geo}), p(tape, prefix + ".fuse.w")),
                           p(tape, prefix + ".fuse.b"));
    return add(tokens, fused);
  }

  const DenoiserWeights* w_;
};

}  // namespace hoiopt
