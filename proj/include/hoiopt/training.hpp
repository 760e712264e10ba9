#pragma once

#include <atomic>
#include <span>
#include <thread>

#include "hoiopt/ddim.hpp"
#include "hoiopt/neural_denoiser.hpp"

namespace hoiopt {

/// One training example: clean parameters plus their conditioning inputs.
struct TrainExample {
  Tensor x0;
  Conditions conds;
};

/// First-order adaptive-moment optimizer state, one slot per weight tensor.
struct AdamState {
  int64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::map<std::string, std::vector<double>> m, v;
};

/// One optimization step on a mini-batch of the noise-prediction objective
/// ||eps - eps_theta(x_t, t, c_I, c_G)||^2, with t drawn uniformly from
/// {1..T} and eps standard normal, per element. Returns the mean per-element
/// loss (mean over batch and dimensions).
///
/// Each element draws (t, eps) from its own derived stream and runs on its
/// own tape; gradients are reduced in element order, so the result is
/// bitwise identical for any `jobs` count.
inline double train_step(DenoiserWeights& w, std::span<const TrainExample> batch,
                         const NoiseSchedule& sched, AdamState& adam, double lr, Rng& rng,
                         int64_t jobs = 1) {
  if (batch.empty()) fail_config("train_step: empty batch");
  NeuralDenoiser net(&w);
  const int64_t D = w.arch.dim();
  const uint64_t step_seed = rng.next_u64();
  const size_t B = batch.size();

  struct ElemResult {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;
    std::exception_ptr error;
  };
  std::vector<ElemResult> results(B);

  auto run_element = [&](size_t bi) {
    try {
      const TrainExample& ex = batch[bi];
      if (ex.x0.numel() != D)
        fail_shape("train_step: example dimension " + std::to_string(ex.x0.numel()) +
                   " does not match model dimension " + std::to_string(D));
      Rng er(Rng::derive(step_seed, "elem", static_cast<uint64_t>(bi)));
      int64_t t = er.uniform_int(1, sched.steps());
      Tensor eps = Tensor::randn({D}, er);
      Tensor x_t = forward_diffuse(ex.x0, t, eps, sched);

      Tape tape;
      std::map<std::string, Var> leaves;
      for (const auto& [name, tensor] : w.tensors) leaves.emplace(name, tape.leaf(tensor, true));
      WeightProvider provider = [&leaves](Tape&, const std::string& name) -> Var {
        return leaves.at(name);
      };
      Var pred = net.eval_with(tape, tape.constant(x_t), t, sched, ex.conds, provider);
      Var loss = mean(square(sub(pred, tape.constant(eps))));
      results[bi].loss = loss.val().scalar_value();
      GradMap gm = tape.backward(loss);
      for (const auto& [name, leaf] : leaves)
        if (gm.has(leaf)) results[bi].grads.emplace(name, gm.get(leaf));
    } catch (...) {
      results[bi].error = std::current_exception();
    }
  };

  if (jobs <= 1) {
    for (size_t bi = 0; bi < B; ++bi) run_element(bi);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      for (size_t bi = next.fetch_add(1); bi < B; bi = next.fetch_add(1)) run_element(bi);
    };
    std::vector<std::thread> pool;
    for (int64_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }

  double loss_value = 0.0;
  std::map<std::string, std::vector<double>> grad_acc;
  for (size_t bi = 0; bi < B; ++bi) {  // fixed reduction order
    if (results[bi].error) std::rethrow_exception(results[bi].error);
    loss_value += results[bi].loss;
    for (const auto& [name, g] : results[bi].grads) {
      auto& acc = grad_acc[name];
      if (acc.empty()) acc.assign(static_cast<size_t>(g.numel()), 0.0);
      for (int64_t i = 0; i < g.numel(); ++i) acc[static_cast<size_t>(i)] += g[i];
    }
  }
  loss_value /= static_cast<double>(B);
  if (!std::isfinite(loss_value))
    fail_numeric("train_step: non-finite loss (" + std::to_string(loss_value) + ")");

  const double inv_b = 1.0 / static_cast<double>(B);
  adam.step += 1;
  double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
  double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
  for (auto& [name, tensor] : w.tensors) {
    auto git = grad_acc.find(name);
    auto& m = adam.m[name];
    auto& v = adam.v[name];
    if (m.empty()) m.assign(static_cast<size_t>(tensor.numel()), 0.0);
    if (v.empty()) v.assign(static_cast<size_t>(tensor.numel()), 0.0);
    std::vector<double> upd(tensor.vec());
    for (int64_t i = 0; i < tensor.numel(); ++i) {
      size_t si = static_cast<size_t>(i);
      double g = git == grad_acc.end() ? 0.0 : git->second[si] * inv_b;
      m[si] = adam.beta1 * m[si] + (1.0 - adam.beta1) * g;
      v[si] = adam.beta2 * v[si] + (1.0 - adam.beta2) * g * g;
      double mh = m[si] / bc1, vh = v[si] / bc2;
      upd[si] -= lr * mh / (std::sqrt(vh) + adam.eps);
    }
    tensor = Tensor(tensor.shape(), std::move(upd));
  }
  return loss_value;
}

struct TrainLogEntry {
  int64_t epoch = 0;
  int64_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  double final_loss = 0.0;
};

/// Epoch-based training loop: shuffles example order each epoch, walks it in
/// mini-batches, and calls `on_epoch` (when set) after each pass. All
/// randomness derives from `seed`.
inline TrainResult train_model(DenoiserWeights& w, const std::vector<TrainExample>& examples,
                               const NoiseSchedule& sched, int64_t epochs, int64_t batch_size,
                               double lr, uint64_t seed,
                               const std::function<void(int64_t, double)>& on_epoch = nullptr,
                               int64_t jobs = 1) {
  if (examples.empty()) fail_config("train_model: no examples");
  if (batch_size < 1) fail_config("train_model: batch size must be >= 1");
  AdamState adam;
  Rng noise_rng(Rng::derive(seed, "train-noise"));
  TrainResult out;
  int64_t global_step = 0;
  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(Rng::derive(seed, "train-shuffle", static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
      std::vector<TrainExample> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      double loss = train_step(w, batch, sched, adam, lr, noise_rng, jobs);
      out.log.push_back({epoch, global_step, loss});
      epoch_loss += loss;
      ++batches;
      ++global_step;
    }
    out.final_loss = epoch_loss / static_cast<double>(batches);
    if (on_epoch) on_epoch(epoch, out.final_loss);
  }
  return out;
}

/// Held-out noise-prediction MSE (mean over examples and dimensions),
/// deterministic in `seed`.
inline double eval_eps_mse(const DenoiserWeights& w, const std::vector<TrainExample>& examples,
                           const NoiseSchedule& sched, uint64_t seed, int64_t draws_per_example = 4) {
  NeuralDenoiser net(&w);
  Rng rng(Rng::derive(seed, "eval-mse"));
  double acc = 0.0;
  int64_t count = 0;
  for (const TrainExample& ex : examples) {
    for (int64_t d = 0; d < draws_per_example; ++d) {
      int64_t t = rng.uniform_int(1, sched.steps());
      Tensor eps = Tensor::randn({ex.x0.numel()}, rng);
      Tensor x_t = forward_diffuse(ex.x0, t, eps, sched);
      Tensor pred = net.eval_plain(x_t, t, sched, ex.conds);
      for (int64_t i = 0; i < eps.numel(); ++i) {
        double e = pred[i] - eps[i];
        acc += e * e;
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace hoiopt
