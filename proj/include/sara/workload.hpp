// SPDX-License-Identifier: Apache-2.0
//
// Toy denoising-diffusion workload: 2-D Gaussian mixtures, a linear-β DDPM
// schedule and a small MLP ε-predictor.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sara/layers.hpp"
#include "sara/param_store.hpp"
#include "sara/rng.hpp"
#include "sara/sparse_adaptation.hpp"
#include "sara/tensor.hpp"

namespace sara {

class DiffusionSchedule {
 public:
  explicit DiffusionSchedule(std::size_t steps = 100, double beta_start = 1e-4, double beta_end = 0.02);

  std::size_t steps() const { return betas_.size(); }
  // Timesteps are 1-based: t ∈ [1, T].
  double beta(std::size_t t) const { return betas_.at(t - 1); }
  double alpha(std::size_t t) const { return 1.0 - beta(t); }
  double alpha_bar(std::size_t t) const { return alpha_bars_.at(t - 1); }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

/// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε, row i using timestep t[i].
Tensor q_sample(const Tensor& x0, const std::vector<std::size_t>& t, const Tensor& eps,
                const DiffusionSchedule& schedule);
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& schedule);

enum class Domain { source, target };

struct DatasetConfig {
  std::size_t samples = 4096;
  std::size_t eval_samples = 1024;
  double rotation_deg = 60.0;
  std::array<double, 2> translation{1.0, 0.5};
};

/// Three-component isotropic mixture; the target domain applies the
/// configured rotation then translation to every source draw.
struct MixtureDataset {
  std::vector<std::array<double, 2>> means;
  std::vector<double> stddevs;
  DatasetConfig config;
  Domain domain = Domain::source;

  static MixtureDataset make(const DatasetConfig& config, Domain domain);
  std::array<double, 2> mean() const;
  Tensor draw(std::size_t n, Rng& rng) const;
};

struct DenoiserSpec {
  std::size_t data_dim = 2;
  std::size_t time_dim = 16;
  std::size_t hidden = 64;
};

/// Layers "fc1", "fc2", "fc3" with PyTorch-style uniform(±1/√fan_in) init.
ParamStore init_denoiser(const DenoiserSpec& spec, Rng& rng);
const std::vector<std::string>& denoiser_layers();

/// Sinusoidal embedding of integer timesteps, [sin(t·fᵢ), cos(t·fᵢ)].
Tensor time_embedding(const std::vector<std::size_t>& t, std::size_t dim);

/// ε̂ = fc3(silu(fc2(silu(fc1([x_t, emb(t)])))))
NodeId denoiser_forward(Graph& g, const LinearFn& linear, NodeId x_t, NodeId temb);

struct Batch {
  Tensor x_t;
  Tensor temb;
  Tensor noise;
  std::vector<std::size_t> t;
};

Batch make_batch(const Tensor& x0, std::vector<std::size_t> t, Tensor eps, const DiffusionSchedule& schedule,
                 std::size_t time_dim);
/// Draws rows of `data`, timesteps and noise from `rng`.
Batch sample_batch(const Tensor& data, std::size_t batch_size, const DiffusionSchedule& schedule,
                   std::size_t time_dim, Rng& rng);

/// ε-prediction MSE ‖ε − ε̂(x_t, t)‖² averaged over the batch.
NodeId training_loss(Graph& g, const LinearFn& linear, const Batch& batch);
double training_loss(const ParamStore& params, const Batch& batch);
TaskLoss denoiser_task(const Batch& batch);

Tensor predict_noise(const ParamStore& params, const Tensor& x_t, const std::vector<std::size_t>& t,
                     std::size_t time_dim);

/// Ancestral DDPM sampling of n points.
Tensor sample(const ParamStore& params, const DiffusionSchedule& schedule, std::size_t n, std::uint64_t seed,
              std::size_t time_dim);

}  // namespace sara
