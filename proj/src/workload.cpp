// SPDX-License-Identifier: Apache-2.0
#include "sara/workload.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sara {

DiffusionSchedule::DiffusionSchedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw std::invalid_argument("diffusion schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw std::invalid_argument("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  double bar = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    betas_.push_back(b);
    bar *= 1.0 - b;
    alpha_bars_.push_back(bar);
  }
}

Tensor q_sample(const Tensor& x0, const std::vector<std::size_t>& t, const Tensor& eps,
                const DiffusionSchedule& schedule) {
  if (x0.shape() != eps.shape()) throw ShapeError("q_sample: x0 and noise shapes differ");
  if (t.size() != x0.rows()) throw ShapeError("q_sample: one timestep per row required");
  Tensor out(x0.shape());
  const std::size_t d = x0.cols();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 1 || t[i] > schedule.steps()) {
      throw std::out_of_range("q_sample: timestep " + std::to_string(t[i]) + " outside [1, " +
                              std::to_string(schedule.steps()) + "]");
    }
    const double ab = schedule.alpha_bar(t[i]);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a * x0[i * d + j] + s * eps[i * d + j];
  }
  return out;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& schedule) {
  return q_sample(x0, std::vector<std::size_t>(x0.rows(), t), eps, schedule);
}

MixtureDataset MixtureDataset::make(const DatasetConfig& config, Domain domain) {
  MixtureDataset ds;
  ds.means = {{-1.5, -1.0}, {1.5, -1.0}, {0.0, 1.5}};
  ds.stddevs = {0.2, 0.2, 0.3};
  ds.config = config;
  ds.domain = domain;
  return ds;
}

std::array<double, 2> MixtureDataset::mean() const {
  std::array<double, 2> m{0.0, 0.0};
  for (const auto& c : means) {
    m[0] += c[0] / static_cast<double>(means.size());
    m[1] += c[1] / static_cast<double>(means.size());
  }
  if (domain == Domain::target) {
    const double a = config.rotation_deg * std::numbers::pi / 180.0;
    const double x = std::cos(a) * m[0] - std::sin(a) * m[1] + config.translation[0];
    const double y = std::sin(a) * m[0] + std::cos(a) * m[1] + config.translation[1];
    m = {x, y};
  }
  return m;
}

Tensor MixtureDataset::draw(std::size_t n, Rng& rng) const {
  Tensor out({n, 2});
  const double a = config.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.index(means.size());
    double x = means[k][0] + stddevs[k] * rng.normal();
    double y = means[k][1] + stddevs[k] * rng.normal();
    if (domain == Domain::target) {
      const double rx = c * x - s * y + config.translation[0];
      const double ry = s * x + c * y + config.translation[1];
      x = rx;
      y = ry;
    }
    out(i, 0) = x;
    out(i, 1) = y;
  }
  return out;
}

const std::vector<std::string>& denoiser_layers() {
  static const std::vector<std::string> layers{"fc1", "fc2", "fc3"};
  return layers;
}

ParamStore init_denoiser(const DenoiserSpec& spec, Rng& rng) {
  const std::size_t in = spec.data_dim + spec.time_dim;
  const std::array<std::pair<std::size_t, std::size_t>, 3> dims{
      {{spec.hidden, in}, {spec.hidden, spec.hidden}, {spec.data_dim, spec.hidden}}};
  ParamStore p;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    const auto [out_f, in_f] = dims[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_f));
    Tensor w({out_f, in_f});
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    Tensor b({out_f});
    for (double& v : b.data()) v = rng.uniform(-bound, bound);
    p.add(denoiser_layers()[l] + ".weight", std::move(w));
    p.add(denoiser_layers()[l] + ".bias", std::move(b));
  }
  return p;
}

Tensor time_embedding(const std::vector<std::size_t>& t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("time embedding dimension must be even");
  const std::size_t half = dim / 2;
  Tensor out({t.size(), dim});
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double arg = static_cast<double>(t[i]) * freq;
      out(i, k) = std::sin(arg);
      out(i, half + k) = std::cos(arg);
    }
  return out;
}

NodeId denoiser_forward(Graph& g, const LinearFn& linear, NodeId x_t, NodeId temb) {
  NodeId h = g.concat(x_t, temb);
  h = g.silu(linear(g, "fc1", h));
  h = g.silu(linear(g, "fc2", h));
  return linear(g, "fc3", h);
}

Batch make_batch(const Tensor& x0, std::vector<std::size_t> t, Tensor eps, const DiffusionSchedule& schedule,
                 std::size_t time_dim) {
  Batch b;
  b.x_t = q_sample(x0, t, eps, schedule);
  b.temb = time_embedding(t, time_dim);
  b.noise = std::move(eps);
  b.t = std::move(t);
  return b;
}

Batch sample_batch(const Tensor& data, std::size_t batch_size, const DiffusionSchedule& schedule,
                   std::size_t time_dim, Rng& rng) {
  const std::size_t d = data.cols();
  Tensor x0({batch_size, d});
  std::vector<std::size_t> t(batch_size);
  Tensor eps({batch_size, d});
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t r = rng.index(data.rows());
    for (std::size_t j = 0; j < d; ++j) x0(i, j) = data(r, j);
    t[i] = 1 + rng.index(schedule.steps());
    for (std::size_t j = 0; j < d; ++j) eps(i, j) = rng.normal();
  }
  return make_batch(x0, std::move(t), std::move(eps), schedule, time_dim);
}

NodeId training_loss(Graph& g, const LinearFn& linear, const Batch& batch) {
  const NodeId x = g.input(batch.x_t);
  const NodeId e = g.input(batch.temb);
  const NodeId target = g.input(batch.noise);
  return g.mse(denoiser_forward(g, linear, x, e), target);
}

double training_loss(const ParamStore& params, const Batch& batch) {
  Graph g;
  ParamNodes nodes;
  for (const auto& [name, value] : params) nodes[name] = g.parameter(value);
  return g.value(training_loss(g, dense_linear(nodes), batch)).item();
}

TaskLoss denoiser_task(const Batch& batch) {
  return [batch](Graph& g, const ParamNodes& nodes) { return training_loss(g, dense_linear(nodes), batch); };
}

Tensor predict_noise(const ParamStore& params, const Tensor& x_t, const std::vector<std::size_t>& t,
                     std::size_t time_dim) {
  Graph g;
  ParamNodes nodes;
  for (const auto& [name, value] : params) nodes[name] = g.parameter(value);
  const NodeId out = denoiser_forward(g, dense_linear(nodes), g.input(x_t), g.input(time_embedding(t, time_dim)));
  return g.value(out);
}

Tensor sample(const ParamStore& params, const DiffusionSchedule& schedule, std::size_t n, std::uint64_t seed,
              std::size_t time_dim) {
  Rng rng = Rng::stream(seed, "sample");
  Tensor x({n, 2});
  for (double& v : x.data()) v = rng.normal();
  for (std::size_t t = schedule.steps(); t >= 1; --t) {
    const Tensor eps_hat = predict_noise(params, x, std::vector<std::size_t>(n, t), time_dim);
    const double a = schedule.alpha(t), ab = schedule.alpha_bar(t), b = schedule.beta(t);
    const double coef = b / std::sqrt(1.0 - ab);
    const double sigma = t > 1 ? std::sqrt(b) : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = t > 1 ? rng.normal() : 0.0;
      x[i] = (x[i] - coef * eps_hat[i]) / std::sqrt(a) + sigma * z;
    }
  }
  return x;
}

}  // namespace sara
