// SPDX-License-Identifier: Apache-2.0
#include "sara/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace sara {
namespace {

using Clock = std::chrono::steady_clock;

Batch eval_batch(const MixtureDataset& ds, std::size_t n, const DiffusionSchedule& schedule, std::size_t time_dim,
                 std::uint64_t seed, const std::string& purpose) {
  Rng rng = Rng::stream(seed, purpose);
  const Tensor x0 = ds.draw(n, rng);
  std::vector<std::size_t> t(n);
  for (auto& v : t) v = 1 + rng.index(schedule.steps());
  Tensor eps({n, x0.cols()});
  for (double& v : eps.data()) v = rng.normal();
  return make_batch(x0, std::move(t), std::move(eps), schedule, time_dim);
}

double scheduled_lr(const RunConfig& c, double base, std::size_t step, std::size_t total) {
  return c.lr_schedule == LrSchedule::cosine ? cosine_lr(base, step, total) : base;
}

SessionConfig session_config(const RunConfig& c) {
  SessionConfig sc;
  sc.lambda_rank = c.lambda_rank;
  sc.rank_operand = c.rank_operand;
  sc.rank_loss_interval = c.rank_loss_interval;
  sc.progressive = true;
  sc.progressive_iteration = c.progressive_iteration;
  sc.readjust_events = c.readjust_events;
  sc.total_iterations = c.total_iterations;
  sc.adamw = c.adamw;
  sc.dtype = c.dtype;
  switch (c.method) {
    case Method::sara_no_ppa:
    case Method::largest:
    case Method::random: sc.progressive = false; break;
    case Method::sara_no_rank: sc.lambda_rank = 0.0; break;
    default: break;
  }
  return sc;
}

std::size_t matched_budget(const RunConfig& c, const ParamStore& p0) {
  return c.budget ? *c.budget : compute_mask(p0, *c.threshold).popcount();
}

class Stopwatch {
 public:
  explicit Stopwatch(bool on) : on_(on), start_(Clock::now()) {}
  double ms() const {
    if (!on_) return 0.0;
    return std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
  }

 private:
  bool on_;
  Clock::time_point start_;
};

}  // namespace

Workload make_workload(const RunConfig& c) {
  Workload w{DiffusionSchedule(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end),
             c.model,
             MixtureDataset::make(c.dataset, Domain::source),
             MixtureDataset::make(c.dataset, Domain::target),
             {},
             {},
             {},
             {}};
  Rng src = Rng::stream(c.seed, "data_source");
  Rng tgt = Rng::stream(c.seed, "data_target");
  w.source_train = w.source.draw(c.dataset.samples, src);
  w.target_train = w.target.draw(c.dataset.samples, tgt);
  w.source_eval = eval_batch(w.source, c.dataset.eval_samples, w.schedule, w.spec.time_dim, c.seed, "eval_source");
  w.target_eval = eval_batch(w.target, c.dataset.eval_samples, w.schedule, w.spec.time_dim, c.seed, "eval_target");
  return w;
}

double eval_loss(const ParamStore& params, const Batch& batch) { return training_loss(params, batch); }

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string metrics_csv(const std::vector<LogRow>& rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << r.step << ',' << format_double(r.task_loss) << ',' << format_double(r.rank_loss) << ','
       << format_double(r.source_eval) << ',' << format_double(r.target_eval) << ',' << r.grad_bytes << ','
       << format_double(r.wall_ms) << '\n';
  }
  return os.str();
}

std::string dynamics_csv(const std::vector<DynamicsRecord>& rows) {
  std::ostringstream os;
  os << "step,frac_below_from_m0,frac_below_from_complement,threshold\n";
  for (const auto& r : rows) {
    os << r.step << ',' << format_double(r.frac_below_from_m0) << ',' << format_double(r.frac_below_from_complement)
       << ',' << format_double(r.threshold) << '\n';
  }
  return os.str();
}

std::string points_csv(const Tensor& points) {
  std::ostringstream os;
  os << "x,y\n";
  for (std::size_t i = 0; i < points.rows(); ++i)
    os << format_double(points(i, 0)) << ',' << format_double(points(i, 1)) << '\n';
  return os.str();
}

std::string memory_csv(const std::vector<MemoryRow>& rows) {
  std::ostringstream os;
  os << "method,trainable,param_grad_bytes,activation_bytes,adapter_bytes,peak_bytes,wall_ms\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.trainable << ',' << r.param_grad_bytes << ',' << r.activation_bytes << ','
       << r.adapter_bytes << ',' << r.peak_bytes << ',' << format_double(r.wall_ms) << '\n';
  }
  return os.str();
}

PretrainResult pretrain(const RunConfig& c, const Workload& w, const LogHook& hook) {
  Rng init = Rng::stream(c.seed, "init");
  Rng batches = Rng::stream(c.seed, "batches_pretrain");
  PretrainResult r{init_denoiser(w.spec, init), {}};
  OptimizerState opt(r.params.total_count(), c.adamw);
  std::vector<double> flat;
  flat.reserve(r.params.total_count());
  const Stopwatch clock(c.timing);

  for (std::size_t s = 0; s < c.pretrain_iterations; ++s) {
    const Batch batch = sample_batch(w.source_train, c.batch_size, w.schedule, w.spec.time_dim, batches);
    Graph g(c.dtype);
    ParamNodes nodes;
    std::vector<NodeId> leaves;
    for (const auto& [name, value] : r.params) {
      nodes[name] = g.leaf(value);
      leaves.push_back(nodes[name]);
    }
    const NodeId loss = training_loss(g, dense_linear(nodes), batch);
    const double task = g.value(loss).item();
    Gradients grads = g.backward(loss);
    std::vector<double> gflat;
    gflat.reserve(flat.capacity());
    for (NodeId leaf : leaves) {
      const auto d = grads.at(leaf).data();
      gflat.insert(gflat.end(), d.begin(), d.end());
    }
    flat.clear();
    for (const auto& [name, value] : r.params) flat.insert(flat.end(), value.data().begin(), value.data().end());
    opt.lr = scheduled_lr(c, c.pretrain_lr, s, c.pretrain_iterations);
    adamw_step(opt, flat, gflat);
    std::size_t off = 0;
    for (const auto& name : r.params.names()) {
      Tensor& t = r.params.at(name);
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data().begin());
      off += t.size();
    }

    if ((s + 1) % c.log_every == 0) {
      LogRow row{s + 1, task, 0.0, eval_loss(r.params, w.source_eval), eval_loss(r.params, w.target_eval),
                 grads.report.param_grad_bytes(), clock.ms()};
      r.log.push_back(row);
      if (hook) hook(row, r.params);
    }
  }
  return r;
}

double resolve_threshold(const RunConfig& c, const ParamStore& p0) {
  return c.threshold ? *c.threshold : compute_mask_by_budget(p0, *c.budget).threshold();
}

std::optional<SparseMask> method_mask(const RunConfig& c, const ParamStore& p0) {
  switch (c.method) {
    case Method::lora: return std::nullopt;
    case Method::full: return full_mask(p0);
    case Method::largest: return select_largest(p0, matched_budget(c, p0));
    case Method::random: return select_random(p0, matched_budget(c, p0), c.seed);
    default: return c.threshold ? compute_mask(p0, *c.threshold) : compute_mask_by_budget(p0, *c.budget);
  }
}

FinetuneResult finetune(const RunConfig& c, const Workload& w, const ParamStore& p0, const LogHook& hook) {
  FinetuneResult r;
  r.method = c.method;
  r.pretrained = p0;
  r.threshold = resolve_threshold(c, p0);
  r.initial_mask = compute_mask(p0, r.threshold);
  r.lr = base_lr(c, r.threshold);

  DynamicsTracker dynamics(r.initial_mask, r.threshold, c.log_every);
  dynamics.observe(0, p0);
  Rng batches = Rng::stream(c.seed, "batches_finetune");
  const Stopwatch clock(c.timing);
  const std::size_t total = c.total_iterations;

  auto log = [&](std::size_t step, const MetricsRecord& rec, const ParamStore& params) {
    dynamics.observe(step, params);
    if (step % c.log_every != 0) return;
    LogRow row{step,         rec.task_loss, rec.rank_loss, eval_loss(params, w.source_eval),
               eval_loss(params, w.target_eval), rec.grad_bytes, clock.ms()};
    r.log.push_back(row);
    if (hook) hook(row, params);
  };

  if (c.method == Method::lora) {
    Rng init = Rng::stream(c.seed, "lora_init");
    LoraSession session(p0, attach_lora(p0, c.lora, init), c.adamw, c.dtype);
    r.trainable = session.trainable_count();
    for (std::size_t s = 0; s < total; ++s) {
      const Batch batch = sample_batch(w.target_train, c.batch_size, w.schedule, w.spec.time_dim, batches);
      const ModelLoss loss = [&batch](Graph& g, const LinearFn& lin) { return training_loss(g, lin, batch); };
      MetricsRecord rec = lora_step(session, loss, scheduled_lr(c, r.lr, s, total));
      if (s + 1 == total) r.last_report = rec.report;
      if ((s + 1) % c.log_every == 0) log(s + 1, rec, session.merged());
    }
    r.params = session.merged();
    r.adapters = session.adapters();
    r.step = session.step();
  } else {
    const SessionConfig sc = session_config(c);
    SaraSession session = c.method == Method::full ? make_full_session(p0, sc)
                                                   : SaraSession(p0, *method_mask(c, p0), sc);
    r.trainable = session.trainable().size();
    for (std::size_t s = 0; s < total; ++s) {
      const Batch batch = sample_batch(w.target_train, c.batch_size, w.schedule, w.spec.time_dim, batches);
      const TaskLoss task = denoiser_task(batch);
      const double lr = scheduled_lr(c, r.lr, s, total);
      MetricsRecord rec = (c.method == Method::naive_select || c.method == Method::full)
                              ? naive_selective_step(session, task, lr)
                              : sara_step(session, task, lr);
      if (s + 1 == total) r.last_report = rec.report;
      if ((s + 1) % c.log_every == 0) log(s + 1, rec, session.params());
    }
    r.params = session.params();
    r.trained_initial_mask = session.initial_mask();
    r.mask = session.mask();
    r.optimizer = session.optimizer();
    r.step = session.step();
  }
  r.dynamics = dynamics.records();
  return r;
}

MemoryRow measure_memory(RunConfig c, Method method, const Workload& w, const ParamStore& p0) {
  c.method = method;
  Rng batches = Rng::stream(c.seed, "batches_memory");
  const Batch batch = sample_batch(w.target_train, c.batch_size, w.schedule, w.spec.time_dim, batches);
  const double lr = base_lr(c, resolve_threshold(c, p0));
  MemoryRow row;
  row.method = to_string(method);
  const Stopwatch clock(c.timing);
  MetricsRecord rec;
  if (method == Method::lora) {
    Rng init = Rng::stream(c.seed, "lora_init");
    LoraSession session(p0, attach_lora(p0, c.lora, init), c.adamw, c.dtype);
    row.trainable = session.trainable_count();
    rec = lora_step(session, [&batch](Graph& g, const LinearFn& lin) { return training_loss(g, lin, batch); }, lr);
  } else {
    const SessionConfig sc = session_config(c);
    SaraSession session = method == Method::full ? make_full_session(p0, sc) : SaraSession(p0, *method_mask(c, p0), sc);
    row.trainable = session.trainable().size();
    const TaskLoss task = denoiser_task(batch);
    rec = (method == Method::naive_select || method == Method::full) ? naive_selective_step(session, task, lr)
                                                                     : sara_step(session, task, lr);
  }
  row.wall_ms = clock.ms();
  row.param_grad_bytes = rec.report.param_grad_bytes();
  row.activation_bytes = rec.report.saved_activation_bytes;
  row.adapter_bytes = rec.report.tagged_bytes("adapter");
  row.peak_bytes = rec.report.peak_retained_bytes;
  return row;
}

namespace {

void put_meta(Checkpoint& ck, const RunConfig& c, const std::string& method, std::size_t step) {
  ck.put("meta/step", Tensor({1}, {static_cast<double>(step)}));
  ck.put("meta/config_hash/" + config_hash(c), Tensor({0}));
  ck.put("meta/method/" + method, Tensor({0}));
}

}  // namespace

Checkpoint pretrain_checkpoint(const RunConfig& c, const PretrainResult& r) {
  Checkpoint ck;
  put_meta(ck, c, "pretrain", c.pretrain_iterations);
  ck.put_params("P/", r.params);
  return ck;
}

Checkpoint finetune_checkpoint(const RunConfig& c, const FinetuneResult& r) {
  Checkpoint ck;
  put_meta(ck, c, to_string(r.method), r.step);
  ck.put("meta/threshold", Tensor({1}, {r.threshold}));
  ck.put_params("P0/", r.pretrained);
  ck.put_params("P/", r.params);
  ck.put_masks("D0/", r.initial_mask);
  if (r.trained_initial_mask) ck.put_masks("M0/", *r.trained_initial_mask);
  if (r.mask) ck.put_masks("M/", *r.mask);
  if (r.optimizer) {
    const auto n = r.optimizer->m.size();
    ck.put("opt/m", Tensor({n}, r.optimizer->m));
    ck.put("opt/v", Tensor({n}, r.optimizer->v));
    ck.put("opt/t", Tensor({1}, {static_cast<double>(r.optimizer->t)}));
  }
  for (const auto& a : r.adapters) {
    ck.put("lora/" + a.target + "/A", a.A);
    ck.put("lora/" + a.target + "/B", a.B);
  }
  return ck;
}

}  // namespace sara
