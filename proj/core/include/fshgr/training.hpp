#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fshgr/adam.hpp"
#include "fshgr/config.hpp"
#include "fshgr/episodes.hpp"
#include "fshgr/layers.hpp"

namespace fshgr {

struct EvalPoint {
  int step = 0;
  std::string split;
  double loss = 0, acc = 0, stderr_ = 0;
  int episodes = 0;
  double wall_s = 0;
};

struct RunReport {
  std::vector<EvalPoint> points;
  EvalPoint final_test;
  int best_step = 0;
  double best_val_acc = -1.0;
  bool val_overlaps_train = false;

  void write_line(std::ostream& out, const EvalPoint& p) const;
  void write_lines(std::ostream& out) const;
  ConfigMap summary() const;
};

inline double binomial_stderr(double p, int n) {
  return n > 0 ? std::sqrt(p * (1.0 - p) / n) : 0.0;
}

inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Forward pass of one episode; returns (query loss, correct?).
template <typename T>
std::pair<double, bool> forward_episode(Graph<T>& g, const Model<T>& model,
                                        const ParamSet<T>& ps, const WindowPool& pool,
                                        const Episode& ep) {
  g.clear();
  const auto embed = [&](Graph<T>& gr, const Tensor<T>& w) {
    return model.embed_window(gr, ps, w);
  };
  Tensor<T> encoded = encode_task<T>(g, pool, ep, embed, model.cfg.n_way);
  Tensor<T> logits = model.forward_encoded(g, ps, encoded);
  Tensor<T> loss = cross_entropy(logits, ep.query_slot);
  const auto lv = logits.value();
  int arg = 0;
  for (int i = 1; i < model.cfg.n_way; ++i)
    if (lv[static_cast<std::size_t>(i)] > lv[static_cast<std::size_t>(arg)]) arg = i;
  return {static_cast<double>(loss.value()[0]), arg == ep.query_slot};
}

namespace detail {

// Runs fn(chunk_index, episode_index) over [0, n) split into fixed chunks.
// Chunk boundaries depend only on (n, workers), so reductions done in chunk
// order are bit-reproducible for a given worker count.
template <typename Fn>
void parallel_chunks(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  const int per = (n + workers - 1) / workers;
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int lo = w * per;
    const int hi = std::min(n, lo + per);
    if (lo >= hi) break;
    threads.emplace_back([&fn, w, lo, hi]() {
      for (int i = lo; i < hi; ++i) fn(w, i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace detail

struct EvalOutcome {
  double loss = 0, acc = 0, stderr_ = 0;
  int episodes = 0;
};

template <typename T>
EvalOutcome evaluate_episodes(const Model<T>& model, const ParamSet<T>& ps,
                              const WindowPool& pool, std::span<const Episode> episodes,
                              int workers) {
  const int n = static_cast<int>(episodes.size());
  std::vector<double> losses(static_cast<std::size_t>(n), 0.0);
  std::vector<char> correct(static_cast<std::size_t>(n), 0);
  workers = std::max(1, std::min(resolve_workers(workers), n));
  std::vector<Graph<T>> graphs(static_cast<std::size_t>(workers));
  detail::parallel_chunks(n, workers, [&](int w, int i) {
    auto [loss, ok] = forward_episode(graphs[static_cast<std::size_t>(w)], model, ps, pool,
                                      episodes[static_cast<std::size_t>(i)]);
    losses[static_cast<std::size_t>(i)] = loss;
    correct[static_cast<std::size_t>(i)] = ok ? 1 : 0;
  });
  EvalOutcome out;
  out.episodes = n;
  double loss_sum = 0;
  int n_correct = 0;
  for (int i = 0; i < n; ++i) {
    loss_sum += losses[static_cast<std::size_t>(i)];
    n_correct += correct[static_cast<std::size_t>(i)];
  }
  out.loss = n > 0 ? loss_sum / n : 0.0;
  out.acc = n > 0 ? static_cast<double>(n_correct) / n : 0.0;
  out.stderr_ = binomial_stderr(out.acc, n);
  return out;
}

// Samples a fixed-seed episode stream from the pool and evaluates it; never
// mutates parameters.
template <typename T>
EvalOutcome evaluate(const Model<T>& model, const ParamSet<T>& ps, const WindowPool& pool,
                     int n_episodes, SamplingMode mode, std::uint64_t seed, int workers,
                     bool label_shuffle = true) {
  RngStream rng = RngStream(seed).fork("eval-episodes");
  std::vector<Episode> episodes;
  episodes.reserve(static_cast<std::size_t>(n_episodes));
  for (int i = 0; i < n_episodes; ++i)
    episodes.push_back(
        sample_episode(pool, model.cfg.n_way, model.cfg.k_shot, mode, rng, label_shuffle));
  return evaluate_episodes(model, ps, pool, episodes, workers);
}

// One optimizer step over a batch of episodes: per-episode forward/backward
// with the gradient seeded at 1/B, per-chunk gradient buffers reduced in
// chunk order, then a single Adam update. Returns the mean query loss.
template <typename T>
class BatchTrainer {
 public:
  BatchTrainer(const Model<T>& model, const WindowPool& pool, int workers)
      : model_(&model), pool_(&pool), workers_(std::max(1, resolve_workers(workers))) {}

  double step(ParamSet<T>& ps, Adam<T>& adam, std::span<const Episode> batch) {
    const int n = static_cast<int>(batch.size());
    const int workers = std::max(1, std::min(workers_, n));
    if (chunk_grads_.size() != static_cast<std::size_t>(workers) ||
        chunk_grads_[0].size() != ps.entries.size()) {
      chunk_grads_.assign(static_cast<std::size_t>(workers), make_grad_store(ps));
      graphs_ = std::vector<Graph<T>>(static_cast<std::size_t>(workers));
    }
    for (auto& gs : chunk_grads_) zero_grad_store(gs);
    std::vector<double> losses(static_cast<std::size_t>(n), 0.0);
    const T seed = static_cast<T>(1.0 / n);

    detail::parallel_chunks(n, workers, [&](int w, int i) {
      Graph<T>& g = graphs_[static_cast<std::size_t>(w)];
      g.clear();
      const auto embed = [&](Graph<T>& gr, const Tensor<T>& win) {
        return model_->embed_window(gr, ps, win);
      };
      const Episode& ep = batch[static_cast<std::size_t>(i)];
      Tensor<T> encoded = encode_task<T>(g, *pool_, ep, embed, model_->cfg.n_way);
      Tensor<T> logits = model_->forward_encoded(g, ps, encoded);
      Tensor<T> loss = cross_entropy(logits, ep.query_slot);
      losses[static_cast<std::size_t>(i)] = static_cast<double>(loss.value()[0]);
      g.backward(loss, seed);
      g.add_param_grads(chunk_grads_[static_cast<std::size_t>(w)]);
    });

    double mean_loss = 0;
    for (double l : losses) mean_loss += l;
    mean_loss /= n;
    if (!std::isfinite(mean_loss))
      throw NumericError("training loss is not finite (batch mean = " +
                         std::to_string(mean_loss) + ")");

    GradStore<T>& total = chunk_grads_[0];
    for (std::size_t w = 1; w < chunk_grads_.size(); ++w)
      accumulate_grad_store(total, chunk_grads_[w]);
    adam.step(ps, total);
    return mean_loss;
  }

 private:
  const Model<T>* model_;
  const WindowPool* pool_;
  int workers_;
  std::vector<GradStore<T>> chunk_grads_;
  std::vector<Graph<T>> graphs_;
};

template <typename T>
struct TrainResult {
  ParamSet<T> params;  // best-validation snapshot
  RunReport report;
};

// Algorithm-1 style loop: sample a batch of tasks, predict each query, update
// with the batch loss; periodic meta-val evaluation keeps the best snapshot,
// which is finally scored on meta-test.
template <typename T>
TrainResult<T> train_model(const MetaSplit& split, const ModelConfig& mcfg,
                           const TrainConfig& tcfg, std::ostream* log = nullptr) {
  mcfg.validate();
  tcfg.validate();
  check_pool_feasibility(split.train, tcfg.n_way, tcfg.k_shot, tcfg.sampling_mode);
  check_pool_feasibility(split.val, tcfg.n_way, tcfg.k_shot, tcfg.sampling_mode);
  check_pool_feasibility(split.test, tcfg.n_way, tcfg.k_shot, tcfg.sampling_mode);

  ParamSet<T> ps;
  RngStream init_rng = RngStream(mcfg.seed).fork("init");
  Model<T> model(mcfg, ps, init_rng);
  Adam<T> adam(ps, AdamConfig<T>{static_cast<T>(tcfg.lr)});
  BatchTrainer<T> trainer(model, split.train, tcfg.workers);

  RngStream episode_rng = RngStream(tcfg.seed).fork("train-episodes");
  const std::uint64_t val_seed = RngStream(tcfg.seed).fork("eval-val").seed();
  const std::uint64_t test_seed = RngStream(tcfg.seed).fork("eval-test").seed();

  TrainResult<T> result;
  result.report.val_overlaps_train = split.val_overlaps_train;
  result.params = ps;

  const int batch = tcfg.resolved_batch_size();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Episode> batch_eps;
  double last_loss = 0;

  for (int step = 1; step <= tcfg.max_steps; ++step) {
    batch_eps.clear();
    for (int b = 0; b < batch; ++b)
      batch_eps.push_back(sample_episode(split.train, tcfg.n_way, tcfg.k_shot,
                                         tcfg.sampling_mode, episode_rng, tcfg.label_shuffle));
    try {
      last_loss = trainer.step(ps, adam, batch_eps);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
    }

    if (step % tcfg.eval_every == 0 || step == tcfg.max_steps) {
      const EvalOutcome val = evaluate(model, ps, split.val, tcfg.eval_episodes,
                                       tcfg.sampling_mode, val_seed, tcfg.workers,
                                       tcfg.label_shuffle);
      EvalPoint p;
      p.step = step;
      p.split = to_string(Split::MetaVal);
      p.loss = val.loss;
      p.acc = val.acc;
      p.stderr_ = val.stderr_;
      p.episodes = val.episodes;
      p.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.report.points.push_back(p);
      if (log) {
        result.report.write_line(*log, p);
        *log << std::flush;
      }
      if (val.acc > result.report.best_val_acc) {
        result.report.best_val_acc = val.acc;
        result.report.best_step = step;
        result.params = ps;
      }
    }
  }

  Model<T> best_model(model);
  const EvalOutcome test = evaluate(best_model, result.params, split.test, tcfg.eval_episodes,
                                    tcfg.sampling_mode, test_seed, tcfg.workers,
                                    tcfg.label_shuffle);
  result.report.final_test.step = result.report.best_step;
  result.report.final_test.split = to_string(Split::MetaTest);
  result.report.final_test.loss = test.loss;
  result.report.final_test.acc = test.acc;
  result.report.final_test.stderr_ = test.stderr_;
  result.report.final_test.episodes = test.episodes;
  result.report.final_test.wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (log) {
    result.report.write_line(*log, result.report.final_test);
    *log << "# last train batch loss " << last_loss << "\n" << std::flush;
  }
  return result;
}

// --- RunReport ------------------------------------------------------------------

inline void RunReport::write_line(std::ostream& out, const EvalPoint& p) const {
  out << "step=" << p.step << " split=" << p.split << " loss=" << p.loss << " acc=" << p.acc
      << " stderr=" << p.stderr_ << " episodes=" << p.episodes << " wall_s=" << p.wall_s
      << "\n";
}

inline void RunReport::write_lines(std::ostream& out) const {
  for (const auto& p : points) write_line(out, p);
  write_line(out, final_test);
}

inline ConfigMap RunReport::summary() const {
  ConfigMap m;
  m.set_int("report.best_step", best_step);
  m.set_double("report.best_val_acc", best_val_acc);
  m.set_double("report.test_acc", final_test.acc);
  m.set_double("report.test_stderr", final_test.stderr_);
  m.set_double("report.test_loss", final_test.loss);
  m.set_int("report.test_episodes", final_test.episodes);
  m.set_int("report.eval_points", static_cast<std::int64_t>(points.size()));
  m.set_bool("report.val_overlaps_train", val_overlaps_train);
  m.set_double("report.wall_s", final_test.wall_s);
  return m;
}

}  // namespace fshgr
