#pragma once

#include <string>
#include <vector>

#include "fshgr/gradcheck.hpp"
#include "fshgr/layers.hpp"
#include "fshgr/rng.hpp"

namespace fshgr {

struct OpCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;
  bool pass = false;
};

// Finite-difference verification of every primitive op and of the composed
// model (cross_entropy over the full forward path) on a tiny config, at
// float64. Each op is checked on `seeds_per_op` random inputs.
inline std::vector<OpCheckResult> run_gradient_suite(std::uint64_t seed, int seeds_per_op = 10,
                                                     double tol = 1e-4, double h = 1e-5) {
  std::vector<OpCheckResult> results;

  const auto random_vec = [](RngStream& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
  };

  // Aggregates per-seed checks of one op into a single suite row.
  const auto run_n = [&](const std::string& name, int n_seeds, auto&& one_seed) {
    OpCheckResult r;
    r.name = name;
    for (int s = 0; s < n_seeds; ++s) {
      RngStream rng = RngStream(seed).fork(name, static_cast<std::uint64_t>(s));
      const GradCheckResult g = one_seed(rng);
      r.max_rel_err = std::max(r.max_rel_err, g.max_rel_err);
      r.checked += g.checked;
      r.skipped += g.skipped;
    }
    r.pass = r.max_rel_err < tol && r.checked > 0;
    results.push_back(r);
  };
  const auto run = [&](const std::string& name, auto&& one_seed) {
    run_n(name, seeds_per_op, one_seed);
  };

  run("matmul", [&](RngStream& rng) {
    auto x = random_vec(rng, 3 * 4);
    auto w = random_vec(rng, 4 * 2);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> b = g.leaf({4, 2}, w);
          return sum(matmul(t, b));
        },
        x, {3, 4}, h);
  });

  run("matmul_rhs", [&](RngStream& rng) {
    auto a = random_vec(rng, 3 * 4);
    auto x = random_vec(rng, 4 * 2);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> av = g.leaf({3, 4}, a);
          return sum(matmul(av, t));
        },
        x, {4, 2}, h);
  });

  for (int d : {1, 2, 4}) {
    run("conv1d_causal_d" + std::to_string(d), [&, d](RngStream& rng) {
      auto x = random_vec(rng, 2 * 8);
      auto w = random_vec(rng, 3 * 2 * 2);
      GradCheckResult rx = grad_check(
          [&](Graph<double>& g, Tensor<double> t) {
            Tensor<double> wv = g.leaf({3, 2, 2}, w);
            return sum(conv1d_causal(t, wv, d));
          },
          x, {2, 8}, h);
      GradCheckResult rw = grad_check(
          [&](Graph<double>& g, Tensor<double> t) {
            Tensor<double> xv = g.leaf({2, 8}, x);
            return sum(conv1d_causal(xv, t, d));
          },
          w, {3, 2, 2}, h);
      rx.max_rel_err = std::max(rx.max_rel_err, rw.max_rel_err);
      rx.checked += rw.checked;
      rx.skipped += rw.skipped;
      return rx;
    });
  }

  run("softmax_lastdim", [&](RngStream& rng) {
    auto x = random_vec(rng, 2 * 5);
    auto w = random_vec(rng, 2 * 5);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> wv = g.leaf({2, 5}, w);
          return sum(mul(softmax_lastdim(t), wv));
        },
        x, {2, 5}, h);
  });

  run("causal_softmax_rows", [&](RngStream& rng) {
    auto x = random_vec(rng, 4 * 4);
    auto w = random_vec(rng, 4 * 4);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> wv = g.leaf({4, 4}, w);
          return sum(mul(causal_softmax_rows(t), wv));
        },
        x, {4, 4}, h);
  });

  run("relu", [&](RngStream& rng) {
    auto x = random_vec(rng, 7);
    auto w = random_vec(rng, 7);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> wv = g.leaf({7}, w);
          return sum(mul(relu(t), wv));
        },
        x, {7}, h);
  });

  run("sigmoid", [&](RngStream& rng) {
    auto x = random_vec(rng, 7);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) { return sum(sigmoid(t)); }, x, {7}, h);
  });

  run("tanh", [&](RngStream& rng) {
    auto x = random_vec(rng, 7);
    return grad_check([&](Graph<double>& g, Tensor<double> t) { return sum(tanh(t)); }, x,
                      {7}, h);
  });

  run("add_mul_scale", [&](RngStream& rng) {
    auto x = random_vec(rng, 6);
    auto y = random_vec(rng, 6);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> yv = g.leaf({6}, y);
          return sum(scale(mul(add(t, yv), t), 0.7));
        },
        x, {6}, h);
  });

  run("add_bias_cols", [&](RngStream& rng) {
    auto x = random_vec(rng, 3 * 4);
    auto b = random_vec(rng, 3);
    GradCheckResult rx = grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> bv = g.leaf({3}, b);
          return sum(tanh(add_bias_cols(t, bv)));
        },
        x, {3, 4}, h);
    GradCheckResult rb = grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> xv = g.leaf({3, 4}, x);
          return sum(tanh(add_bias_cols(xv, t)));
        },
        b, {3}, h);
    rx.max_rel_err = std::max(rx.max_rel_err, rb.max_rel_err);
    rx.checked += rb.checked;
    return rx;
  });

  run("concat_channels", [&](RngStream& rng) {
    auto x = random_vec(rng, 2 * 3);
    auto y = random_vec(rng, 4 * 3);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> yv = g.leaf({4, 3}, y, false);
          return sum(tanh(concat_channels(t, yv)));
        },
        x, {2, 3}, h);
  });

  run("reshape_transpose_column_slice", [&](RngStream& rng) {
    auto x = random_vec(rng, 4 * 3);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> tr = transpose(reshape(t, {4, 3}));  // [3 x 4]
          Tensor<double> col = column(tr, 1);                 // [3]
          Tensor<double> sl = slice_rows(tr, 0, 2);           // [2 x 4]
          std::vector<Tensor<double>> cols{col, col};
          return add(sum(stack_columns(std::span<const Tensor<double>>(cols.data(), 2))),
                     sum(tanh(sl)));
        },
        x, {4, 3}, h);
  });

  run("cross_entropy", [&](RngStream& rng) {
    auto x = random_vec(rng, 5);
    const int label = rng.uniform_int(5);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) { return cross_entropy(t, label); }, x, {5},
        h);
  });

  // Fan-out: one tensor feeding two consumers must accumulate gradients.
  run("dag_fanout", [&](RngStream& rng) {
    auto x = random_vec(rng, 5);
    return grad_check(
        [&](Graph<double>& g, Tensor<double> t) {
          Tensor<double> a = tanh(t);
          return add(sum(mul(a, t)), sum(sigmoid(a)));
        },
        x, {5}, h);
  });

  // End-to-end: cross_entropy of the composed model on a tiny config, one run
  // per embedding variant, differentiating through every parameter.
  const int e2e_seeds = std::max(1, seeds_per_op / 5);
  for (EmbeddingKind kind : {EmbeddingKind::FC, EmbeddingKind::LSTM, EmbeddingKind::TBlockI,
                             EmbeddingKind::TBlockII}) {
    run_n("model_e2e_" + to_string(kind), e2e_seeds, [&, kind](RngStream& rng) {
      ModelConfig cfg;
      cfg.embedding.kind = kind;
      cfg.embedding.input_channels = 3;
      cfg.embedding.window_len = 12;
      cfg.embedding.out_dim = 8;
      cfg.embedding.hidden_time = 6;
      cfg.n_way = 3;
      cfg.k_shot = 1;
      cfg.tcn_filters = 4;
      cfg.tcn_kernel = 2;
      cfg.attention.d_k = 4;
      cfg.attention.d_v = 4;
      cfg.seed = rng.next_u64();

      ParamSet<double> ps;
      RngStream init = RngStream(cfg.seed).fork("init");
      Model<double> model(cfg, ps, init);

      const int l = cfg.seq_len();
      std::vector<std::vector<double>> windows;
      for (int i = 0; i < l; ++i)
        windows.push_back(random_vec(
            rng, static_cast<std::size_t>(cfg.embedding.input_channels * cfg.embedding.window_len)));
      const int query_slot = rng.uniform_int(cfg.n_way);

      return grad_check_params(
          [&](Graph<double>& g) {
            std::vector<Tensor<double>> cols;
            for (int i = 0; i < l; ++i) {
              Tensor<double> win =
                  g.leaf({cfg.embedding.input_channels, cfg.embedding.window_len}, windows[static_cast<std::size_t>(i)]);
              Tensor<double> feat = model.embed_window(g, ps, win);
              std::vector<double> label(static_cast<std::size_t>(cfg.n_way), 0.0);
              if (i < l - 1) label[static_cast<std::size_t>(i % cfg.n_way)] = 1.0;
              cols.push_back(concat_channels(feat, g.leaf({cfg.n_way}, label)));
            }
            Tensor<double> encoded =
                stack_columns(std::span<const Tensor<double>>(cols.data(), cols.size()));
            Tensor<double> logits = model.forward_encoded(g, ps, encoded);
            return cross_entropy(logits, query_slot);
          },
          ps, h, tol);
    });
  }

  return results;
}

}  // namespace fshgr
