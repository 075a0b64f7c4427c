#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fshgr/config.hpp"
#include "fshgr/params.hpp"
#include "fshgr/rng.hpp"
#include "fshgr/tensor.hpp"

namespace fshgr {

// Number of temporal blocks for sequence length l: Z = ceil(log2 l).
inline int tcn_num_blocks(int seq_len) {
  if (seq_len < 2) throw ParameterError("temporal conv net: sequence length must be >= 2, got " +
                                        std::to_string(seq_len));
  int z = 0, p = 1;
  while (p < seq_len) {
    p <<= 1;
    ++z;
  }
  return z;
}

inline std::vector<int> tcn_dilations(int seq_len) {
  const int z = tcn_num_blocks(seq_len);
  std::vector<int> d(static_cast<std::size_t>(z));
  int cur = 1;
  for (int i = 0; i < z; ++i) {
    d[static_cast<std::size_t>(i)] = cur;
    cur *= 2;
  }
  return d;
}

namespace init {
// Fan-in scaled uniform bound for weight matrices; biases start at zero.
template <typename T>
T fan_in_bound(int fan_in) {
  return static_cast<T>(std::sqrt(1.0 / fan_in));
}
}  // namespace init

// Per-position linear map over columns: x [in x l] -> W x + b [out x l].
template <typename T>
struct Linear {
  int w = -1, b = -1;
  int in = 0, out = 0;

  Linear() = default;
  Linear(ParamSet<T>& ps, RngStream& rng, const std::string& prefix, int in_dim, int out_dim)
      : in(in_dim), out(out_dim) {
    w = ps.add_uniform(prefix + ".w", {out, in}, init::fan_in_bound<T>(in), rng);
    b = ps.add(prefix + ".b", {out});
  }

  Tensor<T> forward(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& x) const {
    return add_bias_cols(matmul(use_param(g, ps, w), x), use_param(g, ps, b));
  }
};

// Dilated causal convolution with bias.
template <typename T>
struct CausalConv {
  int w = -1, b = -1;
  int c_in = 0, c_out = 0, kernel = 0, dilation = 1;

  CausalConv() = default;
  CausalConv(ParamSet<T>& ps, RngStream& rng, const std::string& prefix, int cin, int cout,
             int k, int d)
      : c_in(cin), c_out(cout), kernel(k), dilation(d) {
    w = ps.add_uniform(prefix + ".w", {cout, cin, k}, init::fan_in_bound<T>(cin * k), rng);
    b = ps.add(prefix + ".b", {cout});
  }

  Tensor<T> forward(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& x) const {
    return add_bias_cols(conv1d_causal(x, use_param(g, ps, w), dilation),
                         use_param(g, ps, b));
  }
};

// Two dilated causal convolutions, each followed by ReLU. With concat_input
// the input rides along the channel dimension, so C_out = C_in + f; the
// embedding variants reuse the conv stack without the concat to keep the
// feature width at exactly f.
template <typename T>
struct TemporalBlock {
  CausalConv<T> conv1, conv2;
  int c_in = 0, filters = 0;
  bool concat_input = true;

  TemporalBlock() = default;
  TemporalBlock(ParamSet<T>& ps, RngStream& rng, const std::string& prefix, int cin, int f,
                int k, int d, bool concat = true)
      : conv1(ps, rng, prefix + ".conv1", cin, f, k, d),
        conv2(ps, rng, prefix + ".conv2", f, f, k, d),
        c_in(cin),
        filters(f),
        concat_input(concat) {}

  int out_channels() const { return concat_input ? c_in + filters : filters; }

  Tensor<T> forward(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& x) const {
    Tensor<T> h = relu(conv1.forward(g, ps, x));
    h = relu(conv2.forward(g, ps, h));
    return concat_input ? concat_channels(x, h) : h;
  }
};

// Chain of Z = ceil(log2 l) temporal blocks with dilations [1, 2, 4, ...].
template <typename T>
struct TemporalConvNet {
  std::vector<TemporalBlock<T>> blocks;
  int c_in = 0, c_out = 0;

  TemporalConvNet() = default;
  TemporalConvNet(ParamSet<T>& ps, RngStream& rng, const std::string& prefix, int cin,
                  int seq_len, int filters, int kernel)
      : c_in(cin) {
    const auto dil = tcn_dilations(seq_len);
    int c = cin;
    for (std::size_t i = 0; i < dil.size(); ++i) {
      blocks.emplace_back(ps, rng, prefix + ".block" + std::to_string(i), c, filters, kernel,
                          dil[i]);
      c += filters;
    }
    c_out = c;
  }

  Tensor<T> forward(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (const auto& b : blocks) h = b.forward(g, ps, h);
    return h;
  }
};

// Scaled dot-product attention with per-position linear Q/K/V maps; the
// attended values are concatenated back onto the input channels.
template <typename T>
struct AttentionLayer {
  Linear<T> q, k, v;
  int d_k = 0, d_v = 0;
  bool causal = true;
  int c_in = 0;

  AttentionLayer() = default;
  AttentionLayer(ParamSet<T>& ps, RngStream& rng, const std::string& prefix, int cin,
                 const AttentionConfig& cfg)
      : q(ps, rng, prefix + ".q", cin, cfg.d_k),
        k(ps, rng, prefix + ".k", cin, cfg.d_k),
        v(ps, rng, prefix + ".v", cin, cfg.d_v),
        d_k(cfg.d_k),
        d_v(cfg.d_v),
        causal(cfg.causal_mask),
        c_in(cin) {}

  int out_channels() const { return c_in + d_v; }

  Tensor<T> forward(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& x) const {
    Tensor<T> qm = q.forward(g, ps, x);  // [d_k x l]
    Tensor<T> km = k.forward(g, ps, x);  // [d_k x l]
    Tensor<T> vm = v.forward(g, ps, x);  // [d_v x l]
    Tensor<T> scores = matmul(transpose(qm), km);  // [l x l], row = query position
    scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_k))));
    Tensor<T> attn = causal ? causal_softmax_rows(scores) : softmax_lastdim(scores);
    Tensor<T> attended = matmul(vm, transpose(attn));  // [d_v x l]
    return concat_channels(x, attended);
  }
};

// Single LSTM layer unrolled over the window; gate order i, f, g, o.
template <typename T>
struct LstmLayer {
  int wx = -1, wh = -1, b = -1;
  int in = 0, hidden = 0;

  LstmLayer() = default;
  LstmLayer(ParamSet<T>& ps, RngStream& rng, const std::string& prefix, int in_dim, int h)
      : in(in_dim), hidden(h) {
    wx = ps.add_uniform(prefix + ".wx", {4 * h, in}, init::fan_in_bound<T>(in), rng);
    wh = ps.add_uniform(prefix + ".wh", {4 * h, h}, init::fan_in_bound<T>(h), rng);
    b = ps.add(prefix + ".b", {4 * h});
  }

  // x [in x W] -> hidden states [hidden x W]
  Tensor<T> forward(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& x) const {
    const int w_len = x.shape()[1];
    Tensor<T> wxp = use_param(g, ps, wx);
    Tensor<T> whp = use_param(g, ps, wh);
    Tensor<T> bp = use_param(g, ps, b);
    Tensor<T> h = g.zeros({hidden, 1});
    Tensor<T> c = g.zeros({hidden, 1});
    std::vector<Tensor<T>> states;
    states.reserve(static_cast<std::size_t>(w_len));
    for (int t = 0; t < w_len; ++t) {
      Tensor<T> xt = reshape(column(x, t), {in, 1});
      Tensor<T> pre = add_bias_cols(add(matmul(wxp, xt), matmul(whp, h)), bp);
      Tensor<T> gi = sigmoid(slice_rows(pre, 0, hidden));
      Tensor<T> gf = sigmoid(slice_rows(pre, hidden, 2 * hidden));
      Tensor<T> gg = tanh(slice_rows(pre, 2 * hidden, 3 * hidden));
      Tensor<T> go = sigmoid(slice_rows(pre, 3 * hidden, 4 * hidden));
      c = add(mul(gf, c), mul(gi, gg));
      h = mul(go, tanh(c));
      states.push_back(reshape(h, {hidden}));
    }
    return stack_columns(std::span<const Tensor<T>>(states.data(), states.size()));
  }
};

// Embedding module: converts one [N_S x W] window into an out_dim feature
// vector. Regardless of variant, the last two layers are FCs over the time
// axis (W -> hidden_time with ReLU, then hidden_time -> 1).
template <typename T>
struct Embedding {
  EmbeddingConfig cfg;
  Linear<T> per_time;                      // FC variant
  LstmLayer<T> lstm;                       // LSTM variant
  std::vector<TemporalBlock<T>> tblocks;   // TBlock variants, no input concat
  Linear<T> time_fc1, time_fc2;

  Embedding() = default;
  Embedding(ParamSet<T>& ps, RngStream& rng, const std::string& prefix,
            const EmbeddingConfig& ecfg)
      : cfg(ecfg) {
    cfg.validate();
    switch (cfg.kind) {
      case EmbeddingKind::FC:
        per_time = Linear<T>(ps, rng, prefix + ".fc", cfg.input_channels, cfg.out_dim);
        break;
      case EmbeddingKind::LSTM:
        lstm = LstmLayer<T>(ps, rng, prefix + ".lstm", cfg.input_channels, cfg.out_dim);
        break;
      case EmbeddingKind::TBlockI:
        tblocks.emplace_back(ps, rng, prefix + ".tb0", cfg.input_channels, cfg.out_dim, 3, 1,
                             false);
        break;
      case EmbeddingKind::TBlockII:
        tblocks.emplace_back(ps, rng, prefix + ".tb0", cfg.input_channels, cfg.out_dim, 3, 1,
                             false);
        tblocks.emplace_back(ps, rng, prefix + ".tb1", cfg.out_dim, cfg.out_dim, 3, 2, false);
        break;
    }
    time_fc1 = Linear<T>(ps, rng, prefix + ".time_fc1", cfg.window_len, cfg.hidden_time);
    time_fc2 = Linear<T>(ps, rng, prefix + ".time_fc2", cfg.hidden_time, 1);
  }

  // window [input_channels x window_len] -> [out_dim]
  Tensor<T> forward(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& window) const {
    const auto& sh = window.shape();
    if (sh.size() != 2 || sh[0] != cfg.input_channels || sh[1] != cfg.window_len)
      throw DimensionError("embedding: window shape " + shape_str(sh) + " does not match [" +
                           std::to_string(cfg.input_channels) + "x" +
                           std::to_string(cfg.window_len) + "]");
    Tensor<T> h;
    switch (cfg.kind) {
      case EmbeddingKind::FC:
        h = per_time.forward(g, ps, window);
        break;
      case EmbeddingKind::LSTM:
        h = lstm.forward(g, ps, window);
        break;
      case EmbeddingKind::TBlockI:
      case EmbeddingKind::TBlockII: {
        h = window;
        for (const auto& tb : tblocks) h = tb.forward(g, ps, h);
        break;
      }
    }
    // h is [out_dim x W]; collapse the time axis W -> hidden_time -> 1.
    Tensor<T> ht = transpose(h);                            // [W x out_dim]
    Tensor<T> z = relu(time_fc1.forward(g, ps, ht));        // [hidden_time x out_dim]
    Tensor<T> z2 = time_fc2.forward(g, ps, z);              // [1 x out_dim]
    return reshape(z2, {cfg.out_dim});
  }
};

// The composed architecture: four attention layers, the first three each
// followed by a temporal conv net, and a final FC head that reads the feature
// column at the query position.
template <typename T>
struct Model {
  ModelConfig cfg;
  Embedding<T> embedding;
  std::vector<AttentionLayer<T>> attn;
  std::vector<TemporalConvNet<T>> tcn;
  Linear<T> head;

  Model(const ModelConfig& mc, ParamSet<T>& ps, RngStream& rng) : cfg(mc) {
    cfg.validate();
    const int l = cfg.seq_len();
    embedding = Embedding<T>(ps, rng, "embed", cfg.embedding);
    int c = cfg.embedding.out_dim + cfg.n_way;
    for (int i = 0; i < 4; ++i) {
      attn.emplace_back(ps, rng, "attn" + std::to_string(i), c, cfg.attention);
      c = attn.back().out_channels();
      if (i < 3) {
        tcn.emplace_back(ps, rng, "tcn" + std::to_string(i), c, l, cfg.tcn_filters,
                         cfg.tcn_kernel);
        c = tcn.back().c_out;
      }
    }
    head = Linear<T>(ps, rng, "head", c, cfg.n_way);
  }

  // Channel counts after each of the 7 blocks (attn0, tcn0, ..., attn3).
  std::vector<int> expected_stage_channels() const {
    std::vector<int> out;
    for (int i = 0; i < 4; ++i) {
      out.push_back(attn[static_cast<std::size_t>(i)].out_channels());
      if (i < 3) out.push_back(tcn[static_cast<std::size_t>(i)].c_out);
    }
    return out;
  }

  Tensor<T> embed_window(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& window) const {
    return embedding.forward(g, ps, window);
  }

  // encoded [(out_dim + N) x l] -> logits [N]. read_pos defaults to the last
  // position (the query slot); pass an explicit index when the buffer is
  // wider than the task.
  Tensor<T> forward_encoded(Graph<T>& g, const ParamSet<T>& ps, const Tensor<T>& encoded,
                            int read_pos = -1, std::vector<int>* channel_trace = nullptr) const {
    const auto& sh = encoded.shape();
    if (sh.size() != 2 || sh[0] != cfg.embedding.out_dim + cfg.n_way)
      throw DimensionError("model: encoded task shape " + shape_str(sh) +
                           " does not match expected channels " +
                           std::to_string(cfg.embedding.out_dim + cfg.n_way));
    const int l = sh[1];
    if (read_pos < 0) read_pos = l - 1;
    if (read_pos >= l)
      throw ParameterError("model: read position " + std::to_string(read_pos) +
                           " outside sequence of length " + std::to_string(l));
    Tensor<T> h = encoded;
    for (int i = 0; i < 4; ++i) {
      h = attn[static_cast<std::size_t>(i)].forward(g, ps, h);
      if (channel_trace) channel_trace->push_back(h.shape()[0]);
      if (i < 3) {
        h = tcn[static_cast<std::size_t>(i)].forward(g, ps, h);
        if (channel_trace) channel_trace->push_back(h.shape()[0]);
      }
    }
    Tensor<T> query_col = reshape(column(h, read_pos), {h.shape()[0], 1});
    Tensor<T> logits = head.forward(g, ps, query_col);  // [N x 1]
    return reshape(logits, {cfg.n_way});
  }
};

// Builds the full parameter set for a config; entry order is fixed by
// construction order and the RNG stream is derived from cfg.seed.
template <typename T>
ParamSet<T> make_model_params(const ModelConfig& cfg) {
  ParamSet<T> ps;
  RngStream rng = RngStream(cfg.seed).fork("init");
  Model<T> model(cfg, ps, rng);
  return ps;
}

}  // namespace fshgr
