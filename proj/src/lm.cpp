#include "slmicl/lm.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "slmicl/rng.hpp"

namespace slmicl {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
template <typename T>
using CMapV = Eigen::Map<const RowVec<T>>;
template <typename T>
using MapV = Eigen::Map<RowVec<T>>;

constexpr double kLnEps = 1e-5;

template <typename T>
CMapM<T> cmat(const Tensor<T>& t) {
  return CMapM<T>(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MapM<T> mat(Tensor<T>& t) {
  return MapM<T>(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
CMapV<T> cvec(const Tensor<T>& t) {
  return CMapV<T>(t.data.data(), static_cast<Eigen::Index>(t.numel()));
}
template <typename T>
MapV<T> vec(Tensor<T>& t) {
  return MapV<T>(t.data.data(), static_cast<Eigen::Index>(t.numel()));
}

// Column sums accumulated row by row. Eigen's colwise reduction picks its
// traversal from runtime alignment, which breaks bitwise reproducibility.
template <typename T, typename Derived>
void add_col_sums(Tensor<T>& out, const Eigen::MatrixBase<Derived>& m) {
  auto acc = vec(out);
  for (Eigen::Index r = 0; r < m.rows(); ++r) acc += m.row(r);
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const auto a = x.array();
  return (static_cast<T>(0.5) * a * (T(1) + (c * (a + static_cast<T>(0.044715) * a.cube())).tanh())).matrix();
}

template <typename T>
Mat<T> gelu_grad(const Mat<T>& x) {
  const T c = static_cast<T>(0.7978845608028654);
  const auto a = x.array();
  const auto th = (c * (a + static_cast<T>(0.044715) * a.cube())).tanh().eval();
  const auto dinner = c * (T(1) + static_cast<T>(3 * 0.044715) * a.square());
  return (static_cast<T>(0.5) * (T(1) + th) + static_cast<T>(0.5) * a * (T(1) - th.square()) * dinner).matrix();
}

// Row-wise LayerNorm; keeps the normalized input and reciprocal std for the
// backward pass.
template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, LayerNormCache<T>* cache) {
  const Eigen::Index rows = x.rows(), d = x.cols();
  Mat<T> xhat(rows, d);
  std::vector<T> rstd(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    xhat.row(r) = (x.row(r).array() - mean) * rs;
    rstd[static_cast<std::size_t>(r)] = rs;
  }
  Mat<T> y = (xhat.array().rowwise() * cvec(gain).array()).rowwise() + cvec(bias).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

// dx from dy; accumulates dgain/dbias when given.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LayerNormCache<T>& cache, const Tensor<T>& gain,
                           Tensor<T>* dgain, Tensor<T>* dbias) {
  const Eigen::Index rows = dy.rows(), d = dy.cols();
  if (dgain) add_col_sums(*dgain, (dy.array() * cache.xhat.array()).matrix());
  if (dbias) add_col_sums(*dbias, dy);
  Mat<T> dxhat = dy.array().rowwise() * cvec(gain).array();
  Mat<T> dx(rows, d);
  const T inv_d = T(1) / static_cast<T>(d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T m1 = dxhat.row(r).sum() * inv_d;
    const T m2 = (dxhat.row(r).array() * cache.xhat.row(r).array()).sum() * inv_d;
    dx.row(r) = (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2) *
                cache.rstd[static_cast<std::size_t>(r)];
  }
  return dx;
}

template <typename T>
struct LayerCache {
  LayerNormCache<T> ln1, ln2;
  Mat<T> h1;                  // ln1 output, S x d
  Mat<T> qkv;                 // S x 3d
  std::vector<Mat<T>> probs;  // per head, S x (P + S)
  Mat<T> attn;                // concatenated head outputs, S x d
  Mat<T> h2;                  // ln2 output
  Mat<T> fc_pre, fc_act;      // S x ff
};

template <typename T>
struct Activations {
  std::vector<LayerCache<T>> layers;
  Mat<T> x_final;  // residual stream after the last block
  LayerNormCache<T> lnf;
  Mat<T> hf;       // final-LN output of the rows that produce logits
};

template <typename T>
class Engine {
 public:
  Engine(const ModelParams<T>& model, const PromptBank<T>* prompts)
      : m_(model), p_(prompts), cfg_(model.config) {
    if (p_) {
      require(p_->keys.size() == static_cast<std::size_t>(cfg_.n_layers),
              "prompt bank layer count does not match the model");
      require(p_->params[p_->sep].numel() == static_cast<std::size_t>(cfg_.d_model),
              "prompt bank width does not match the model");
    }
  }

  int prompt_len() const { return p_ ? p_->prompt_len : 0; }

  void check_tokens(std::span<const TokenId> tokens) const {
    if (tokens.empty()) fail(ErrorCode::invalid_argument, "forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg_.max_seq_len) {
      fail(ErrorCode::invalid_argument, "forward: sequence length " + std::to_string(tokens.size()) +
                                            " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }
    for (TokenId t : tokens) {
      if (t < 0 || t >= cfg_.vocab_size) {
        fail(ErrorCode::invalid_argument, "forward: token id " + std::to_string(t) + " outside vocabulary");
      }
    }
  }

  Mat<T> embed(std::span<const TokenId> tokens) const {
    const auto S = static_cast<Eigen::Index>(tokens.size());
    const auto E = cmat(m_.params[m_.tok_embed]);
    const auto Pos = cmat(m_.params[m_.pos_embed]);
    Mat<T> x(S, cfg_.d_model);
    for (Eigen::Index t = 0; t < S; ++t) {
      const TokenId tok = tokens[static_cast<std::size_t>(t)];
      if (p_ && tok == p_->sep_token) {
        x.row(t) = cvec(p_->params[p_->sep]) + Pos.row(t);
      } else {
        x.row(t) = E.row(tok) + Pos.row(t);
      }
    }
    return x;
  }

  // One transformer block; fills `cache` and optionally the attention maps.
  Mat<T> block_forward(int l, const Mat<T>& x, LayerCache<T>& cache, T* attn_out) const {
    const LayerSlots& s = m_.layers[static_cast<std::size_t>(l)];
    const auto& P = m_.params;
    const Eigen::Index S = x.rows(), d = cfg_.d_model, H = cfg_.n_heads, hd = cfg_.head_dim();
    const Eigen::Index np = prompt_len();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    cache.h1 = layer_norm(x, P[s.ln1_gain], P[s.ln1_bias], &cache.ln1);
    cache.qkv = cache.h1 * cmat(P[s.qkv_weight]);
    cache.qkv.rowwise() += cvec(P[s.qkv_bias]);
    cache.attn.resize(S, d);
    cache.probs.resize(static_cast<std::size_t>(H));

    Mat<T> K(np + S, hd), V(np + S, hd), Q(S, hd);
    for (Eigen::Index h = 0; h < H; ++h) {
      Q = cache.qkv.block(0, h * hd, S, hd);
      if (np > 0) {
        K.topRows(np) = cmat(p_->params[p_->keys[static_cast<std::size_t>(l)]]).block(0, h * hd, np, hd);
        V.topRows(np) = cmat(p_->params[p_->values[static_cast<std::size_t>(l)]]).block(0, h * hd, np, hd);
      }
      K.bottomRows(S) = cache.qkv.block(0, d + h * hd, S, hd);
      V.bottomRows(S) = cache.qkv.block(0, 2 * d + h * hd, S, hd);

      Mat<T>& A = cache.probs[static_cast<std::size_t>(h)];
      A.noalias() = (Q * K.transpose()) * scale;
      for (Eigen::Index i = 0; i < S; ++i) {
        const Eigen::Index valid = np + i + 1;
        auto row = A.row(i);
        const T mx = row.head(valid).maxCoeff();
        row.head(valid) = (row.head(valid).array() - mx).exp().matrix();
        row.head(valid) /= row.head(valid).sum();
        row.tail(np + S - valid).setZero();
      }
      cache.attn.block(0, h * hd, S, hd).noalias() = A * V;
      if (attn_out) {
        std::copy(A.data(), A.data() + A.size(), attn_out + static_cast<std::size_t>(h) * static_cast<std::size_t>(A.size()));
      }
    }

    Mat<T> x_mid = x + cache.attn * cmat(P[s.proj_weight]);
    x_mid.rowwise() += cvec(P[s.proj_bias]);
    cache.h2 = layer_norm(x_mid, P[s.ln2_gain], P[s.ln2_bias], &cache.ln2);
    cache.fc_pre = cache.h2 * cmat(P[s.fc_weight]);
    cache.fc_pre.rowwise() += cvec(P[s.fc_bias]);
    cache.fc_act = gelu(cache.fc_pre);
    Mat<T> out = x_mid + cache.fc_act * cmat(P[s.fc2_weight]);
    out.rowwise() += cvec(P[s.fc2_bias]);
    return out;
  }

  // Runs all blocks; `rows` selects which positions get final-LN + logits.
  Mat<T> run(std::span<const TokenId> tokens, const std::vector<Eigen::Index>& rows,
             Activations<T>& act, ForwardTrace<T>* trace) const {
    const Eigen::Index S = static_cast<Eigen::Index>(tokens.size());
    Mat<T> x = embed(tokens);
    act.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      T* attn_dst = nullptr;
      if (trace && !trace->attentions.empty()) {
        attn_dst = trace->attentions.data() + static_cast<std::size_t>(l) * static_cast<std::size_t>(cfg_.n_heads) *
                                                  static_cast<std::size_t>(S) * static_cast<std::size_t>(trace->key_len());
      }
      x = block_forward(l, x, act.layers[static_cast<std::size_t>(l)], attn_dst);
    }
    act.x_final = std::move(x);
    Mat<T> sel(static_cast<Eigen::Index>(rows.size()), cfg_.d_model);
    for (std::size_t i = 0; i < rows.size(); ++i) sel.row(static_cast<Eigen::Index>(i)) = act.x_final.row(rows[i]);
    act.hf = layer_norm(sel, m_.params[m_.lnf_gain], m_.params[m_.lnf_bias], &act.lnf);
    return act.hf * cmat(m_.params[m_.lm_head]).transpose();
  }

  // Backpropagates d(logits of `rows`) through the network into `grads`.
  void backprop(std::span<const TokenId> tokens, const std::vector<Eigen::Index>& rows,
                const Mat<T>& dlogits, const Activations<T>& act, GradTarget wrt,
                ParamSet<T>& grads) const {
    const bool full = wrt == GradTarget::full_model;
    const Eigen::Index S = static_cast<Eigen::Index>(tokens.size());
    const Eigen::Index d = cfg_.d_model, H = cfg_.n_heads, hd = cfg_.head_dim();
    const Eigen::Index np = prompt_len();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const auto& P = m_.params;
    auto g = [&](std::size_t slot) -> Tensor<T>* { return full ? &grads[slot] : nullptr; };

    const auto W_out = cmat(P[m_.lm_head]);
    if (full) mat(grads[m_.lm_head]).noalias() += dlogits.transpose() * act.hf;
    Mat<T> dhf = dlogits * W_out;
    Mat<T> dsel = layer_norm_backward(dhf, act.lnf, P[m_.lnf_gain], g(m_.lnf_gain), g(m_.lnf_bias));
    Mat<T> dx = Mat<T>::Zero(S, d);
    for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += dsel.row(static_cast<Eigen::Index>(i));

    Mat<T> K(np + S, hd), V(np + S, hd), dP, dS;
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const LayerSlots& s = m_.layers[static_cast<std::size_t>(l)];
      const LayerCache<T>& c = act.layers[static_cast<std::size_t>(l)];

      // MLP
      if (full) {
        mat(grads[s.fc2_weight]).noalias() += c.fc_act.transpose() * dx;
        add_col_sums(grads[s.fc2_bias], dx);
      }
      Mat<T> dfc = dx * cmat(P[s.fc2_weight]).transpose();
      dfc.array() *= gelu_grad(c.fc_pre).array();
      if (full) {
        mat(grads[s.fc_weight]).noalias() += c.h2.transpose() * dfc;
        add_col_sums(grads[s.fc_bias], dfc);
      }
      Mat<T> dh2 = dfc * cmat(P[s.fc_weight]).transpose();
      dx += layer_norm_backward(dh2, c.ln2, P[s.ln2_gain], g(s.ln2_gain), g(s.ln2_bias));

      // attention output projection
      if (full) {
        mat(grads[s.proj_weight]).noalias() += c.attn.transpose() * dx;
        add_col_sums(grads[s.proj_bias], dx);
      }
      Mat<T> dattn = dx * cmat(P[s.proj_weight]).transpose();

      Mat<T> dqkv(S, 3 * d);
      for (Eigen::Index h = 0; h < H; ++h) {
        const Mat<T>& A = c.probs[static_cast<std::size_t>(h)];
        if (np > 0) {
          K.topRows(np) = cmat(p_->params[p_->keys[static_cast<std::size_t>(l)]]).block(0, h * hd, np, hd);
          V.topRows(np) = cmat(p_->params[p_->values[static_cast<std::size_t>(l)]]).block(0, h * hd, np, hd);
        }
        K.bottomRows(S) = c.qkv.block(0, d + h * hd, S, hd);
        V.bottomRows(S) = c.qkv.block(0, 2 * d + h * hd, S, hd);
        const auto dO = dattn.block(0, h * hd, S, hd);

        dP.noalias() = dO * V.transpose();
        Mat<T> dV = A.transpose() * dO;
        const auto rowdot = (dP.array() * A.array()).rowwise().sum().eval();
        dS = (A.array() * (dP.array().colwise() - rowdot)).matrix() * scale;
        dqkv.block(0, h * hd, S, hd).noalias() = dS * K;
        Mat<T> dK = dS.transpose() * c.qkv.block(0, h * hd, S, hd);
        dqkv.block(0, d + h * hd, S, hd) = dK.bottomRows(S);
        dqkv.block(0, 2 * d + h * hd, S, hd) = dV.bottomRows(S);
        if (np > 0 && grads.contains(p_->params[p_->keys[static_cast<std::size_t>(l)]].name)) {
          mat(grads.at(p_->params[p_->keys[static_cast<std::size_t>(l)]].name)).block(0, h * hd, np, hd) += dK.topRows(np);
          mat(grads.at(p_->params[p_->values[static_cast<std::size_t>(l)]].name)).block(0, h * hd, np, hd) += dV.topRows(np);
        }
      }
      if (full) {
        mat(grads[s.qkv_weight]).noalias() += c.h1.transpose() * dqkv;
        add_col_sums(grads[s.qkv_bias], dqkv);
      }
      Mat<T> dh1 = dqkv * cmat(P[s.qkv_weight]).transpose();
      dx += layer_norm_backward(dh1, c.ln1, P[s.ln1_gain], g(s.ln1_gain), g(s.ln1_bias));
    }

    // embeddings
    const bool has_sep_grad = p_ && grads.contains(p_->params[p_->sep].name);
    for (Eigen::Index t = 0; t < S; ++t) {
      const TokenId tok = tokens[static_cast<std::size_t>(t)];
      if (p_ && tok == p_->sep_token) {
        if (has_sep_grad) vec(grads.at(p_->params[p_->sep].name)) += dx.row(t);
      } else if (full) {
        mat(grads[m_.tok_embed]).row(tok) += dx.row(t);
      }
      if (full) mat(grads[m_.pos_embed]).row(t) += dx.row(t);
    }
  }

 private:
  const ModelParams<T>& m_;
  const PromptBank<T>* p_;
  const LmConfig& cfg_;
};

template <typename T>
double log_sum_exp(std::span<const T> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : row) mx = std::max(mx, static_cast<double>(v));
  double acc = 0.0;
  for (T v : row) acc += std::exp(static_cast<double>(v) - mx);
  return mx + std::log(acc);
}

}  // namespace

// ---------------------------------------------------------------------------
// config

void LmConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::config, "invalid LmConfig: " + what); };
  if (vocab_size < 2) bad("vocab_size must be >= 2");
  if (d_model < 1) bad("d_model must be >= 1");
  if (n_layers < 1) bad("n_layers must be >= 1");
  if (n_heads < 1) bad("n_heads must be >= 1");
  if (d_model % n_heads != 0) {
    bad("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_ff < 1) bad("d_ff must be >= 1");
  if (max_seq_len < 1) bad("max_seq_len must be >= 1");
}

void to_json(nlohmann::json& j, const LmConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},       {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
       {"dtype", c.dtype == DType::f32 ? "f32" : "f64"},            {"tie_embeddings", c.tie_embeddings}};
}

void from_json(const nlohmann::json& j, LmConfig& c) {
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  const auto dt = j.value("dtype", std::string("f32"));
  if (dt != "f32" && dt != "f64") fail(ErrorCode::config, "unknown dtype '" + dt + "'");
  c.dtype = dt == "f32" ? DType::f32 : DType::f64;
  c.tie_embeddings = j.value("tie_embeddings", true);
}

// ---------------------------------------------------------------------------
// parameters

template <typename T>
void ModelParams<T>::bind() {
  tok_embed = params.index_of("embed.tok");
  pos_embed = params.index_of("embed.pos");
  lnf_gain = params.index_of("final_ln.gain");
  lnf_bias = params.index_of("final_ln.bias");
  lm_head = config.tie_embeddings ? tok_embed : params.index_of("lm_head.weight");
  layers.clear();
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerSlots s{};
    s.ln1_gain = params.index_of(p + "ln1.gain");
    s.ln1_bias = params.index_of(p + "ln1.bias");
    s.qkv_weight = params.index_of(p + "attn.qkv.weight");
    s.qkv_bias = params.index_of(p + "attn.qkv.bias");
    s.proj_weight = params.index_of(p + "attn.proj.weight");
    s.proj_bias = params.index_of(p + "attn.proj.bias");
    s.ln2_gain = params.index_of(p + "ln2.gain");
    s.ln2_bias = params.index_of(p + "ln2.bias");
    s.fc_weight = params.index_of(p + "mlp.fc.weight");
    s.fc_bias = params.index_of(p + "mlp.fc.bias");
    s.fc2_weight = params.index_of(p + "mlp.proj.weight");
    s.fc2_bias = params.index_of(p + "mlp.proj.bias");
    layers.push_back(s);
  }
}

template <typename T>
ModelParams<T> make_model_layout(const LmConfig& config) {
  config.validate();
  const auto V = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  ModelParams<T> m;
  m.config = config;
  auto& p = m.params;
  p.add("embed.tok", {V, d});
  p.add("embed.pos", {static_cast<std::size_t>(config.max_seq_len), d});
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string n = "layer" + std::to_string(l) + ".";
    p.add(n + "ln1.gain", {d});
    p.add(n + "ln1.bias", {d});
    p.add(n + "attn.qkv.weight", {d, 3 * d});
    p.add(n + "attn.qkv.bias", {3 * d});
    p.add(n + "attn.proj.weight", {d, d});
    p.add(n + "attn.proj.bias", {d});
    p.add(n + "ln2.gain", {d});
    p.add(n + "ln2.bias", {d});
    p.add(n + "mlp.fc.weight", {d, ff});
    p.add(n + "mlp.fc.bias", {ff});
    p.add(n + "mlp.proj.weight", {ff, d});
    p.add(n + "mlp.proj.bias", {d});
  }
  p.add("final_ln.gain", {d});
  p.add("final_ln.bias", {d});
  if (!config.tie_embeddings) p.add("lm_head.weight", {V, d});
  m.bind();
  return m;
}

template <typename T>
ModelParams<T> init_model(const LmConfig& config, std::uint64_t seed) {
  ModelParams<T> m = make_model_layout<T>(config);
  const double std_base = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * config.n_layers);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    auto& t = m.params[i];
    const std::string& n = t.name;
    const auto ends_with = [&](const std::string& suf) {
      return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".gain")) {
      std::fill(t.data.begin(), t.data.end(), T(1));
    } else if (ends_with(".bias")) {
      std::fill(t.data.begin(), t.data.end(), T(0));
    } else {
      const double sd = (ends_with("attn.proj.weight") || ends_with("mlp.proj.weight")) ? std_resid : std_base;
      Rng rng(derive_seed(seed, i));
      for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, sd));
    }
  }
  return m;
}

template <typename To, typename From>
ModelParams<To> cast_model(const ModelParams<From>& m) {
  ModelParams<To> out;
  out.config = m.config;
  out.config.dtype = std::is_same_v<To, double> ? DType::f64 : DType::f32;
  out.params = m.params.template cast<To>();
  out.bind();
  return out;
}

template <typename T>
void PromptBank<T>::bind(int n_layers) {
  keys.clear();
  values.clear();
  for (int l = 0; l < n_layers; ++l) {
    keys.push_back(params.index_of("prompt.layer" + std::to_string(l) + ".key"));
    values.push_back(params.index_of("prompt.layer" + std::to_string(l) + ".value"));
  }
  sep = params.index_of("embed.sep");
  prompt_len = static_cast<int>(params[keys.front()].rows());
}

template <typename T>
PromptBank<T> make_prompt_layout(const LmConfig& config, int prompt_len, TokenId sep_token) {
  require(prompt_len >= 0, "prompt_len must be >= 0");
  require(sep_token >= 0 && sep_token < config.vocab_size, "separation token outside vocabulary");
  PromptBank<T> b;
  b.prompt_len = prompt_len;
  b.sep_token = sep_token;
  const auto d = static_cast<std::size_t>(config.d_model);
  for (int l = 0; l < config.n_layers; ++l) {
    b.params.add("prompt.layer" + std::to_string(l) + ".key", {static_cast<std::size_t>(prompt_len), d});
    b.params.add("prompt.layer" + std::to_string(l) + ".value", {static_cast<std::size_t>(prompt_len), d});
  }
  b.params.add("embed.sep", {d});
  b.bind(config.n_layers);
  b.prompt_len = prompt_len;
  return b;
}

template <typename T>
PromptBank<T> init_prompts(const ModelParams<T>& model, int prompt_len, TokenId sep_token, std::uint64_t seed) {
  PromptBank<T> b = make_prompt_layout<T>(model.config, prompt_len, sep_token);
  for (std::size_t i = 0; i < b.params.size(); ++i) {
    if (i == b.sep) continue;
    Rng rng(derive_seed(seed, i));
    for (auto& v : b.params[i].data) v = static_cast<T>(rng.normal(0.0, 0.02));
  }
  const auto& E = model.params[model.tok_embed];
  const auto d = static_cast<std::size_t>(model.config.d_model);
  std::copy(E.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(sep_token) * d),
            E.data.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(sep_token) + 1) * d),
            b.params[b.sep].data.begin());
  return b;
}

template <typename To, typename From>
PromptBank<To> cast_prompts(const PromptBank<From>& p) {
  PromptBank<To> out;
  out.prompt_len = p.prompt_len;
  out.sep_token = p.sep_token;
  out.params = p.params.template cast<To>();
  out.keys = p.keys;
  out.values = p.values;
  out.sep = p.sep;
  return out;
}

// ---------------------------------------------------------------------------
// forward / loss / backward

template <typename T>
ForwardTrace<T> forward(const ModelParams<T>& model, std::span<const TokenId> tokens,
                        const PromptBank<T>* prompts, ForwardOptions opts) {
  Engine<T> engine(model, prompts);
  engine.check_tokens(tokens);
  const int S = static_cast<int>(tokens.size());
  ForwardTrace<T> trace;
  trace.seq_len = S;
  trace.vocab_size = model.config.vocab_size;
  trace.n_layers = model.config.n_layers;
  trace.n_heads = model.config.n_heads;
  trace.prompt_len = engine.prompt_len();
  if (opts.record_attention) {
    trace.attentions.assign(static_cast<std::size_t>(trace.n_layers) * static_cast<std::size_t>(trace.n_heads) *
                                static_cast<std::size_t>(S) * static_cast<std::size_t>(trace.key_len()),
                            T(0));
  }
  std::vector<Eigen::Index> rows;
  if (opts.all_logits) {
    for (int i = 0; i < S; ++i) rows.push_back(i);
  } else {
    rows.push_back(S - 1);
  }
  Activations<T> act;
  Mat<T> logits = engine.run(tokens, rows, act, &trace);
  trace.logits.assign(static_cast<std::size_t>(S) * static_cast<std::size_t>(trace.vocab_size), T(0));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(logits.row(static_cast<Eigen::Index>(i)).data(),
              logits.row(static_cast<Eigen::Index>(i)).data() + trace.vocab_size,
              trace.logits.begin() + static_cast<std::ptrdiff_t>(rows[i]) * trace.vocab_size);
  }
  return trace;
}

template <typename T>
double loss_ce(const ForwardTrace<T>& trace, int position, TokenId target) {
  if (position < 0 || position >= trace.seq_len) {
    fail(ErrorCode::invalid_argument, "loss_ce: position " + std::to_string(position) + " out of range");
  }
  if (target < 0 || target >= trace.vocab_size) {
    fail(ErrorCode::invalid_argument, "loss_ce: target " + std::to_string(target) + " out of range");
  }
  const auto row = trace.logits_row(position);
  return log_sum_exp(row) - static_cast<double>(row[static_cast<std::size_t>(target)]);
}

template <typename T>
LossAndGrad<T> backward(const ModelParams<T>& model, std::span<const TokenId> tokens,
                        const PromptBank<T>* prompts, std::span<const LossTerm> terms, GradTarget wrt) {
  Engine<T> engine(model, prompts);
  engine.check_tokens(tokens);
  if (wrt == GradTarget::prompts_only && !prompts) {
    fail(ErrorCode::invalid_argument, "backward: prompts_only requires a prompt bank");
  }
  require(!terms.empty(), "backward: no loss terms");
  const int S = static_cast<int>(tokens.size());
  const int V = model.config.vocab_size;

  // Distinct positions in first-seen order; each gets one logits row.
  std::vector<Eigen::Index> rows;
  std::vector<int> row_of(static_cast<std::size_t>(S), -1);
  for (const auto& t : terms) {
    if (t.position < 0 || t.position >= S) {
      fail(ErrorCode::invalid_argument, "backward: position " + std::to_string(t.position) + " out of range");
    }
    if (t.target < 0 || t.target >= V) {
      fail(ErrorCode::invalid_argument, "backward: target " + std::to_string(t.target) + " out of range");
    }
    if (row_of[static_cast<std::size_t>(t.position)] < 0) {
      row_of[static_cast<std::size_t>(t.position)] = static_cast<int>(rows.size());
      rows.push_back(t.position);
    }
  }

  Activations<T> act;
  Mat<T> logits = engine.run(tokens, rows, act, nullptr);

  LossAndGrad<T> out;
  Mat<T> dlogits = Mat<T>::Zero(logits.rows(), logits.cols());
  for (const auto& t : terms) {
    const Eigen::Index r = row_of[static_cast<std::size_t>(t.position)];
    const std::span<const T> row(logits.row(r).data(), static_cast<std::size_t>(V));
    const double lse = log_sum_exp(row);
    out.loss += t.weight * (lse - static_cast<double>(row[static_cast<std::size_t>(t.target)]));
    for (int v = 0; v < V; ++v) {
      dlogits(r, v) += static_cast<T>(t.weight * std::exp(static_cast<double>(row[static_cast<std::size_t>(v)]) - lse));
    }
    dlogits(r, t.target) -= static_cast<T>(t.weight);
  }

  if (wrt == GradTarget::full_model) {
    out.grads = model.params.zeros_like();
    if (prompts) {
      for (const auto& t : prompts->params) out.grads.add(t.name, t.shape);
    }
  } else {
    out.grads = prompts->params.zeros_like();
  }
  engine.backprop(tokens, rows, dlogits, act, wrt, out.grads);
  return out;
}

template <typename T>
TokenId argmax_token(std::span<const T> row, TokenId begin, TokenId end) {
  if (end < 0) end = static_cast<TokenId>(row.size());
  require(begin >= 0 && begin < end && end <= static_cast<TokenId>(row.size()), "argmax_token: bad range");
  TokenId best = begin;
  for (TokenId i = begin + 1; i < end; ++i) {
    if (row[static_cast<std::size_t>(i)] > row[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

template <typename T>
TokenId predict_label(const ModelParams<T>& model, const PromptBank<T>* prompts,
                      std::span<const TokenId> tokens, TokenId sep_token) {
  if (tokens.size() < 2 || tokens.back() != sep_token) {
    fail(ErrorCode::invalid_argument, "predict_label: episode layout must end with the separation token");
  }
  ForwardOptions opts;
  opts.record_attention = false;
  opts.all_logits = false;
  const auto trace = forward(model, tokens, prompts, opts);
  return argmax_token(trace.logits_row(trace.seq_len - 1));
}

#define SLMICL_INSTANTIATE(T)                                                                       \
  template struct ModelParams<T>;                                                                   \
  template struct PromptBank<T>;                                                                    \
  template ModelParams<T> make_model_layout<T>(const LmConfig&);                                    \
  template ModelParams<T> init_model<T>(const LmConfig&, std::uint64_t);                            \
  template PromptBank<T> make_prompt_layout<T>(const LmConfig&, int, TokenId);                      \
  template PromptBank<T> init_prompts<T>(const ModelParams<T>&, int, TokenId, std::uint64_t);       \
  template ForwardTrace<T> forward<T>(const ModelParams<T>&, std::span<const TokenId>,              \
                                      const PromptBank<T>*, ForwardOptions);                        \
  template double loss_ce<T>(const ForwardTrace<T>&, int, TokenId);                                 \
  template LossAndGrad<T> backward<T>(const ModelParams<T>&, std::span<const TokenId>,              \
                                      const PromptBank<T>*, std::span<const LossTerm>, GradTarget); \
  template TokenId argmax_token<T>(std::span<const T>, TokenId, TokenId);                           \
  template TokenId predict_label<T>(const ModelParams<T>&, const PromptBank<T>*,                    \
                                    std::span<const TokenId>, TokenId);

SLMICL_INSTANTIATE(float)
SLMICL_INSTANTIATE(double)
#undef SLMICL_INSTANTIATE

template ModelParams<double> cast_model<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_model<float, double>(const ModelParams<double>&);
template ModelParams<float> cast_model<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_model<double, double>(const ModelParams<double>&);
template PromptBank<double> cast_prompts<double, float>(const PromptBank<float>&);
template PromptBank<float> cast_prompts<float, double>(const PromptBank<double>&);

}  // namespace slmicl
