#include "mdiff/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mdiff/rng.hpp"

namespace mdiff {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

// y[M x N] = x[M x K] * w[K x N] + b
template <typename T>
void linear_fwd(const T* x, int M, int K, const T* w, const T* b, T* y, int N) {
    for (int m = 0; m < M; ++m) {
        T* yr = y + size_t(m) * N;
        if (b) {
            std::memcpy(yr, b, sizeof(T) * size_t(N));
        } else {
            std::fill(yr, yr + N, T(0));
        }
        const T* xr = x + size_t(m) * K;
        for (int k = 0; k < K; ++k) {
            const T a = xr[k];
            const T* wr = w + size_t(k) * N;
            for (int n = 0; n < N; ++n) yr[n] += a * wr[n];
        }
    }
}

// accumulates dx += dy * w^T, dw += x^T * dy, db += colsum(dy)
template <typename T>
void linear_bwd(const T* x, int M, int K, const T* w, const T* dy, int N, T* dx, T* dw, T* db) {
    for (int m = 0; m < M; ++m) {
        const T* dyr = dy + size_t(m) * N;
        const T* xr = x + size_t(m) * K;
        if (dx) {
            T* dxr = dx + size_t(m) * K;
            for (int k = 0; k < K; ++k) {
                const T* wr = w + size_t(k) * N;
                T acc = 0;
                for (int n = 0; n < N; ++n) acc += dyr[n] * wr[n];
                dxr[k] += acc;
            }
        }
        for (int k = 0; k < K; ++k) {
            const T a = xr[k];
            T* dwr = dw + size_t(k) * N;
            for (int n = 0; n < N; ++n) dwr[n] += a * dyr[n];
        }
        for (int n = 0; n < N; ++n) db[n] += dyr[n];
    }
}

template <typename T>
void layernorm_fwd(const T* x, int M, int D, const T* w, const T* b, T* y, T* mean, T* rstd) {
    for (int m = 0; m < M; ++m) {
        const T* xr = x + size_t(m) * D;
        T mu = 0;
        for (int d = 0; d < D; ++d) mu += xr[d];
        mu /= T(D);
        T var = 0;
        for (int d = 0; d < D; ++d) {
            T c = xr[d] - mu;
            var += c * c;
        }
        var /= T(D);
        T rs = T(1) / std::sqrt(var + T(kLnEps));
        mean[m] = mu;
        rstd[m] = rs;
        T* yr = y + size_t(m) * D;
        for (int d = 0; d < D; ++d) yr[d] = (xr[d] - mu) * rs * w[d] + b[d];
    }
}

// accumulates dx += grad, dw/db += param grads
template <typename T>
void layernorm_bwd(const T* x, int M, int D, const T* w, const T* mean, const T* rstd,
                   const T* dy, T* dx, T* dw, T* db) {
    for (int m = 0; m < M; ++m) {
        const T* xr = x + size_t(m) * D;
        const T* dyr = dy + size_t(m) * D;
        const T mu = mean[m];
        const T rs = rstd[m];
        T sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int d = 0; d < D; ++d) {
            const T xhat = (xr[d] - mu) * rs;
            const T dxhat = dyr[d] * w[d];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dw[d] += dyr[d] * xhat;
            db[d] += dyr[d];
        }
        sum_dxhat /= T(D);
        sum_dxhat_xhat /= T(D);
        T* dxr = dx + size_t(m) * D;
        for (int d = 0; d < D; ++d) {
            const T xhat = (xr[d] - mu) * rs;
            const T dxhat = dyr[d] * w[d];
            dxr[d] += rs * (dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
        }
    }
}

// Multi-head scaled dot-product attention; queries Lq rows, keys/values Lk
// rows, no masking. att holds the softmax weights, heads x Lq x Lk.
template <typename T>
void attention_fwd(const T* q, int Lq, const T* k, const T* v, int Lk, int heads, int hd, T* att,
                   T* mix) {
    const int D = heads * hd;
    const T scale = T(1) / std::sqrt(T(hd));
    for (int h = 0; h < heads; ++h) {
        const int off = h * hd;
        for (int i = 0; i < Lq; ++i) {
            T* arow = att + (size_t(h) * Lq + i) * Lk;
            const T* qi = q + size_t(i) * D + off;
            T maxs = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < Lk; ++j) {
                const T* kj = k + size_t(j) * D + off;
                T s = 0;
                for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
                s *= scale;
                arow[j] = s;
                if (s > maxs) maxs = s;
            }
            T denom = 0;
            for (int j = 0; j < Lk; ++j) {
                arow[j] = std::exp(arow[j] - maxs);
                denom += arow[j];
            }
            const T inv = T(1) / denom;
            for (int j = 0; j < Lk; ++j) arow[j] *= inv;
            T* mrow = mix + size_t(i) * D + off;
            std::fill(mrow, mrow + hd, T(0));
            for (int j = 0; j < Lk; ++j) {
                const T a = arow[j];
                const T* vj = v + size_t(j) * D + off;
                for (int d = 0; d < hd; ++d) mrow[d] += a * vj[d];
            }
        }
    }
}

// accumulates dq/dk/dv from d_mix using the saved softmax weights.
template <typename T>
void attention_bwd(const T* q, int Lq, const T* k, const T* v, int Lk, int heads, int hd,
                   const T* att, const T* d_mix, T* d_att_scratch, T* dq, T* dk, T* dv) {
    const int D = heads * hd;
    const T scale = T(1) / std::sqrt(T(hd));
    for (int h = 0; h < heads; ++h) {
        const int off = h * hd;
        for (int i = 0; i < Lq; ++i) {
            const T* arow = att + (size_t(h) * Lq + i) * Lk;
            const T* dmr = d_mix + size_t(i) * D + off;
            T* datt = d_att_scratch;
            for (int j = 0; j < Lk; ++j) {
                const T* vj = v + size_t(j) * D + off;
                T acc = 0;
                for (int d = 0; d < hd; ++d) acc += dmr[d] * vj[d];
                datt[j] = acc;
                T* dvj = dv + size_t(j) * D + off;
                const T a = arow[j];
                for (int d = 0; d < hd; ++d) dvj[d] += a * dmr[d];
            }
            // softmax jacobian: ds = att * (datt - sum(att * datt))
            T dot = 0;
            for (int j = 0; j < Lk; ++j) dot += arow[j] * datt[j];
            const T* qi = q + size_t(i) * D + off;
            T* dqi = dq + size_t(i) * D + off;
            for (int j = 0; j < Lk; ++j) {
                const T ds = arow[j] * (datt[j] - dot) * scale;
                const T* kj = k + size_t(j) * D + off;
                T* dkj = dk + size_t(j) * D + off;
                for (int d = 0; d < hd; ++d) {
                    dqi[d] += ds * kj[d];
                    dkj[d] += ds * qi[d];
                }
            }
        }
    }
}

template <typename T>
T gelu(T x) {
    const T u = T(kGeluC) * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
    const T u = T(kGeluC) * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(u);
    const T du = T(kGeluC) * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
void add_inplace(T* dst, const T* src, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename T>
bool all_finite(const T* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(double(x[i]))) return false;
    }
    return true;
}

}  // namespace

void ModelConfig::validate() const {
    if (max_len <= 0 || vocab_size <= 0 || dim <= 0 || n_layers <= 0 || n_heads <= 0 ||
        ffn_dim <= 0 || feat_len <= 0) {
        throw std::invalid_argument("model config fields must all be positive");
    }
    if (dim % n_heads != 0) {
        throw std::invalid_argument("dim must be divisible by n_heads");
    }
}

template <typename T>
void Params<T>::for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerParams<T>& lp = layers[l];
        fn(p + "ln1_w", lp.ln1_w);
        fn(p + "ln1_b", lp.ln1_b);
        fn(p + "self_wq", lp.self_wq);
        fn(p + "self_wk", lp.self_wk);
        fn(p + "self_wv", lp.self_wv);
        fn(p + "self_wo", lp.self_wo);
        fn(p + "self_bq", lp.self_bq);
        fn(p + "self_bk", lp.self_bk);
        fn(p + "self_bv", lp.self_bv);
        fn(p + "self_bo", lp.self_bo);
        fn(p + "ln2_w", lp.ln2_w);
        fn(p + "ln2_b", lp.ln2_b);
        fn(p + "cross_wq", lp.cross_wq);
        fn(p + "cross_wk", lp.cross_wk);
        fn(p + "cross_wv", lp.cross_wv);
        fn(p + "cross_wo", lp.cross_wo);
        fn(p + "cross_bq", lp.cross_bq);
        fn(p + "cross_bk", lp.cross_bk);
        fn(p + "cross_bv", lp.cross_bv);
        fn(p + "cross_bo", lp.cross_bo);
        fn(p + "ln3_w", lp.ln3_w);
        fn(p + "ln3_b", lp.ln3_b);
        fn(p + "ffn_w1", lp.ffn_w1);
        fn(p + "ffn_b1", lp.ffn_b1);
        fn(p + "ffn_w2", lp.ffn_w2);
        fn(p + "ffn_b2", lp.ffn_b2);
    }
    fn("lnf_w", lnf_w);
    fn("lnf_b", lnf_b);
    fn("cls_w", cls_w);
    fn("cls_b", cls_b);
}

template <typename T>
void Params<T>::for_each(
    const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
    const_cast<Params<T>*>(this)->for_each(
        [&fn](const std::string& name, Tensor<T>& t) { fn(name, t); });
}

template <typename T>
static Params<T> make_param_shapes(const ModelConfig& cfg) {
    Params<T> p;
    p.cfg = cfg;
    const int D = cfg.dim, V = cfg.vocab_size, F = cfg.ffn_dim;
    p.tok_emb = Tensor<T>({V, D});
    p.pos_emb = Tensor<T>({cfg.max_len, D});
    p.layers.resize(size_t(cfg.n_layers));
    for (auto& lp : p.layers) {
        lp.ln1_w = Tensor<T>({D});
        lp.ln1_b = Tensor<T>({D});
        lp.self_wq = Tensor<T>({D, D});
        lp.self_wk = Tensor<T>({D, D});
        lp.self_wv = Tensor<T>({D, D});
        lp.self_wo = Tensor<T>({D, D});
        lp.self_bq = Tensor<T>({D});
        lp.self_bk = Tensor<T>({D});
        lp.self_bv = Tensor<T>({D});
        lp.self_bo = Tensor<T>({D});
        lp.ln2_w = Tensor<T>({D});
        lp.ln2_b = Tensor<T>({D});
        lp.cross_wq = Tensor<T>({D, D});
        lp.cross_wk = Tensor<T>({D, D});
        lp.cross_wv = Tensor<T>({D, D});
        lp.cross_wo = Tensor<T>({D, D});
        lp.cross_bq = Tensor<T>({D});
        lp.cross_bk = Tensor<T>({D});
        lp.cross_bv = Tensor<T>({D});
        lp.cross_bo = Tensor<T>({D});
        lp.ln3_w = Tensor<T>({D});
        lp.ln3_b = Tensor<T>({D});
        lp.ffn_w1 = Tensor<T>({D, F});
        lp.ffn_b1 = Tensor<T>({F});
        lp.ffn_w2 = Tensor<T>({F, D});
        lp.ffn_b2 = Tensor<T>({D});
    }
    p.lnf_w = Tensor<T>({D});
    p.lnf_b = Tensor<T>({D});
    p.cls_w = Tensor<T>({D, V});
    p.cls_b = Tensor<T>({V});
    return p;
}

template <typename T>
Params<T> Params<T>::zeros_like(const Params<T>& other) {
    return make_param_shapes<T>(other.cfg);
}

template <typename T>
template <typename U>
Params<U> Params<T>::cast() const {
    Params<U> out = make_param_shapes<U>(cfg);
    std::vector<const Tensor<T>*> src;
    for_each([&src](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
    size_t i = 0;
    out.for_each([&](const std::string&, Tensor<U>& t) {
        t = src[i++]->template cast<U>();
    });
    return out;
}

template <typename T>
int64_t Params<T>::total_parameters() const {
    int64_t n = 0;
    for_each([&n](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
}

template <typename T>
Params<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Params<T> p = make_param_shapes<T>(cfg);
    Rng rng(seed);
    const double proj_scale = 1.0 / std::sqrt(double(cfg.dim));
    p.for_each([&](const std::string& name, Tensor<T>& t) {
        const bool is_norm_w = name.ends_with("ln1_w") || name.ends_with("ln2_w") ||
                               name.ends_with("ln3_w") || name.ends_with("lnf_w");
        const bool is_bias_or_norm_b =
            name.find("_b") != std::string::npos && t.shape.size() == 1;
        if (is_norm_w) {
            std::fill(t.v.begin(), t.v.end(), T(1));
            return;
        }
        if (is_bias_or_norm_b) return;  // zeros
        double scale = proj_scale;
        if (name == "tok_emb" || name == "pos_emb" || name == "cls_w") scale = 0.02;
        for (auto& x : t.v) x = T(rng.normal(scale));
    });
    return p;
}

template <typename T>
Workspace<T>::Workspace(const ModelConfig& c) : cfg(c) {
    const int L = cfg.max_len, D = cfg.dim, S = cfg.feat_len, H = cfg.n_heads, F = cfg.ffn_dim,
              V = cfg.vocab_size;
    x = Tensor<T>({L, D});
    acts.resize(size_t(cfg.n_layers));
    for (auto& a : acts) {
        a.x_in = Tensor<T>({L, D});
        a.ln1_out = Tensor<T>({L, D});
        a.ln1_mean = Tensor<T>({L});
        a.ln1_rstd = Tensor<T>({L});
        a.q = Tensor<T>({L, D});
        a.k = Tensor<T>({L, D});
        a.v = Tensor<T>({L, D});
        a.att = Tensor<T>({H, L, L});
        a.att_mix = Tensor<T>({L, D});
        a.x_after_self = Tensor<T>({L, D});
        a.ln2_out = Tensor<T>({L, D});
        a.ln2_mean = Tensor<T>({L});
        a.ln2_rstd = Tensor<T>({L});
        a.cq = Tensor<T>({L, D});
        a.ck = Tensor<T>({S, D});
        a.cv = Tensor<T>({S, D});
        a.catt = Tensor<T>({H, L, S});
        a.catt_mix = Tensor<T>({L, D});
        a.x_after_cross = Tensor<T>({L, D});
        a.ln3_out = Tensor<T>({L, D});
        a.ln3_mean = Tensor<T>({L});
        a.ln3_rstd = Tensor<T>({L});
        a.ffn_pre = Tensor<T>({L, F});
        a.ffn_act = Tensor<T>({L, F});
    }
    lnf_out = Tensor<T>({L, D});
    lnf_mean = Tensor<T>({L});
    lnf_rstd = Tensor<T>({L});
    logits = Tensor<T>({L, V});
    probs = Tensor<T>({L, V});

    d_x = Tensor<T>({L, D});
    d_tmp = Tensor<T>({L, D});
    d_ln = Tensor<T>({L, D});
    d_q = Tensor<T>({L, D});
    d_k = Tensor<T>({L, D});
    d_v = Tensor<T>({L, D});
    d_mix = Tensor<T>({L, D});
    d_att = Tensor<T>({std::max(L, S)});
    d_ck = Tensor<T>({S, D});
    d_cv = Tensor<T>({S, D});
    d_ffn_pre = Tensor<T>({L, F});
    d_ffn_act = Tensor<T>({L, F});
}

template <typename T>
void forward(const Params<T>& params, const Tensor<T>& feat, const std::vector<int>& ids,
             Workspace<T>& ws) {
    const ModelConfig& cfg = params.cfg;
    const int L = cfg.max_len, D = cfg.dim, S = cfg.feat_len, H = cfg.n_heads,
              hd = cfg.head_dim(), F = cfg.ffn_dim, V = cfg.vocab_size;
    if (int(ids.size()) != L) throw std::invalid_argument("input length mismatch");
    if (feat.shape != std::vector<int>{S, D}) {
        throw std::invalid_argument("feature grid shape mismatch");
    }

    for (int i = 0; i < L; ++i) {
        const int id = ids[i];
        if (id < 0 || id >= V) throw std::invalid_argument("token id out of range");
        const T* te = params.tok_emb.data() + size_t(id) * D;
        const T* pe = params.pos_emb.data() + size_t(i) * D;
        T* xr = ws.x.data() + size_t(i) * D;
        for (int d = 0; d < D; ++d) xr[d] = te[d] + pe[d];
    }

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerParams<T>& lp = params.layers[size_t(l)];
        auto& a = ws.acts[size_t(l)];
        a.x_in.v = ws.x.v;

        layernorm_fwd(a.x_in.data(), L, D, lp.ln1_w.data(), lp.ln1_b.data(), a.ln1_out.data(),
                      a.ln1_mean.data(), a.ln1_rstd.data());
        linear_fwd(a.ln1_out.data(), L, D, lp.self_wq.data(), lp.self_bq.data(), a.q.data(), D);
        linear_fwd(a.ln1_out.data(), L, D, lp.self_wk.data(), lp.self_bk.data(), a.k.data(), D);
        linear_fwd(a.ln1_out.data(), L, D, lp.self_wv.data(), lp.self_bv.data(), a.v.data(), D);
        attention_fwd(a.q.data(), L, a.k.data(), a.v.data(), L, H, hd, a.att.data(),
                      a.att_mix.data());
        a.x_after_self.v = a.x_in.v;
        linear_fwd(a.att_mix.data(), L, D, lp.self_wo.data(), lp.self_bo.data(), ws.d_tmp.data(),
                   D);
        add_inplace(a.x_after_self.data(), ws.d_tmp.data(), int64_t(L) * D);

        layernorm_fwd(a.x_after_self.data(), L, D, lp.ln2_w.data(), lp.ln2_b.data(),
                      a.ln2_out.data(), a.ln2_mean.data(), a.ln2_rstd.data());
        linear_fwd(a.ln2_out.data(), L, D, lp.cross_wq.data(), lp.cross_bq.data(), a.cq.data(), D);
        linear_fwd(feat.data(), S, D, lp.cross_wk.data(), lp.cross_bk.data(), a.ck.data(), D);
        linear_fwd(feat.data(), S, D, lp.cross_wv.data(), lp.cross_bv.data(), a.cv.data(), D);
        attention_fwd(a.cq.data(), L, a.ck.data(), a.cv.data(), S, H, hd, a.catt.data(),
                      a.catt_mix.data());
        a.x_after_cross.v = a.x_after_self.v;
        linear_fwd(a.catt_mix.data(), L, D, lp.cross_wo.data(), lp.cross_bo.data(),
                   ws.d_tmp.data(), D);
        add_inplace(a.x_after_cross.data(), ws.d_tmp.data(), int64_t(L) * D);

        layernorm_fwd(a.x_after_cross.data(), L, D, lp.ln3_w.data(), lp.ln3_b.data(),
                      a.ln3_out.data(), a.ln3_mean.data(), a.ln3_rstd.data());
        linear_fwd(a.ln3_out.data(), L, D, lp.ffn_w1.data(), lp.ffn_b1.data(), a.ffn_pre.data(),
                   F);
        for (int64_t i = 0; i < int64_t(L) * F; ++i) a.ffn_act.v[size_t(i)] = gelu(a.ffn_pre.v[size_t(i)]);
        ws.x.v = a.x_after_cross.v;
        linear_fwd(a.ffn_act.data(), L, F, lp.ffn_w2.data(), lp.ffn_b2.data(), ws.d_tmp.data(),
                   D);
        add_inplace(ws.x.data(), ws.d_tmp.data(), int64_t(L) * D);

        if (!all_finite(ws.x.data(), int64_t(L) * D)) {
            throw std::runtime_error("non-finite activation leaving decoder layer " +
                                     std::to_string(l));
        }
    }

    layernorm_fwd(ws.x.data(), L, D, params.lnf_w.data(), params.lnf_b.data(), ws.lnf_out.data(),
                  ws.lnf_mean.data(), ws.lnf_rstd.data());
    linear_fwd(ws.lnf_out.data(), L, D, params.cls_w.data(), params.cls_b.data(),
               ws.logits.data(), V);
    if (!all_finite(ws.logits.data(), int64_t(L) * V)) {
        throw std::runtime_error("non-finite activation in classifier head");
    }

    for (int i = 0; i < L; ++i) {
        const T* lr = ws.logits.data() + size_t(i) * V;
        T* pr = ws.probs.data() + size_t(i) * V;
        T maxv = lr[0];
        for (int c = 1; c < V; ++c) maxv = std::max(maxv, lr[c]);
        T denom = 0;
        for (int c = 0; c < V; ++c) {
            pr[c] = std::exp(lr[c] - maxv);
            denom += pr[c];
        }
        const T inv = T(1) / denom;
        for (int c = 0; c < V; ++c) pr[c] *= inv;
    }
}

template <typename T>
void backward(const Params<T>& params, const Tensor<T>& feat, const std::vector<int>& ids,
              Workspace<T>& ws, const Tensor<T>& d_logits, Params<T>& grads) {
    const ModelConfig& cfg = params.cfg;
    const int L = cfg.max_len, D = cfg.dim, S = cfg.feat_len, H = cfg.n_heads,
              hd = cfg.head_dim(), F = cfg.ffn_dim, V = cfg.vocab_size;

    // classifier
    ws.d_x.zero();
    Tensor<T>& d_lnf_out = ws.d_tmp;
    d_lnf_out.zero();
    linear_bwd(ws.lnf_out.data(), L, D, params.cls_w.data(), d_logits.data(), V, d_lnf_out.data(),
               grads.cls_w.data(), grads.cls_b.data());
    layernorm_bwd(ws.x.data(), L, D, params.lnf_w.data(), ws.lnf_mean.data(), ws.lnf_rstd.data(),
                  d_lnf_out.data(), ws.d_x.data(), grads.lnf_w.data(), grads.lnf_b.data());

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerParams<T>& lp = params.layers[size_t(l)];
        LayerParams<T>& gl = grads.layers[size_t(l)];
        auto& a = ws.acts[size_t(l)];

        // feed-forward; residual passes d_x straight through
        ws.d_ffn_act.zero();
        linear_bwd(a.ffn_act.data(), L, F, lp.ffn_w2.data(), ws.d_x.data(), D,
                   ws.d_ffn_act.data(), gl.ffn_w2.data(), gl.ffn_b2.data());
        for (int64_t i = 0; i < int64_t(L) * F; ++i) {
            ws.d_ffn_pre.v[size_t(i)] = ws.d_ffn_act.v[size_t(i)] * gelu_grad(a.ffn_pre.v[size_t(i)]);
        }
        ws.d_ln.zero();
        linear_bwd(a.ln3_out.data(), L, D, lp.ffn_w1.data(), ws.d_ffn_pre.data(), F,
                   ws.d_ln.data(), gl.ffn_w1.data(), gl.ffn_b1.data());
        layernorm_bwd(a.x_after_cross.data(), L, D, lp.ln3_w.data(), a.ln3_mean.data(),
                      a.ln3_rstd.data(), ws.d_ln.data(), ws.d_x.data(), gl.ln3_w.data(),
                      gl.ln3_b.data());

        // cross-attention; the feature grid is a constant input, so only
        // parameter gradients flow through ck/cv
        ws.d_mix.zero();
        linear_bwd(a.catt_mix.data(), L, D, lp.cross_wo.data(), ws.d_x.data(), D, ws.d_mix.data(),
                   gl.cross_wo.data(), gl.cross_bo.data());
        ws.d_q.zero();
        ws.d_ck.zero();
        ws.d_cv.zero();
        attention_bwd(a.cq.data(), L, a.ck.data(), a.cv.data(), S, H, hd, a.catt.data(),
                      ws.d_mix.data(), ws.d_att.data(), ws.d_q.data(), ws.d_ck.data(),
                      ws.d_cv.data());
        ws.d_ln.zero();
        linear_bwd(a.ln2_out.data(), L, D, lp.cross_wq.data(), ws.d_q.data(), D, ws.d_ln.data(),
                   gl.cross_wq.data(), gl.cross_bq.data());
        linear_bwd(feat.data(), S, D, lp.cross_wk.data(), ws.d_ck.data(), D,
                   static_cast<T*>(nullptr), gl.cross_wk.data(), gl.cross_bk.data());
        linear_bwd(feat.data(), S, D, lp.cross_wv.data(), ws.d_cv.data(), D,
                   static_cast<T*>(nullptr), gl.cross_wv.data(), gl.cross_bv.data());
        layernorm_bwd(a.x_after_self.data(), L, D, lp.ln2_w.data(), a.ln2_mean.data(),
                      a.ln2_rstd.data(), ws.d_ln.data(), ws.d_x.data(), gl.ln2_w.data(),
                      gl.ln2_b.data());

        // self-attention
        ws.d_mix.zero();
        linear_bwd(a.att_mix.data(), L, D, lp.self_wo.data(), ws.d_x.data(), D, ws.d_mix.data(),
                   gl.self_wo.data(), gl.self_bo.data());
        ws.d_q.zero();
        ws.d_k.zero();
        ws.d_v.zero();
        attention_bwd(a.q.data(), L, a.k.data(), a.v.data(), L, H, hd, a.att.data(),
                      ws.d_mix.data(), ws.d_att.data(), ws.d_q.data(), ws.d_k.data(),
                      ws.d_v.data());
        ws.d_ln.zero();
        linear_bwd(a.ln1_out.data(), L, D, lp.self_wq.data(), ws.d_q.data(), D, ws.d_ln.data(),
                   gl.self_wq.data(), gl.self_bq.data());
        linear_bwd(a.ln1_out.data(), L, D, lp.self_wk.data(), ws.d_k.data(), D, ws.d_ln.data(),
                   gl.self_wk.data(), gl.self_bk.data());
        linear_bwd(a.ln1_out.data(), L, D, lp.self_wv.data(), ws.d_v.data(), D, ws.d_ln.data(),
                   gl.self_wv.data(), gl.self_bv.data());
        layernorm_bwd(a.x_in.data(), L, D, lp.ln1_w.data(), a.ln1_mean.data(), a.ln1_rstd.data(),
                      ws.d_ln.data(), ws.d_x.data(), gl.ln1_w.data(), gl.ln1_b.data());
    }

    for (int i = 0; i < L; ++i) {
        const T* dxr = ws.d_x.data() + size_t(i) * D;
        T* dte = grads.tok_emb.data() + size_t(ids[size_t(i)]) * D;
        T* dpe = grads.pos_emb.data() + size_t(i) * D;
        for (int d = 0; d < D; ++d) {
            dte[d] += dxr[d];
            dpe[d] += dxr[d];
        }
    }
}

template <typename T>
Prediction read_prediction(const Workspace<T>& ws, int mask_id) {
    const int L = ws.cfg.max_len, V = ws.cfg.vocab_size;
    Prediction out;
    out.ids.resize(size_t(L));
    out.conf.resize(size_t(L));
    for (int i = 0; i < L; ++i) {
        const T* pr = ws.probs.data() + size_t(i) * V;
        int best = -1;
        T bestp = -1;
        for (int c = 0; c < V; ++c) {
            if (c == mask_id) continue;
            if (pr[c] > bestp) {
                bestp = pr[c];
                best = c;
            }
        }
        out.ids[size_t(i)] = best;
        out.conf[size_t(i)] = float(bestp);
    }
    return out;
}

template <typename T>
ForwardResult<T> run_forward(const Params<T>& params, const Tensor<T>& feat,
                             const std::vector<int>& ids, int mask_id) {
    Workspace<T> ws(params.cfg);
    forward(params, feat, ids, ws);
    ForwardResult<T> r;
    r.logits = ws.logits;
    r.probs = ws.probs;
    r.pred = read_prediction(ws, mask_id);
    return r;
}

template struct Params<float>;
template struct Params<double>;
template struct Workspace<float>;
template struct Workspace<double>;
template Params<float> init_params<float>(const ModelConfig&, uint64_t);
template Params<double> init_params<double>(const ModelConfig&, uint64_t);
template void forward<float>(const Params<float>&, const Tensor<float>&, const std::vector<int>&,
                             Workspace<float>&);
template void forward<double>(const Params<double>&, const Tensor<double>&,
                              const std::vector<int>&, Workspace<double>&);
template void backward<float>(const Params<float>&, const Tensor<float>&, const std::vector<int>&,
                              Workspace<float>&, const Tensor<float>&, Params<float>&);
template void backward<double>(const Params<double>&, const Tensor<double>&,
                               const std::vector<int>&, Workspace<double>&, const Tensor<double>&,
                               Params<double>&);
template Prediction read_prediction<float>(const Workspace<float>&, int);
template Prediction read_prediction<double>(const Workspace<double>&, int);
template ForwardResult<float> run_forward<float>(const Params<float>&, const Tensor<float>&,
                                                 const std::vector<int>&, int);
template ForwardResult<double> run_forward<double>(const Params<double>&, const Tensor<double>&,
                                                   const std::vector<int>&, int);
template Params<double> Params<float>::cast<double>() const;
template Params<float> Params<double>::cast<float>() const;

}  // namespace mdiff
