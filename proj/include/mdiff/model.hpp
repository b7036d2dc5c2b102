#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mdiff/tensor.hpp"

namespace mdiff {

struct ModelConfig {
    int max_len = 25;     // token positions
    int vocab_size = 96;  // characters + [MASK] + [PAD]
    int dim = 64;         // embedding / channel width
    int n_layers = 2;
    int n_heads = 4;
    int ffn_dim = 256;
    int feat_len = 25;  // conditioning feature positions

    int head_dim() const { return dim / n_heads; }
    void validate() const;  // throws std::invalid_argument
};

// One decoder block: pre-norm self-attention (bidirectional), pre-norm
// cross-attention over the feature grid, pre-norm feed-forward.
template <typename T>
struct LayerParams {
    Tensor<T> ln1_w, ln1_b;
    Tensor<T> self_wq, self_wk, self_wv, self_wo;
    Tensor<T> self_bq, self_bk, self_bv, self_bo;
    Tensor<T> ln2_w, ln2_b;
    Tensor<T> cross_wq, cross_wk, cross_wv, cross_wo;
    Tensor<T> cross_bq, cross_bk, cross_bv, cross_bo;
    Tensor<T> ln3_w, ln3_b;
    Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename T>
struct Params {
    ModelConfig cfg;
    Tensor<T> tok_emb;  // vocab_size x dim
    Tensor<T> pos_emb;  // max_len x dim
    std::vector<LayerParams<T>> layers;
    Tensor<T> lnf_w, lnf_b;
    Tensor<T> cls_w;  // dim x vocab_size (untied from tok_emb)
    Tensor<T> cls_b;

    // Visits every tensor in a fixed order with a stable dotted name.
    void for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;

    static Params zeros_like(const Params& other);
    template <typename U>
    Params<U> cast() const;

    int64_t total_parameters() const;
};

// Deterministic per seed. Attention/FFN projections get scale 1/sqrt(dim);
// embeddings and the classifier head get scale 0.02 so the initial output
// distribution is near uniform.
template <typename T>
Params<T> init_params(const ModelConfig& cfg, uint64_t seed);

// Per-call scratch for one example. Holding one per worker avoids
// re-allocating activations each step.
template <typename T>
struct Workspace {
    ModelConfig cfg;

    Tensor<T> x;  // running residual stream, max_len x dim
    struct LayerActs {
        Tensor<T> x_in;                                   // block input
        Tensor<T> ln1_out, ln1_mean, ln1_rstd;            //
        Tensor<T> q, k, v;                                // max_len x dim
        Tensor<T> att;                                    // heads x max_len x max_len (post softmax)
        Tensor<T> att_mix;                                // max_len x dim
        Tensor<T> x_after_self;                           //
        Tensor<T> ln2_out, ln2_mean, ln2_rstd;            //
        Tensor<T> cq;                                     // max_len x dim
        Tensor<T> ck, cv;                                 // feat_len x dim
        Tensor<T> catt;                                   // heads x max_len x feat_len
        Tensor<T> catt_mix;                               // max_len x dim
        Tensor<T> x_after_cross;                          //
        Tensor<T> ln3_out, ln3_mean, ln3_rstd;            //
        Tensor<T> ffn_pre, ffn_act;                       // max_len x ffn_dim
    };
    std::vector<LayerActs> acts;
    Tensor<T> lnf_out, lnf_mean, lnf_rstd;
    Tensor<T> logits;  // max_len x vocab_size
    Tensor<T> probs;   // row softmax of logits

    // backward scratch
    Tensor<T> d_x, d_tmp, d_ln, d_q, d_k, d_v, d_mix, d_att, d_ck, d_cv, d_ffn_pre, d_ffn_act;

    explicit Workspace(const ModelConfig& c);
};

// Runs the decoder on one example. `ids` must contain max_len token ids,
// `feat` is the feat_len x dim conditioning grid. Fills ws.logits/ws.probs.
// Throws std::runtime_error naming the layer if an intermediate goes
// non-finite.
template <typename T>
void forward(const Params<T>& params, const Tensor<T>& feat, const std::vector<int>& ids,
             Workspace<T>& ws);

// Reverse-mode gradients for the example last run through `ws`.
// `d_logits` is max_len x vocab_size; gradients accumulate into `grads`.
template <typename T>
void backward(const Params<T>& params, const Tensor<T>& feat, const std::vector<int>& ids,
              Workspace<T>& ws, const Tensor<T>& d_logits, Params<T>& grads);

// Greedy per-position readout of the last forward. mask_id is excluded from
// the argmax (the decoder never emits it); ties break toward the lowest id.
struct Prediction {
    std::vector<int> ids;
    std::vector<float> conf;
};

template <typename T>
Prediction read_prediction(const Workspace<T>& ws, int mask_id);

// Convenience wrapper for callers that do not manage a workspace: returns
// logits, row-softmax probabilities and the greedy prediction.
template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    Tensor<T> probs;
    Prediction pred;
};

template <typename T>
ForwardResult<T> run_forward(const Params<T>& params, const Tensor<T>& feat,
                             const std::vector<int>& ids, int mask_id);

extern template struct Params<float>;
extern template struct Params<double>;
extern template struct Workspace<float>;
extern template struct Workspace<double>;

}  // namespace mdiff
