#pragma once

#include <cstdint>
#include <vector>

#include "agtfuse/tensor.hpp"

namespace agtfuse {

/// Per-layer multi-head self-attention parameters. Projections are full
/// [d_model, d_model] matrices; heads are column slices of width
/// d_model / n_heads.
struct AttentionParams {
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  Tensor wq, wk, wv, wo;
  Tensor bq, bk, bv, bo;

  static AttentionParams init(std::size_t d_model, std::size_t n_heads,
                              SplitMix64& rng);
  std::vector<Tensor> parameters();
  void validate() const;
};

/// Residual transformer block: attention and feed-forward sublayers with
/// pre-norm and skip connections.
struct CbtBlockParams {
  AttentionParams attn;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  double ln_eps = 1e-5;

  static CbtBlockParams init(std::size_t d_model, std::size_t n_heads,
                             std::size_t d_ff, SplitMix64& rng);
  std::vector<Tensor> parameters();
  void validate() const;
};

/// Similarity-gated fusion. A stream whose best cosine similarity against
/// every other stream falls below `theta_sim` is zeroed out of the sum.
/// Optional per-stream projections map streams to a shared width before
/// gating.
struct AmfParams {
  double theta_sim = 0.2;
  std::vector<Tensor> projections;  // empty, or one [d_in, d_shared] per stream

  void validate() const;
};

struct AmfResult {
  Tensor fused;
  std::vector<int> mask;  // 1 = kept, 0 = zeroed
};

/// Scaled dot-product attention over all heads; x is [seq, d_model].
Tensor multi_head_self_attention(const Tensor& x, const AttentionParams& p);

/// x + MHSA(LN(x)), then + FFN(LN(.)). Output shape equals input shape.
Tensor cbt_forward(const Tensor& x, const CbtBlockParams& p);

/// Gates >= 2 equal-width 1-D streams. The mask is computed from forward
/// values only (it is constant during backprop); fused is exactly the sum of
/// the kept streams. If every stream would be zeroed, all are kept instead.
/// Zero-norm streams compare with cosine similarity 0.
AmfResult amf_gate(const std::vector<Tensor>& streams, const AmfParams& p);

/// x[1-D] . w + b convenience for single-vector inputs; returns 1-D.
Tensor linear_vec(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace agtfuse
