#include "agtfuse/nn.hpp"

#include <cmath>
#include <string>

namespace agtfuse {

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, SplitMix64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::randn({fan_in, fan_out}, rng, stddev, /*requires_grad=*/true);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

AttentionParams AttentionParams::init(std::size_t d_model, std::size_t n_heads,
                                      SplitMix64& rng) {
  AttentionParams p;
  p.d_model = d_model;
  p.n_heads = n_heads;
  p.wq = glorot(d_model, d_model, rng);
  p.wk = glorot(d_model, d_model, rng);
  p.wv = glorot(d_model, d_model, rng);
  p.wo = glorot(d_model, d_model, rng);
  p.bq = Tensor::zeros({d_model}, true);
  p.bk = Tensor::zeros({d_model}, true);
  p.bv = Tensor::zeros({d_model}, true);
  p.bo = Tensor::zeros({d_model}, true);
  p.validate();
  return p;
}

std::vector<Tensor> AttentionParams::parameters() {
  return {wq, bq, wk, bk, wv, bv, wo, bo};
}

void AttentionParams::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw TensorError("attention: d_model " + std::to_string(d_model) +
                      " must be a positive multiple of n_heads " +
                      std::to_string(n_heads));
  }
  for (const Tensor* w : {&wq, &wk, &wv, &wo}) {
    if (w->shape() != std::vector<std::size_t>{d_model, d_model}) {
      throw TensorError("attention: projection shape " +
                        shape_to_string(w->shape()) + " does not match d_model " +
                        std::to_string(d_model));
    }
  }
  for (const Tensor* b : {&bq, &bk, &bv, &bo}) {
    if (b->shape() != std::vector<std::size_t>{d_model}) {
      throw TensorError("attention: bias shape mismatch");
    }
  }
}

Tensor multi_head_self_attention(const Tensor& x, const AttentionParams& p) {
  p.validate();
  if (x.ndim() != 2 || x.cols() != p.d_model) {
    throw TensorError("attention: input " + shape_to_string(x.shape()) +
                      " does not match d_model " + std::to_string(p.d_model));
  }
  const std::size_t d_head = p.d_model / p.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));

  Tensor q = add_rowwise(matmul(x, p.wq), p.bq);
  Tensor k = add_rowwise(matmul(x, p.wk), p.bk);
  Tensor v = add_rowwise(matmul(x, p.wv), p.bv);

  std::vector<Tensor> heads;
  heads.reserve(p.n_heads);
  for (std::size_t h = 0; h < p.n_heads; ++h) {
    Tensor qh = slice_cols(q, h * d_head, d_head);
    Tensor kh = slice_cols(k, h * d_head, d_head);
    Tensor vh = slice_cols(v, h * d_head, d_head);
    Tensor scores = scalar_mul(matmul(qh, transpose(kh)), scale);
    Tensor weights = softmax(scores, -1);
    heads.push_back(matmul(weights, vh));
  }
  return add_rowwise(matmul(concat_cols(heads), p.wo), p.bo);
}

CbtBlockParams CbtBlockParams::init(std::size_t d_model, std::size_t n_heads,
                                    std::size_t d_ff, SplitMix64& rng) {
  CbtBlockParams p;
  p.attn = AttentionParams::init(d_model, n_heads, rng);
  p.ffn_w1 = glorot(d_model, d_ff, rng);
  p.ffn_b1 = Tensor::zeros({d_ff}, true);
  p.ffn_w2 = glorot(d_ff, d_model, rng);
  p.ffn_b2 = Tensor::zeros({d_model}, true);
  p.ln1_gamma = Tensor::full({d_model}, 1.0, true);
  p.ln1_beta = Tensor::zeros({d_model}, true);
  p.ln2_gamma = Tensor::full({d_model}, 1.0, true);
  p.ln2_beta = Tensor::zeros({d_model}, true);
  p.validate();
  return p;
}

std::vector<Tensor> CbtBlockParams::parameters() {
  std::vector<Tensor> out = attn.parameters();
  for (const Tensor& t :
       {ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln1_gamma, ln1_beta, ln2_gamma,
        ln2_beta}) {
    out.push_back(t);
  }
  return out;
}

void CbtBlockParams::validate() const {
  attn.validate();
  const std::size_t d = attn.d_model;
  const std::size_t d_ff = ffn_w1.defined() ? ffn_w1.cols() : 0;
  if (d_ff < d) {
    throw TensorError("cbt: d_ff " + std::to_string(d_ff) +
                      " must be >= d_model " + std::to_string(d));
  }
  if (ffn_w1.shape() != std::vector<std::size_t>{d, d_ff} ||
      ffn_w2.shape() != std::vector<std::size_t>{d_ff, d}) {
    throw TensorError("cbt: feed-forward shapes inconsistent");
  }
}

Tensor cbt_forward(const Tensor& x, const CbtBlockParams& p) {
  p.validate();
  Tensor h = add(x, multi_head_self_attention(
                        layer_norm(x, p.ln1_gamma, p.ln1_beta, p.ln_eps),
                        p.attn));
  Tensor n2 = layer_norm(h, p.ln2_gamma, p.ln2_beta, p.ln_eps);
  Tensor ff = add_rowwise(
      matmul(gelu(add_rowwise(matmul(n2, p.ffn_w1), p.ffn_b1)), p.ffn_w2),
      p.ffn_b2);
  return add(h, ff);
}

void AmfParams::validate() const {
  if (theta_sim < -1.0 || theta_sim > 1.0) {
    throw TensorError("amf: theta_sim must lie in [-1, 1], got " +
                      std::to_string(theta_sim));
  }
}

AmfResult amf_gate(const std::vector<Tensor>& streams, const AmfParams& p) {
  p.validate();
  if (streams.size() < 2) {
    throw TensorError("amf_gate: need at least 2 streams, got " +
                      std::to_string(streams.size()));
  }
  std::vector<Tensor> projected;
  projected.reserve(streams.size());
  if (!p.projections.empty()) {
    if (p.projections.size() != streams.size()) {
      throw TensorError("amf_gate: got " + std::to_string(p.projections.size()) +
                        " projections for " + std::to_string(streams.size()) +
                        " streams");
    }
    for (std::size_t i = 0; i < streams.size(); ++i) {
      projected.push_back(
          reshape(matmul(reshape(streams[i], {1, streams[i].size()}),
                         p.projections[i]),
                  {p.projections[i].cols()}));
    }
  } else {
    projected = streams;
  }
  const std::size_t width = projected.front().size();
  for (const Tensor& s : projected) {
    if (s.ndim() != 1 || s.size() != width) {
      throw TensorError("amf_gate: streams must share one width, got " +
                        shape_to_string(s.shape()) + " vs [" +
                        std::to_string(width) + "]");
    }
  }

  // Mask from forward values only; gating is hard, not a soft weight.
  std::vector<int> mask(projected.size(), 0);
  for (std::size_t i = 0; i < projected.size(); ++i) {
    double best = -2.0;
    for (std::size_t j = 0; j < projected.size(); ++j) {
      if (j == i) continue;
      best = std::max(best,
                      cosine_similarity(projected[i].data(), projected[j].data()));
    }
    mask[i] = best < p.theta_sim ? 0 : 1;
  }
  bool any_kept = false;
  for (int m : mask) any_kept = any_kept || (m == 1);
  if (!any_kept) std::fill(mask.begin(), mask.end(), 1);

  Tensor fused;
  for (std::size_t i = 0; i < projected.size(); ++i) {
    if (mask[i] == 0) continue;
    fused = fused.defined() ? add(fused, projected[i]) : projected[i];
  }
  return AmfResult{fused, std::move(mask)};
}

Tensor linear_vec(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 1) {
    throw TensorError("linear_vec: expected 1-D input, got " +
                      shape_to_string(x.shape()));
  }
  Tensor y = matmul(reshape(x, {1, x.size()}), w);
  return add(reshape(y, {w.cols()}), b);
}

}  // namespace agtfuse
