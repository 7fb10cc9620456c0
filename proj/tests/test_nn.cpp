#include <cmath>
#include <vector>

#include "doctest.h"

#include "agtfuse/nn.hpp"
#include "testutil.hpp"

using namespace agtfuse;
using testutil::finite_difference_check;
using testutil::random_tensor;

namespace {

void zero_out(Tensor t) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0); }

std::vector<double> copy_data(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST_CASE("single-token attention reduces to value/output projection") {
  SplitMix64 rng(3);
  AttentionParams p = AttentionParams::init(4, 2, rng);
  Tensor x = random_tensor({1, 4}, rng, false);
  Tensor out = multi_head_self_attention(x, p);

  // With one token the attention weight is exactly 1 per head, so the output
  // is (x Wv + bv) Wo + bo regardless of Wq/Wk.
  Tensor expected =
      add_rowwise(matmul(add_rowwise(matmul(x, p.wv), p.bv), p.wo), p.bo);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(out.at(0, j) == doctest::Approx(expected.at(0, j)).epsilon(1e-14));
  }
}

TEST_CASE("identical tokens produce identical attention outputs") {
  SplitMix64 rng(11);
  AttentionParams p = AttentionParams::init(8, 4, rng);
  Tensor row = random_tensor({8}, rng, false);
  Tensor x = stack_rows({row, row});
  Tensor out = multi_head_self_attention(x, p);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(out.at(0, j) == doctest::Approx(out.at(1, j)).epsilon(1e-14));
  }
}

TEST_CASE("attention is permutation equivariant over positions") {
  SplitMix64 rng(13);
  AttentionParams p = AttentionParams::init(8, 2, rng);
  Tensor x = random_tensor({4, 8}, rng, false);
  Tensor out = multi_head_self_attention(x, p);

  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  std::vector<double> permuted(4 * 8);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      permuted[i * 8 + j] = x.at(perm[i], j);
  Tensor out_p = multi_head_self_attention(Tensor::from_data({4, 8}, permuted), p);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(out_p.at(i, j) == doctest::Approx(out.at(perm[i], j)).epsilon(1e-12));
}

TEST_CASE("attention gradients match finite differences") {
  SplitMix64 rng(17);
  AttentionParams p = AttentionParams::init(8, 2, rng);
  Tensor x = random_tensor({3, 8}, rng);
  std::vector<Tensor> params = p.parameters();
  params.push_back(x);
  auto res = finite_difference_check(
      [&]() { return sum_all(mul(multi_head_self_attention(x, p),
                                 multi_head_self_attention(x, p))); },
      params);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("attention validates shapes") {
  SplitMix64 rng(19);
  AttentionParams p = AttentionParams::init(8, 2, rng);
  CHECK_THROWS_AS(multi_head_self_attention(Tensor::zeros({3, 7}), p),
                  TensorError);
  AttentionParams bad;
  bad.d_model = 6;
  bad.n_heads = 4;
  CHECK_THROWS_AS(bad.validate(), TensorError);
}

TEST_CASE("cbt with zeroed value/output and ffn weights is the identity") {
  SplitMix64 rng(23);
  CbtBlockParams p = CbtBlockParams::init(8, 2, 16, rng);
  zero_out(p.attn.wv);
  zero_out(p.attn.bv);
  zero_out(p.attn.wo);
  zero_out(p.attn.bo);
  zero_out(p.ffn_w2);
  zero_out(p.ffn_b2);
  Tensor x = random_tensor({3, 8}, rng, false);
  Tensor out = cbt_forward(x, p);
  CHECK(copy_data(out) == copy_data(x));
}

TEST_CASE("cbt preserves shape for any sequence length") {
  SplitMix64 rng(29);
  CbtBlockParams p = CbtBlockParams::init(8, 4, 16, rng);
  for (std::size_t seq : {1u, 2u, 5u}) {
    Tensor x = random_tensor({seq, 8}, rng, false);
    Tensor out = cbt_forward(x, p);
    CHECK(out.shape() == std::vector<std::size_t>{seq, 8});
  }
}

TEST_CASE("cbt gradients match finite differences") {
  SplitMix64 rng(31);
  CbtBlockParams p = CbtBlockParams::init(8, 2, 16, rng);
  Tensor x = random_tensor({2, 8}, rng);
  std::vector<Tensor> params = p.parameters();
  params.push_back(x);
  auto res = finite_difference_check(
      [&]() {
        Tensor y = cbt_forward(x, p);
        return sum_all(mul(y, y));
      },
      params);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("cbt rejects d_ff below d_model") {
  SplitMix64 rng(37);
  CHECK_THROWS_AS(CbtBlockParams::init(8, 2, 4, rng), TensorError);
}

TEST_CASE("amf keeps identical streams and doubles them") {
  SplitMix64 rng(41);
  Tensor u = random_tensor({6}, rng, false);
  AmfParams p;
  p.theta_sim = 0.5;
  AmfResult r = amf_gate({u, u}, p);
  CHECK(r.mask == std::vector<int>{1, 1});
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(r.fused.at(i) == doctest::Approx(2.0 * u.at(i)).epsilon(1e-15));
  }
}

TEST_CASE("amf gates out the orthogonal stream") {
  Tensor e1 = Tensor::from_data({3}, {1, 0, 0});
  Tensor e2 = Tensor::from_data({3}, {0, 1, 0});
  AmfParams p;
  p.theta_sim = 0.5;
  AmfResult r = amf_gate({e1, e1, e2}, p);
  CHECK(r.mask == std::vector<int>{1, 1, 0});
  CHECK(copy_data(r.fused) == std::vector<double>{2, 0, 0});
}

TEST_CASE("amf with threshold -1 keeps everything") {
  SplitMix64 rng(43);
  Tensor a = random_tensor({4}, rng, false);
  Tensor b = random_tensor({4}, rng, false);
  Tensor c = random_tensor({4}, rng, false);
  AmfParams p;
  p.theta_sim = -1.0;
  AmfResult r = amf_gate({a, b, c}, p);
  CHECK(r.mask == std::vector<int>{1, 1, 1});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.fused.at(i) ==
          doctest::Approx(a.at(i) + b.at(i) + c.at(i)).epsilon(1e-15));
  }
}

TEST_CASE("amf falls back to keeping all streams when all would be gated") {
  Tensor e1 = Tensor::from_data({3}, {1, 0, 0});
  Tensor e2 = Tensor::from_data({3}, {0, 1, 0});
  AmfParams p;
  p.theta_sim = 0.9;
  AmfResult r = amf_gate({e1, e2}, p);
  CHECK(r.mask == std::vector<int>{1, 1});
}

TEST_CASE("amf mask is invariant under positive per-stream rescaling") {
  SplitMix64 rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({5}, rng, false);
    Tensor b = random_tensor({5}, rng, false);
    Tensor c = random_tensor({5}, rng, false);
    AmfParams p;
    p.theta_sim = 0.2;
    const auto base = amf_gate({a, b, c}, p).mask;
    const double sa = 0.01 + 5.0 * rng.next_double();
    const double sb = 0.01 + 5.0 * rng.next_double();
    const double sc = 0.01 + 5.0 * rng.next_double();
    const auto scaled = amf_gate({scalar_mul(a, sa), scalar_mul(b, sb),
                                  scalar_mul(c, sc)},
                                 p)
                            .mask;
    CHECK(base == scaled);
  }
}

TEST_CASE("amf fused output equals the masked sum exactly") {
  SplitMix64 rng(53);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> streams;
    for (int s = 0; s < 4; ++s) streams.push_back(random_tensor({6}, rng, false));
    AmfParams p;
    p.theta_sim = 0.1;
    AmfResult r = amf_gate(streams, p);
    for (std::size_t i = 0; i < 6; ++i) {
      double expected = 0.0;
      for (std::size_t s = 0; s < streams.size(); ++s) {
        if (r.mask[s] == 1) expected += streams[s].at(i);
      }
      CHECK(r.fused.at(i) == doctest::Approx(expected).epsilon(1e-15));
    }
  }
}

TEST_CASE("amf treats zero-norm streams as similarity zero") {
  Tensor e1 = Tensor::from_data({3}, {1, 0, 0});
  Tensor zero = Tensor::zeros({3});
  AmfParams p;
  p.theta_sim = 0.5;
  AmfResult r = amf_gate({e1, e1, zero}, p);
  CHECK(r.mask == std::vector<int>{1, 1, 0});
}

TEST_CASE("amf validates inputs") {
  Tensor a = Tensor::zeros({3});
  AmfParams p;
  CHECK_THROWS_AS(amf_gate({a}, p), TensorError);
  CHECK_THROWS_AS(amf_gate({a, Tensor::zeros({4})}, p), TensorError);
  AmfParams bad;
  bad.theta_sim = 1.5;
  CHECK_THROWS_AS(amf_gate({a, a}, bad), TensorError);
}

TEST_CASE("amf gradient flows only through kept streams") {
  Tensor e1 = Tensor::from_data({3}, {1, 0, 0}, true);
  Tensor e1b = Tensor::from_data({3}, {1, 0, 0}, true);
  Tensor e2 = Tensor::from_data({3}, {0, 1, 0}, true);
  AmfParams p;
  p.theta_sim = 0.5;
  Tape tape;
  Tape::Scope scope(tape);
  AmfResult r = amf_gate({e1, e1b, e2}, p);
  tape.backward(sum_all(r.fused));
  CHECK(e1.grad()[0] == 1.0);
  CHECK(e1b.grad()[0] == 1.0);
  CHECK_FALSE(e2.has_grad());
}

TEST_CASE("amf optional projections map streams to a shared width") {
  SplitMix64 rng(59);
  Tensor a = random_tensor({4}, rng, false);
  Tensor b = random_tensor({6}, rng, false);
  AmfParams p;
  p.theta_sim = -1.0;
  p.projections = {random_tensor({4, 5}, rng, true),
                   random_tensor({6, 5}, rng, true)};
  AmfResult r = amf_gate({a, b}, p);
  CHECK(r.fused.shape() == std::vector<std::size_t>{5});
  auto res = finite_difference_check(
      [&]() { return sum_all(amf_gate({a, b}, p).fused); }, p.projections);
  CHECK(res.max_rel_err < 1e-6);
}
