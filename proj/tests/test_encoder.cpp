// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcsot/encoder.hpp"
#include "pcsot/rng.hpp"
#include "testutil.hpp"

using namespace pcsot;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(static_cast<std::size_t>(t.dim(0)),
        std::vector<double>(static_cast<std::size_t>(t.dim(1))));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t.at({i, j});
  return m;
}

Mat matmul_oracle(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

double gelu_oracle(double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

Mat layer_norm_oracle(const Mat& x, const std::vector<double>& gain,
                      const std::vector<double>& bias, double eps = 1e-5) {
  Mat out = x;
  const std::size_t d = x[0].size();
  for (std::size_t r = 0; r < x.size(); ++r) {
    double mean = 0;
    for (double v : x[r]) mean += v;
    mean /= static_cast<double>(d);
    double var = 0;
    for (double v : x[r]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      out[r][j] = gain[j] * (x[r][j] - mean) / std::sqrt(var + eps) + bias[j];
  }
  return out;
}

// Gated-bottleneck adapter, written straight from its defining expression.
Mat adapter_oracle(const Mat& f, const AdapterParams& p) {
  const Mat wdn = to_mat(p.w_dn), wup = to_mat(p.w_up), ws = to_mat(p.w_s);
  Mat gate = matmul_oracle(f, ws);
  Mat mid = matmul_oracle(f, wdn);
  for (auto& row : mid)
    for (auto& v : row) v = gelu_oracle(v);
  Mat up = matmul_oracle(mid, wup);
  for (std::size_t i = 0; i < up.size(); ++i) {
    const double g = std::max(0.0, gate[i][0]);
    for (auto& v : up[i]) v *= g;
  }
  return up;
}

Mat mhsa_oracle(const Mat& f, const AttentionParams& p, int heads) {
  const int t = static_cast<int>(f.size());
  const int d = static_cast<int>(f[0].size());
  const int dh = d / heads;
  auto project = [&](const Tensor& w, const Tensor& b) {
    Mat out = matmul_oracle(f, to_mat(w));
    for (auto& row : out)
      for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] += b.at({j});
    return out;
  };
  const Mat q = project(p.wq, p.bq), k = project(p.wk, p.bk), v = project(p.wv, p.bv);
  Mat merged(static_cast<std::size_t>(t), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < t; ++i) {
      std::vector<double> scores(static_cast<std::size_t>(t));
      for (int j = 0; j < t; ++j) {
        double acc = 0;
        for (int c = 0; c < dh; ++c)
          acc += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dh + c)] *
                 k[static_cast<std::size_t>(j)][static_cast<std::size_t>(h * dh + c)];
        scores[static_cast<std::size_t>(j)] = acc / std::sqrt(double(dh));
      }
      const double mx = *std::max_element(scores.begin(), scores.end());
      double sum = 0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        sum += s;
      }
      for (auto& s : scores) s /= sum;
      for (int c = 0; c < dh; ++c) {
        double acc = 0;
        for (int j = 0; j < t; ++j)
          acc += scores[static_cast<std::size_t>(j)] *
                 v[static_cast<std::size_t>(j)][static_cast<std::size_t>(h * dh + c)];
        merged[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dh + c)] = acc;
      }
    }
  }
  Mat out = matmul_oracle(merged, to_mat(p.wo));
  for (auto& row : out)
    for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] += p.bo.at({j});
  return out;
}

Mat ffn_oracle(const Mat& f, const FfnParams& p) {
  Mat mid = matmul_oracle(f, to_mat(p.w1));
  for (auto& row : mid)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = gelu_oracle(row[j] + p.b1.at({static_cast<int>(j)}));
  Mat out = matmul_oracle(mid, to_mat(p.w2));
  for (auto& row : out)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += p.b2.at({static_cast<int>(j)});
  return out;
}

// Dense-dispatch mixture with explicit top-k selection.
Mat moge_oracle(const Mat& z, const MoGEParams& p) {
  const int s = static_cast<int>(z.size());
  const int d = static_cast<int>(z[0].size());
  const int m = static_cast<int>(p.experts.size());
  const Mat router = to_mat(p.router);
  Mat out(static_cast<std::size_t>(s), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  for (int r = 0; r < s; ++r) {
    std::vector<double> logits(static_cast<std::size_t>(m), 0.0);
    for (int e = 0; e < m; ++e)
      for (int c = 0; c < d; ++c)
        logits[static_cast<std::size_t>(e)] += z[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] *
                                               router[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)];
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (logits[static_cast<std::size_t>(a)] != logits[static_cast<std::size_t>(b)])
        return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
      return a < b;
    });
    order.resize(static_cast<std::size_t>(p.top_k));
    double mx = -1e300;
    for (int e : order) mx = std::max(mx, logits[static_cast<std::size_t>(e)]);
    double sum = 0;
    std::vector<double> gate(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      gate[j] = std::exp(logits[static_cast<std::size_t>(order[j])] - mx);
      sum += gate[j];
    }
    for (auto& gv : gate) gv /= sum;
    for (std::size_t j = 0; j < order.size(); ++j) {
      const ExpertParams& ex = p.experts[static_cast<std::size_t>(order[j])];
      // expert FFN on row r
      const Mat zr{z[static_cast<std::size_t>(r)]};
      Mat mid = matmul_oracle(zr, to_mat(ex.w1));
      for (std::size_t c = 0; c < mid[0].size(); ++c)
        mid[0][c] = gelu_oracle(mid[0][c] + ex.b1.at({static_cast<int>(c)}));
      Mat y = matmul_oracle(mid, to_mat(ex.w2));
      for (int c = 0; c < d; ++c)
        out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] +=
            gate[j] * (y[0][static_cast<std::size_t>(c)] + ex.b2.at({c}));
    }
  }
  return out;
}

TransformerLayerParams make_layer(Rng& rng, int d, int hidden) {
  TransformerLayerParams lp;
  lp.ln1 = {randn({d}, rng, 0.2), randn({d}, rng, 0.1)};
  lp.ln2 = {randn({d}, rng, 0.2), randn({d}, rng, 0.1)};
  for (auto& v : lp.ln1.gain.mutable_data()) v += 1.0;
  for (auto& v : lp.ln2.gain.mutable_data()) v += 1.0;
  lp.attn = {randn({d, d}, rng, 0.3), randn({d}, rng, 0.05),
             randn({d, d}, rng, 0.3), randn({d}, rng, 0.05),
             randn({d, d}, rng, 0.3), randn({d}, rng, 0.05),
             randn({d, d}, rng, 0.3), randn({d}, rng, 0.05)};
  lp.ffn = {randn({d, hidden}, rng, 0.3), randn({hidden}, rng, 0.05),
            randn({hidden, d}, rng, 0.3), randn({d}, rng, 0.05)};
  return lp;
}

AdapterParams make_adapter(Rng& rng, int d, int r) {
  return {randn({d, r}, rng, 0.3), randn({r, d}, rng, 0.3), randn({d, 1}, rng, 0.3)};
}

MoGEParams make_moge(Rng& rng, int d, int m, int k) {
  MoGEParams p;
  p.router = randn({d, m}, rng, 0.4);
  const int hidden = (d + 7) / 8;
  for (int e = 0; e < m; ++e)
    p.experts.push_back({randn({d, hidden}, rng, 0.4), randn({hidden}, rng, 0.1),
                         randn({hidden, d}, rng, 0.4), randn({d}, rng, 0.1)});
  p.top_k = k;
  return p;
}

AdapterParams zero_adapter(int d, int r) {
  return {Tensor::zeros({d, r}), Tensor::zeros({r, d}), Tensor::zeros({d, 1})};
}

}  // namespace

TEST_CASE("adapter gate closed gives zero output") {
  Rng rng(42);
  const int d = 8, r = 3;
  AdapterParams p = make_adapter(rng, d, r);
  // w_s forces non-positive scores for strictly positive inputs
  p.w_s = Tensor::full({d, 1}, -5.0);
  Tensor f({2, d}, std::vector<double>(16, 0.5));
  Tensor out = adapter_forward(f, p);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("adapter zero up-projection gives zero output") {
  Rng rng(43);
  AdapterParams p = make_adapter(rng, 8, 3);
  p.w_up = Tensor::zeros({3, 8});
  Tensor f = randn({4, 8}, rng);
  Tensor out = adapter_forward(f, p);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("adapter matches straight-line oracle") {
  Rng rng(44);
  const int d = 16;
  AdapterParams p = make_adapter(rng, d, 5);
  Tensor f = randn({4, d}, rng);
  Tensor out = adapter_forward(f, p);
  Mat expect = adapter_oracle(to_mat(f), p);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(std::abs(out.at({i, j}) - expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) < 1e-12);
}

TEST_CASE("router symmetric logits split the gate") {
  Tensor z({1, 2}, {1, 0});
  Tensor router({2, 2}, {1, 1, 0, 0});  // logits [1, 1]
  Tensor gates = router_topk(z, router, 2);
  CHECK(gates.at({0, 0}) == doctest::Approx(0.5));
  CHECK(gates.at({0, 1}) == doctest::Approx(0.5));
}

TEST_CASE("router top-2 of four gives softmax over the selected pair") {
  Tensor z({1, 4}, {1, 0, 0, 0});
  Tensor router({4, 4}, {2, 1, 0, -1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  Tensor gates = router_topk(z, router, 2);
  CHECK(gates.at({0, 0}) == doctest::Approx(0.731059).epsilon(1e-5));
  CHECK(gates.at({0, 1}) == doctest::Approx(0.268941).epsilon(1e-5));
  CHECK(gates.at({0, 2}) == 0.0);
  CHECK(gates.at({0, 3}) == 0.0);
}

TEST_CASE("router matches full-sort oracle on random rows") {
  Rng rng(45);
  const int d = 12, m = 8, k = 3;
  Tensor router = randn({d, m}, rng);
  Tensor z = randn({100, d}, rng);
  Tensor gates = router_topk(z, router, k);
  Tensor logits = matmul(z, router);
  for (int r = 0; r < 100; ++r) {
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (logits.at({r, a}) != logits.at({r, b}))
        return logits.at({r, a}) > logits.at({r, b});
      return a < b;
    });
    double sum = 0;
    int nonzero = 0;
    for (int e = 0; e < m; ++e) {
      const double g = gates.at({r, e});
      CHECK(g >= 0.0);
      sum += g;
      nonzero += g != 0.0;
      const bool selected =
          std::find(order.begin(), order.begin() + k, e) != order.begin() + k;
      if (!selected) CHECK(g == 0.0);
    }
    CHECK(nonzero == k);
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("moge with K == M equals dense mixture oracle") {
  Rng rng(46);
  for (int trial = 0; trial < 10; ++trial) {
    const int s = rng.uniform_int(1, 16);
    const int d = rng.uniform_int(2, 16);
    const int m = rng.uniform_int(1, 8);
    MoGEParams p = make_moge(rng, d, m, m);
    Tensor z = randn({s, d}, rng);
    Tensor out = moge_forward(z, p);
    // independent dense oracle: full softmax, every expert on every row
    Mat zin = to_mat(z);
    Mat router = to_mat(p.router);
    for (int r = 0; r < s; ++r) {
      std::vector<double> logits(static_cast<std::size_t>(m), 0.0);
      for (int e = 0; e < m; ++e)
        for (int c = 0; c < d; ++c)
          logits[static_cast<std::size_t>(e)] += zin[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] *
                                                 router[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)];
      const double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0;
      std::vector<double> gate(static_cast<std::size_t>(m));
      for (int e = 0; e < m; ++e) {
        gate[static_cast<std::size_t>(e)] = std::exp(logits[static_cast<std::size_t>(e)] - mx);
        sum += gate[static_cast<std::size_t>(e)];
      }
      for (auto& gv : gate) gv /= sum;
      for (int c = 0; c < d; ++c) {
        double acc = 0;
        for (int e = 0; e < m; ++e) {
          const ExpertParams& ex = p.experts[static_cast<std::size_t>(e)];
          const int hidden = ex.w1.dim(1);
          double y = 0;
          for (int hc = 0; hc < hidden; ++hc) {
            double mid = ex.b1.at({hc});
            for (int c2 = 0; c2 < d; ++c2)
              mid += zin[static_cast<std::size_t>(r)][static_cast<std::size_t>(c2)] * ex.w1.at({c2, hc});
            y += gelu_oracle(mid) * ex.w2.at({hc, c});
          }
          acc += gate[static_cast<std::size_t>(e)] * (y + ex.b2.at({c}));
        }
        CHECK(std::abs(out.at({r, c}) - acc) < 1e-9);
      }
    }
  }
}

TEST_CASE("identical experts make the output gate independent") {
  Rng rng(47);
  const int d = 8, m = 4;
  MoGEParams p = make_moge(rng, d, m, 2);
  for (int e = 1; e < m; ++e) p.experts[static_cast<std::size_t>(e)] = p.experts[0];
  Tensor z = randn({5, d}, rng);
  Tensor out = moge_forward(z, p);
  // oracle: single expert applied directly (gates sum to 1)
  const ExpertParams& ex = p.experts[0];
  Tensor expect = add(matmul(gelu(add(matmul(z, ex.w1), ex.b1)), ex.w2), ex.b2);
  for (int i = 0; i < out.size(); ++i)
    CHECK(std::abs(out.data()[static_cast<std::size_t>(i)] -
                   expect.data()[static_cast<std::size_t>(i)]) < 1e-12);
}

TEST_CASE("saturated logits select a single expert") {
  Rng rng(48);
  const int d = 6, m = 4;
  MoGEParams p = make_moge(rng, d, m, 2);
  // rig the router so expert 2 wins by a margin > 50 for the all-ones row
  p.router = Tensor::zeros({d, m});
  for (int c = 0; c < d; ++c) p.router.mutable_data()[static_cast<std::size_t>(c) * m + 2] = 20.0;
  Tensor z = Tensor::full({1, d}, 1.0);
  Tensor out = moge_forward(z, p);
  const ExpertParams& ex = p.experts[2];
  Tensor expect = add(matmul(gelu(add(matmul(z, ex.w1), ex.b1)), ex.w2), ex.b2);
  for (int i = 0; i < out.size(); ++i)
    CHECK(std::abs(out.data()[static_cast<std::size_t>(i)] -
                   expect.data()[static_cast<std::size_t>(i)]) < 1e-9);
}

TEST_CASE("block reduces to the plain frozen layer bitwise") {
  Rng rng(49);
  const int d = 16, t = 7;
  TransformerLayerParams layer = make_layer(rng, d, 4 * d);
  Tensor f = randn({t, d}, rng);
  const TokenSplit split{3, 3};

  Tensor plain = transformer_block_forward(f, layer, 4, nullptr, nullptr, split);

  AdapterPair zeros{zero_adapter(d, 4), zero_adapter(d, 4)};
  MoGEParams moge;
  moge.router = Tensor::zeros({d, 4});
  for (int e = 0; e < 4; ++e)
    moge.experts.push_back({Tensor::zeros({d, 2}), Tensor::zeros({2}),
                            Tensor::zeros({2, d}), Tensor::zeros({d})});
  moge.top_k = 2;
  Tensor adapted = transformer_block_forward(f, layer, 4, &zeros, &moge, split);
  CHECK(adapted.data() == plain.data());  // bitwise
}

TEST_CASE("zero-output experts leave routed rows unchanged") {
  Rng rng(50);
  const int d = 8;
  MoGEParams p = make_moge(rng, d, 4, 2);
  for (auto& ex : p.experts) {
    ex.w2 = Tensor::zeros({ex.w2.dim(0), d});
    ex.b2 = Tensor::zeros({d});
  }
  Tensor z = randn({6, d}, rng);
  Tensor out = moge_forward(z, p);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("template rows pass through the moge stage bitwise") {
  Rng rng(51);
  const int d = 12, gt = 4, gs = 3;
  TransformerLayerParams layer = make_layer(rng, d, 2 * d);
  MoGEParams moge = make_moge(rng, d, 6, 3);
  AdapterPair ad{make_adapter(rng, d, 4), make_adapter(rng, d, 4)};
  Tensor f = randn({1 + gt + gs, d}, rng);
  const TokenSplit split{gt, gs};
  Tensor with_moge = transformer_block_forward(f, layer, 4, &ad, &moge, split);
  Tensor without = transformer_block_forward(f, layer, 4, &ad, nullptr, split);
  for (int i = 1; i <= gt; ++i)
    for (int j = 0; j < d; ++j) CHECK(with_moge.at({i, j}) == without.at({i, j}));
  // search rows generally differ
  double diff = 0;
  for (int i = 1 + gt; i < 1 + gt + gs; ++i)
    for (int j = 0; j < d; ++j) diff += std::abs(with_moge.at({i, j}) - without.at({i, j}));
  CHECK(diff > 0);
}

TEST_CASE("full block matches the scalar-loop oracle") {
  Rng rng(52);
  const int d = 8, t = 4, gt = 1, gs = 2;
  TransformerLayerParams layer = make_layer(rng, d, 4 * d);
  AdapterPair ad{make_adapter(rng, d, 3), make_adapter(rng, d, 3)};
  MoGEParams moge = make_moge(rng, d, 4, 2);
  Tensor f = randn({t, d}, rng);
  const TokenSplit split{gt, gs};

  Tensor out = transformer_block_forward(f, layer, 2, &ad, &moge, split);

  // independent scalar-loop pipeline
  const Mat fin = to_mat(f);
  std::vector<double> g1(static_cast<std::size_t>(d)), b1(static_cast<std::size_t>(d)),
      g2(static_cast<std::size_t>(d)), b2(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    g1[static_cast<std::size_t>(j)] = layer.ln1.gain.at({j});
    b1[static_cast<std::size_t>(j)] = layer.ln1.bias.at({j});
    g2[static_cast<std::size_t>(j)] = layer.ln2.gain.at({j});
    b2[static_cast<std::size_t>(j)] = layer.ln2.bias.at({j});
  }
  const Mat norm1 = layer_norm_oracle(fin, g1, b1);
  Mat hidden = mhsa_oracle(norm1, layer.attn, 2);
  const Mat ad1 = adapter_oracle(norm1, ad.attn_side);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      hidden[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
          fin[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +
          ad1[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  const Mat norm2 = layer_norm_oracle(hidden, g2, b2);
  Mat expect = ffn_oracle(norm2, layer.ffn);
  const Mat ad2 = adapter_oracle(norm2, ad.ffn_side);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
          hidden[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +
          ad2[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  // moge on rows {0} + search rows
  Mat routed{expect[0], expect[2], expect[3]};
  const Mat mixed = moge_oracle(routed, moge);
  for (int j = 0; j < d; ++j) {
    expect[0][static_cast<std::size_t>(j)] += mixed[0][static_cast<std::size_t>(j)];
    expect[2][static_cast<std::size_t>(j)] += mixed[1][static_cast<std::size_t>(j)];
    expect[3][static_cast<std::size_t>(j)] += mixed[2][static_cast<std::size_t>(j)];
  }
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(std::abs(out.at({i, j}) - expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) < 1e-10);
}

TEST_CASE("encoder output shapes and placement validation") {
  Rng rng(53);
  const int d = 8, gt = 3, gs = 4, L = 3;
  EncoderStack stack;
  stack.heads = 2;
  stack.final_ln = {Tensor::full({d}, 1.0), Tensor::zeros({d})};
  for (int i = 0; i < L; ++i) {
    stack.layers.push_back(make_layer(rng, d, 2 * d));
    stack.adapters.emplace_back(AdapterPair{make_adapter(rng, d, 3), make_adapter(rng, d, 3)});
    if (i == 1)
      stack.moge.emplace_back(make_moge(rng, d, 4, 2));
    else
      stack.moge.emplace_back(std::nullopt);
  }
  Tensor f0 = randn({1 + gt + gs, d}, rng);
  EncoderOutput out = encoder_forward(f0, stack, {gt, gs});
  CHECK(out.temporal.shape() == std::vector<int>{1, d});
  CHECK(out.template_tokens.shape() == std::vector<int>{gt, d});
  CHECK(out.search_tokens.shape() == std::vector<int>{gs, d});
}

TEST_CASE("gradients flow through adapters and moge") {
  Rng rng(54);
  const int d = 8, gt = 2, gs = 3;
  TransformerLayerParams layer = make_layer(rng, d, 2 * d);
  AdapterPair ad{make_adapter(rng, d, 3), make_adapter(rng, d, 3)};
  MoGEParams moge = make_moge(rng, d, 4, 2);
  Tensor f = randn({1 + gt + gs, d}, rng);

  std::vector<Tensor> params{ad.attn_side.w_dn, ad.attn_side.w_up, ad.attn_side.w_s,
                             ad.ffn_side.w_dn,  ad.ffn_side.w_up,  ad.ffn_side.w_s,
                             moge.router,       moge.experts[0].w1, moge.experts[0].w2,
                             moge.experts[1].b1, moge.experts[2].w1, moge.experts[3].b2};
  for (auto& t : params) t.set_requires_grad(true);
  AdapterPair ad_view{{params[0], params[1], params[2]}, {params[3], params[4], params[5]}};
  MoGEParams moge_view = moge;
  moge_view.router = params[6];
  moge_view.experts[0].w1 = params[7];
  moge_view.experts[0].w2 = params[8];
  moge_view.experts[1].b1 = params[9];
  moge_view.experts[2].w1 = params[10];
  moge_view.experts[3].b2 = params[11];

  auto loss = [&]() {
    Tensor out = transformer_block_forward(f, layer, 2, &ad_view, &moge_view,
                                           {gt, gs});
    return mean_all(mul(out, out));
  };
  CHECK(testutil::gradcheck(params, loss) < 1e-4);
}
