#pragma once

// Shared builders for tiny models and random attention cases.

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "prismwf/model.hpp"
#include "prismwf/rng.hpp"

namespace fixture {

using prismwf::ModelConfig;
using prismwf::PrismModel;
using prismwf::Rng;
using prismwf::TokenSet;
using prismwf::nn::Mat;
using prismwf::nn::ParamStore;

// The gradient-check configuration: G=2, kernels [7,5], d=8, B=1, H=2,
// L=64, C=5.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.input_slots = 64;
  c.d = 8;
  c.kernels = {7, 5};
  c.blocks = 1;
  c.heads = 2;
  c.ffn_width = 16;
  c.num_classes = 5;
  c.pools = {1, 2, 1};
  c.dropout = 0.0;
  return c;
}

// Every array filled with N(0, scale) (variances kept positive).
inline void randomize(ParamStore& p, Rng& r, double scale = 0.5) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& a = p.array(i);
    const bool var = a.name.ends_with("running_var");
    for (Eigen::Index k = 0; k < a.value.size(); ++k) {
      a.value.data()[k] = var ? r.uniform(0.5, 2.0) : scale * r.normal();
    }
  }
}

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, Rng& r) {
  Mat m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.normal();
  return m;
}

struct AttentionCaseResult {
  double inter_error = 0.0;   // vs masked oracle
  double intra_error = 0.0;
  double router_error = 0.0;
  double weight_error = 0.0;  // library weights vs oracle weights
  double row_sum_error = 0.0; // max |sum - 1| over all weight rows
  bool routers_kept = true;   // by inter-granularity interaction
  bool fine_kept = true;      // finest patches by inter-granularity
  bool patches_kept = true;   // by router interaction
  int nc = 0, nf = 0;
};

inline double max_abs(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline double row_sum_error(const std::vector<Mat>& ws) {
  double e = 0.0;
  for (const auto& w : ws) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      e = std::max(e, std::abs(w.row(i).sum() - 1.0));
      if (w.row(i).minCoeff() < 0.0) e = std::max(e, 1.0);
    }
  }
  return e;
}

// A random tiny configuration: N_c <= 6, N_f <= 12, d <= 8, H in {1, 2}.
inline AttentionCaseResult attention_case(std::uint64_t seed) {
  Rng r({seed, 17});
  const int heads = static_cast<int>(r.uniform_int(1, 2));
  const int d = heads * static_cast<int>(r.uniform_int(1, 8 / heads));
  const int ws[] = {1, 3, 5, 7};
  ModelConfig c;
  c.input_slots = 64;
  c.d = d;
  c.heads = heads;
  c.kernels = {7, 5};
  c.blocks = 1;
  c.pools = {1, 1, 1};
  c.ffn_width = static_cast<int>(r.uniform_int(1, 12));
  c.num_classes = 3;
  c.dropout = 0.0;
  c.conv_channels = {2, 2, 2, 2, d, d};
  c.w_inter = ws[r.uniform_int(0, 3)];
  c.w_intra = ws[r.uniform_int(0, 3)];
  const PrismModel model(c);
  ParamStore p = model.init_params({seed, 1});
  randomize(p, r);

  AttentionCaseResult out;
  out.nc = static_cast<int>(r.uniform_int(1, 6));
  out.nf = static_cast<int>(r.uniform_int(out.nc, 12));
  // Branch 0 (kernel 7) is the coarse one.
  std::vector<TokenSet> sets{{random_mat(out.nc + 1, d, r)}, {random_mat(out.nf + 1, d, r)}};
  const auto& blk = model.blocks()[0];

  // Inter-granularity.
  const auto before = sets;
  prismwf::InterCache ic;
  model.inter_granularity_interact(p, blk, sets, &ic);
  const Mat want = oracle::inter_update(p, "block0.inter0", before[0].patch_rows(),
                                        before[1].patch_rows(), heads, c.w_inter);
  out.inter_error = max_abs(sets[0].patch_rows(), want);
  out.routers_kept = sets[0].router_row() == before[0].router_row() &&
                     sets[1].router_row() == before[1].router_row();
  out.fine_kept = sets[1].tokens == before[1].tokens;
  const auto& pc = ic.pairs.at(0);
  out.row_sum_error = std::max(out.row_sum_error, row_sum_error(pc.attn.weights));
  {
    const auto t = oracle::masked_attention(
        p, "block0.inter0.attn", oracle::layer_norm(p, "block0.inter0.norm_q", before[0].patch_rows()),
        oracle::layer_norm(p, "block0.inter0.norm_kv", before[1].patch_rows()), heads,
        [&](int i, int j) { return oracle::in_window(oracle::center(i, out.nc, out.nf), c.w_inter, out.nf, j); });
    for (int h = 0; h < heads; ++h) {
      out.weight_error = std::max(out.weight_error, max_abs(pc.attn.weights[static_cast<std::size_t>(h)],
                                                            t.weights[static_cast<std::size_t>(h)]));
    }
  }

  // Intra-granularity on each set.
  for (int g = 0; g < 2; ++g) {
    TokenSet s = sets[static_cast<std::size_t>(g)];
    prismwf::IntraCache cache;
    model.intra_granularity_interact(p, blk, g, s, &cache);
    const Mat w = oracle::intra_update(p, "block0.intra" + std::to_string(g),
                                       sets[static_cast<std::size_t>(g)].tokens, heads, c.w_intra);
    out.intra_error = std::max(out.intra_error, max_abs(s.tokens, w));
    out.row_sum_error = std::max({out.row_sum_error, row_sum_error(cache.local.attn.weights),
                                  row_sum_error(cache.router.attn.weights)});
  }

  // Router interaction.
  const auto pre_router = sets;
  prismwf::nn::SelfAttentionSublayer::Cache rc;
  model.router_interact(p, blk, sets, &rc);
  out.patches_kept = sets[0].patch_rows() == pre_router[0].patch_rows() &&
                     sets[1].patch_rows() == pre_router[1].patch_rows();
  Mat routers(2, d);
  routers.row(0) = pre_router[0].router_row();
  routers.row(1) = pre_router[1].router_row();
  const Mat normed = oracle::layer_norm(p, "block0.router_mix.norm", routers);
  const Mat mixed = routers + oracle::masked_attention(p, "block0.router_mix.attn", normed, normed, heads,
                                                       [](int, int) { return true; }).out;
  out.router_error = std::max(max_abs(sets[0].router_row(), mixed.row(0)),
                              max_abs(sets[1].router_row(), mixed.row(1)));
  out.row_sum_error = std::max(out.row_sum_error, row_sum_error(rc.attn.weights));
  return out;
}

}  // namespace fixture
