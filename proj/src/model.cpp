#include "prismwf/model.hpp"

#include <algorithm>
#include <numeric>

#include "prismwf/core.hpp"
#include "prismwf/featurize.hpp"

namespace prismwf {

using nn::Mat;

const char* loss_mode_name(LossMode mode) {
  return mode == LossMode::kSingle ? "single" : "multi";
}

LossMode parse_loss_mode(const std::string& text) {
  if (text == "single") return LossMode::kSingle;
  if (text == "multi") return LossMode::kMulti;
  throw Error("invalid_config", "loss mode must be single or multi, got " + text);
}

std::vector<int> ModelConfig::channel_plan() const {
  if (!conv_channels.empty()) return conv_channels;
  return {d / 4, d / 4, d / 2, d / 2, d, d};
}

std::vector<int> ModelConfig::token_counts() const {
  std::vector<int> counts;
  for (int k : kernels) {
    long len = input_slots;
    for (int pool : pools) {
      len -= k - 1;
      len -= k - 1;
      if (len < 1 || pool < 1) {
        len = 0;
        break;
      }
      len /= pool;
    }
    counts.push_back(static_cast<int>(std::max(0L, len)));
  }
  return counts;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error("invalid_config", msg); };
  if (kernels.empty()) fail("at least one branch kernel is required");
  if (d < 1 || heads < 1 || d % heads != 0) fail("d must be divisible by heads");
  if (blocks < 0) fail("blocks must be >= 0");
  if (w_intra < 1 || w_intra % 2 == 0) fail("w_intra must be a positive odd integer");
  if (w_inter < 1 || w_inter % 2 == 0) fail("w_inter must be a positive odd integer");
  if (ffn_width < 1) fail("ffn_width must be positive");
  if (num_classes < 1) fail("num_classes must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (pools.size() != 3) fail("pool plan needs one entry per conv block (3)");
  const auto plan = channel_plan();
  if (plan.size() != 6) fail("channel plan needs six entries");
  for (int c : plan) {
    if (c < 1) fail("conv channel counts must be positive");
  }
  if (plan.back() != d) fail("last conv layer must output d channels");
  for (int k : kernels) {
    if (k < 1) fail("kernel sizes must be positive");
  }
  const auto counts = token_counts();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 1) {
      fail("branch " + std::to_string(i) + " (kernel " + std::to_string(kernels[i]) +
           ") produces no tokens for L=" + std::to_string(input_slots));
    }
  }
}

int center_index(int n, int coarse_count, int fine_count) {
  return static_cast<int>((static_cast<long long>(2 * n + 1) * fine_count) /
                          (2LL * coarse_count));
}

nn::KeyRange window_indices(int center, int w, int fine_count) {
  const int half = w / 2;
  return {std::max(0, center - half), std::min(fine_count - 1, center + half)};
}

std::vector<nn::KeyRange> inter_ranges(int coarse_count, int fine_count, int w) {
  std::vector<nn::KeyRange> r;
  r.reserve(static_cast<std::size_t>(coarse_count));
  for (int n = 0; n < coarse_count; ++n) {
    r.push_back(window_indices(center_index(n, coarse_count, fine_count), w, fine_count));
  }
  return r;
}

std::vector<nn::KeyRange> local_ranges(int count, int w) {
  std::vector<nn::KeyRange> r;
  r.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) r.push_back(window_indices(n, w, count));
  return r;
}

std::vector<nn::KeyRange> full_ranges(int queries, int keys) {
  return std::vector<nn::KeyRange>(static_cast<std::size_t>(queries), nn::KeyRange{0, keys - 1});
}

PrismModel::PrismModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  token_counts_ = config_.token_counts();
  const int G = config_.branches();
  order_.resize(static_cast<std::size_t>(G));
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) {
    return token_counts_[static_cast<std::size_t>(a)] < token_counts_[static_cast<std::size_t>(b)];
  });

  const auto plan = config_.channel_plan();
  const Eigen::Index d = config_.d;
  for (int i = 0; i < G; ++i) {
    const std::string bp = "branch" + std::to_string(i);
    Branch br;
    int in = kFeatureRows;
    for (int b = 0; b < 3; ++b) {
      const std::string pre = bp + ".block" + std::to_string(b);
      auto& blk = br.blocks[static_cast<std::size_t>(b)];
      const int c1 = plan[static_cast<std::size_t>(2 * b)];
      const int c2 = plan[static_cast<std::size_t>(2 * b + 1)];
      const int k = config_.kernels[static_cast<std::size_t>(i)];
      blk.conv1 = nn::Conv1d::create(layout_, pre + ".conv1", in, c1, k);
      blk.bn1 = nn::BatchNorm::create(layout_, pre + ".bn1", c1);
      blk.conv2 = nn::Conv1d::create(layout_, pre + ".conv2", c1, c2, k);
      blk.bn2 = nn::BatchNorm::create(layout_, pre + ".bn2", c2);
      blk.pool = config_.pools[static_cast<std::size_t>(b)];
      in = c2;
    }
    br.router = layout_.add(bp + ".router", 1, d, 0.0, config_.embed_init_std);
    br.positional = layout_.add(bp + ".positional", token_counts_[static_cast<std::size_t>(i)], d,
                                0.0, config_.embed_init_std);
    branches_.push_back(br);
  }

  for (int b = 0; b < config_.blocks; ++b) {
    const std::string pre = "block" + std::to_string(b);
    AttentionBlock blk;
    if (config_.inter_granularity) {
      for (int p = 0; p + 1 < G; ++p) {
        InterPair pair;
        pair.coarse = order_[static_cast<std::size_t>(p)];
        pair.fine = order_[static_cast<std::size_t>(p + 1)];
        pair.attn = nn::CrossAttentionSublayer::create(
            layout_, pre + ".inter" + std::to_string(p), d, config_.heads);
        blk.inter.push_back(pair);
      }
    }
    for (int i = 0; i < G; ++i) {
      const std::string ip = pre + ".intra" + std::to_string(i);
      IntraLayers intra;
      intra.local = nn::SelfAttentionSublayer::create(layout_, ip + ".local", d, config_.heads);
      intra.router = nn::CrossAttentionSublayer::create(layout_, ip + ".router", d, config_.heads);
      intra.ffn = nn::FeedForwardSublayer::create(layout_, ip + ".ffn", d, config_.ffn_width);
      blk.intra.push_back(intra);
    }
    if (config_.router_interaction) {
      blk.router_mix = nn::SelfAttentionSublayer::create(layout_, pre + ".router_mix", d, config_.heads);
      blk.has_router_mix = true;
    }
    blocks_.push_back(std::move(blk));
  }
  head_ = nn::Linear::create(layout_, "head", static_cast<Eigen::Index>(G) * d, config_.num_classes);
}

nn::ParamStore PrismModel::init_params(const RngHandle& rng) const {
  nn::ParamStore p = layout_;
  Rng r(rng);
  p.initialize(r);
  return p;
}

// ------------------------------------------------------------ conv stage

std::vector<Mat> PrismModel::branch_forward(
    const nn::ParamStore& p, int branch, const std::vector<const Mat*>& inputs,
    nn::ForwardMode mode, Rng* rng, BranchCache* cache,
    std::vector<nn::BatchNorm::Stats>* stats) const {
  const auto& br = branches_[static_cast<std::size_t>(branch)];
  const bool dropout = mode.dropout && config_.dropout > 0.0;
  if (dropout && rng == nullptr) throw Error("invalid_argument", "dropout needs an rng");

  std::vector<Mat> xs;
  xs.reserve(inputs.size());
  for (const Mat* in : inputs) {
    if (in->rows() != kFeatureRows || in->cols() != config_.input_slots) {
      throw Error("shape_mismatch", "model expects 6 x " + std::to_string(config_.input_slots) +
                                        " input, got " + std::to_string(in->rows()) + " x " +
                                        std::to_string(in->cols()));
    }
    xs.push_back(*in);
  }

  for (std::size_t b = 0; b < 3; ++b) {
    const auto& blk = br.blocks[b];
    ConvBlockCache* bc = cache ? &cache->blocks[b] : nullptr;
    nn::BatchNorm::Stats s1, s2;

    std::vector<Mat> h;
    h.reserve(xs.size());
    for (const auto& x : xs) h.push_back(blk.conv1.forward(p, x));
    h = blk.bn1.forward(p, h, mode.batch_stats, bc ? &bc->bn1 : nullptr, &s1);
    for (auto& m : h) m = nn::relu(m);
    std::vector<Mat> h2;
    h2.reserve(h.size());
    for (const auto& m : h) h2.push_back(blk.conv2.forward(p, m));
    h2 = blk.bn2.forward(p, h2, mode.batch_stats, bc ? &bc->bn2 : nullptr, &s2);
    for (auto& m : h2) m = nn::relu(m);

    std::vector<Mat> out;
    out.reserve(h2.size());
    std::vector<nn::MaxPoolResult> pooled;
    std::vector<Mat> masks;
    for (const auto& m : h2) {
      nn::MaxPoolResult pr = nn::max_pool(m, blk.pool);
      Mat y = pr.y;
      if (dropout) {
        Mat mask = nn::dropout_mask(y.rows(), y.cols(), config_.dropout, *rng);
        y = y.cwiseProduct(mask);
        if (bc) masks.push_back(std::move(mask));
      }
      out.push_back(std::move(y));
      if (bc) pooled.push_back(std::move(pr));
    }
    if (stats && mode.batch_stats) {
      stats->push_back(std::move(s1));
      stats->push_back(std::move(s2));
    }
    if (bc) {
      bc->input = std::move(xs);
      bc->act1 = std::move(h);
      bc->act2 = std::move(h2);
      bc->pooled = std::move(pooled);
      bc->dropout = std::move(masks);
    }
    xs = std::move(out);
  }
  for (auto& x : xs) x.transposeInPlace();
  return xs;
}

std::vector<Mat> PrismModel::branch_backward(const nn::ParamStore& p, int branch,
                                             const BranchCache& cache,
                                             std::vector<Mat> dpatches,
                                             nn::ParamStore& g) const {
  const auto& br = branches_[static_cast<std::size_t>(branch)];
  std::vector<Mat> dys = std::move(dpatches);
  for (auto& dy : dys) dy.transposeInPlace();
  for (int b = 2; b >= 0; --b) {
    const auto& blk = br.blocks[static_cast<std::size_t>(b)];
    const auto& bc = cache.blocks[static_cast<std::size_t>(b)];
    const std::size_t n = dys.size();
    std::vector<Mat> d2(n);
    for (std::size_t s = 0; s < n; ++s) {
      Mat dy = bc.dropout.empty() ? dys[s] : Mat(dys[s].cwiseProduct(bc.dropout[s]));
      d2[s] = nn::max_pool_backward(bc.pooled[s], bc.act2[s].cols(), dy);
      d2[s] = (bc.act2[s].array() > 0.0).select(d2[s], 0.0);
    }
    d2 = blk.bn2.backward(p, g, bc.bn2, d2);
    std::vector<Mat> d1(n);
    for (std::size_t s = 0; s < n; ++s) {
      d1[s] = blk.conv2.backward(p, g, bc.act1[s], d2[s]);
      d1[s] = (bc.act1[s].array() > 0.0).select(d1[s], 0.0);
    }
    d1 = blk.bn1.backward(p, g, bc.bn1, d1);
    for (std::size_t s = 0; s < n; ++s) {
      dys[s] = blk.conv1.backward(p, g, bc.input[s], d1[s]);
    }
  }
  return dys;
}

// ----------------------------------------------------------- token stage

TokenSet PrismModel::inject_router(const nn::ParamStore& p, int branch,
                                   const Mat& patches) const {
  const auto& br = branches_[static_cast<std::size_t>(branch)];
  if (patches.rows() != p[br.positional].rows() || patches.cols() != config_.d) {
    throw Error("shape_mismatch", "patch tokens do not match the positional table");
  }
  TokenSet set;
  set.tokens.resize(patches.rows() + 1, patches.cols());
  set.tokens.topRows(patches.rows()) = patches + p[br.positional];
  set.tokens.bottomRows(1) = p[br.router];
  return set;
}

void PrismModel::inter_granularity_interact(const nn::ParamStore& p,
                                            const AttentionBlock& block,
                                            std::vector<TokenSet>& sets,
                                            InterCache* cache) const {
  if (block.inter.empty()) return;
  // Every pair reads the pre-interaction patches.
  std::vector<Mat> updated;
  updated.reserve(block.inter.size());
  if (cache) cache->pairs.resize(block.inter.size());
  for (std::size_t k = 0; k < block.inter.size(); ++k) {
    const auto& pair = block.inter[k];
    const auto& coarse = sets[static_cast<std::size_t>(pair.coarse)];
    const auto& fine = sets[static_cast<std::size_t>(pair.fine)];
    const auto ranges = inter_ranges(static_cast<int>(coarse.patches()),
                                     static_cast<int>(fine.patches()), config_.w_inter);
    updated.push_back(pair.attn.forward(p, coarse.patch_rows(), fine.patch_rows(), ranges,
                                        cache ? &cache->pairs[k] : nullptr));
  }
  for (std::size_t k = 0; k < block.inter.size(); ++k) {
    sets[static_cast<std::size_t>(block.inter[k].coarse)].patch_rows() = updated[k];
  }
}

void PrismModel::intra_granularity_interact(const nn::ParamStore& p,
                                            const AttentionBlock& block, int branch,
                                            TokenSet& set, IntraCache* cache) const {
  const auto& layers = block.intra[static_cast<std::size_t>(branch)];
  const int n = static_cast<int>(set.patches());
  const Mat local = layers.local.forward(p, set.patch_rows(), local_ranges(n, config_.w_intra),
                                         cache ? &cache->local : nullptr);
  const Mat router = layers.router.forward(p, set.router_row(), local, full_ranges(1, n),
                                           cache ? &cache->router : nullptr);
  Mat joined(n + 1, set.tokens.cols());
  joined.topRows(n) = local;
  joined.bottomRows(1) = router;
  set.tokens = layers.ffn.forward(p, joined, cache ? &cache->ffn : nullptr);
}

void PrismModel::router_interact(const nn::ParamStore& p, const AttentionBlock& block,
                                 std::vector<TokenSet>& sets,
                                 nn::SelfAttentionSublayer::Cache* cache) const {
  if (!block.has_router_mix) return;
  const int G = static_cast<int>(sets.size());
  Mat routers(G, config_.d);
  for (int i = 0; i < G; ++i) routers.row(i) = sets[static_cast<std::size_t>(i)].router_row();
  const Mat mixed = block.router_mix.forward(p, routers, full_ranges(G, G), cache);
  for (int i = 0; i < G; ++i) sets[static_cast<std::size_t>(i)].router_row() = mixed.row(i);
}

Eigen::RowVectorXd PrismModel::token_forward(const nn::ParamStore& p,
                                             const std::vector<Mat>& patches,
                                             SampleTape* tape) const {
  const int G = config_.branches();
  std::vector<TokenSet> sets;
  sets.reserve(static_cast<std::size_t>(G));
  for (int i = 0; i < G; ++i) sets.push_back(inject_router(p, i, patches[static_cast<std::size_t>(i)]));
  if (tape) tape->blocks.resize(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    BlockCache* bc = tape ? &tape->blocks[b] : nullptr;
    inter_granularity_interact(p, blocks_[b], sets, bc ? &bc->inter : nullptr);
    if (bc) bc->intra.resize(static_cast<std::size_t>(G));
    for (int i = 0; i < G; ++i) {
      intra_granularity_interact(p, blocks_[b], i, sets[static_cast<std::size_t>(i)],
                                 bc ? &bc->intra[static_cast<std::size_t>(i)] : nullptr);
    }
    router_interact(p, blocks_[b], sets, bc ? &bc->router_mix : nullptr);
  }
  Mat z(1, static_cast<Eigen::Index>(G) * config_.d);
  for (int i = 0; i < G; ++i) {
    z.block(0, static_cast<Eigen::Index>(i) * config_.d, 1, config_.d) =
        sets[static_cast<std::size_t>(i)].router_row();
  }
  Eigen::RowVectorXd logits = head_.forward(p, z);
  if (tape) tape->z = std::move(z);
  return logits;
}

std::vector<Mat> PrismModel::token_backward(const nn::ParamStore& p, const SampleTape& tape,
                                            const Eigen::RowVectorXd& dlogits,
                                            nn::ParamStore& g) const {
  const int G = config_.branches();
  const Eigen::Index d = config_.d;
  const Mat dz = head_.backward(p, g, tape.z, dlogits);
  std::vector<Mat> grads(static_cast<std::size_t>(G));
  for (int i = 0; i < G; ++i) {
    auto& gi = grads[static_cast<std::size_t>(i)];
    gi = Mat::Zero(token_counts_[static_cast<std::size_t>(i)] + 1, d);
    gi.bottomRows(1) = dz.block(0, i * d, 1, d);
  }

  for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
    const auto& blk = blocks_[static_cast<std::size_t>(b)];
    const auto& bc = tape.blocks[static_cast<std::size_t>(b)];

    if (blk.has_router_mix) {
      Mat dr(G, d);
      for (int i = 0; i < G; ++i) dr.row(i) = grads[static_cast<std::size_t>(i)].bottomRows(1);
      const Mat din = blk.router_mix.backward(p, g, bc.router_mix, dr);
      for (int i = 0; i < G; ++i) grads[static_cast<std::size_t>(i)].bottomRows(1) = din.row(i);
    }

    for (int i = 0; i < G; ++i) {
      const auto& layers = blk.intra[static_cast<std::size_t>(i)];
      const auto& ic = bc.intra[static_cast<std::size_t>(i)];
      auto& gi = grads[static_cast<std::size_t>(i)];
      const Eigen::Index n = gi.rows() - 1;
      const Mat djoined = layers.ffn.backward(p, g, ic.ffn, gi);
      Mat dlocal = djoined.topRows(n);
      auto [drouter, dlocal_kv] = layers.router.backward(p, g, ic.router, djoined.bottomRows(1));
      dlocal += dlocal_kv;
      gi.topRows(n) = layers.local.backward(p, g, ic.local, dlocal);
      gi.bottomRows(1) = drouter;
    }

    if (!blk.inter.empty()) {
      std::vector<Mat> dpre(static_cast<std::size_t>(G));
      for (int i = 0; i < G; ++i) {
        const auto& gi = grads[static_cast<std::size_t>(i)];
        dpre[static_cast<std::size_t>(i)] = gi.topRows(gi.rows() - 1);
      }
      for (const auto& pair : blk.inter) dpre[static_cast<std::size_t>(pair.coarse)].setZero();
      for (std::size_t k = 0; k < blk.inter.size(); ++k) {
        const auto& pair = blk.inter[k];
        const auto& gc = grads[static_cast<std::size_t>(pair.coarse)];
        auto [dq, dkv] = pair.attn.backward(p, g, bc.inter.pairs[k], gc.topRows(gc.rows() - 1));
        dpre[static_cast<std::size_t>(pair.coarse)] += dq;
        dpre[static_cast<std::size_t>(pair.fine)] += dkv;
      }
      for (int i = 0; i < G; ++i) {
        auto& gi = grads[static_cast<std::size_t>(i)];
        gi.topRows(gi.rows() - 1) = dpre[static_cast<std::size_t>(i)];
      }
    }
  }

  std::vector<Mat> dpatches(static_cast<std::size_t>(G));
  for (int i = 0; i < G; ++i) {
    const auto& br = branches_[static_cast<std::size_t>(i)];
    const auto& gi = grads[static_cast<std::size_t>(i)];
    const Eigen::Index n = gi.rows() - 1;
    g[br.router] += gi.bottomRows(1);
    g[br.positional] += gi.topRows(n);
    dpatches[static_cast<std::size_t>(i)] = gi.topRows(n);
  }
  return dpatches;
}

// ------------------------------------------------------------ full model

Mat PrismModel::forward_batch(const nn::ParamStore& p, const std::vector<const Mat*>& inputs,
                              nn::ForwardMode mode, Rng* rng, BatchTape* tape) const {
  const int G = config_.branches();
  const auto B = inputs.size();
  std::vector<std::vector<Mat>> per_branch(static_cast<std::size_t>(G));
  if (tape) {
    tape->branches.assign(static_cast<std::size_t>(G), BranchCache{});
    tape->samples.assign(B, SampleTape{});
    tape->bn_stats.clear();
    tape->mode = mode;
  }
  for (int i = 0; i < G; ++i) {
    per_branch[static_cast<std::size_t>(i)] =
        branch_forward(p, i, inputs, mode, rng, tape ? &tape->branches[static_cast<std::size_t>(i)] : nullptr,
                       tape ? &tape->bn_stats : nullptr);
  }
  Mat logits(static_cast<Eigen::Index>(B), config_.num_classes);
  std::vector<Mat> patches(static_cast<std::size_t>(G));
  for (std::size_t s = 0; s < B; ++s) {
    for (int i = 0; i < G; ++i) {
      patches[static_cast<std::size_t>(i)] = std::move(per_branch[static_cast<std::size_t>(i)][s]);
    }
    logits.row(static_cast<Eigen::Index>(s)) =
        token_forward(p, patches, tape ? &tape->samples[s] : nullptr);
  }
  return logits;
}

void PrismModel::backward_batch(const nn::ParamStore& p, const BatchTape& tape,
                                const Mat& dlogits, nn::ParamStore& g) const {
  const int G = config_.branches();
  const auto B = tape.samples.size();
  std::vector<std::vector<Mat>> dpatches(static_cast<std::size_t>(G), std::vector<Mat>(B));
  for (std::size_t s = 0; s < B; ++s) {
    auto per = token_backward(p, tape.samples[s], dlogits.row(static_cast<Eigen::Index>(s)), g);
    for (int i = 0; i < G; ++i) {
      dpatches[static_cast<std::size_t>(i)][s] = std::move(per[static_cast<std::size_t>(i)]);
    }
  }
  for (int i = 0; i < G; ++i) {
    branch_backward(p, i, tape.branches[static_cast<std::size_t>(i)],
                    std::move(dpatches[static_cast<std::size_t>(i)]), g);
  }
}

Eigen::VectorXd PrismModel::forward(const nn::ParamStore& p, const Mat& input) const {
  const Mat logits = forward_batch(p, {&input}, nn::ForwardMode::eval(), nullptr, nullptr);
  return logits.row(0).transpose();
}

void PrismModel::update_running_stats(nn::ParamStore& p, const BatchTape& tape,
                                      double momentum) const {
  if (!tape.mode.batch_stats) return;
  std::size_t k = 0;
  for (const auto& br : branches_) {
    for (const auto& blk : br.blocks) {
      blk.bn1.update_running(p, tape.bn_stats.at(k++), momentum);
      blk.bn2.update_running(p, tape.bn_stats.at(k++), momentum);
    }
  }
}

}  // namespace prismwf
