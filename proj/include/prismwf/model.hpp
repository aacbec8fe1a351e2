#pragma once

// Multi-granularity patch transformer: G convolutional branches, router
// tokens, stacked attention blocks and the router-concatenation head.

#include <array>
#include <string>
#include <vector>

#include "prismwf/nn.hpp"
#include "prismwf/rng.hpp"

namespace prismwf {

enum class LossMode { kSingle, kMulti };

const char* loss_mode_name(LossMode mode);
LossMode parse_loss_mode(const std::string& text);

struct ModelConfig {
  int input_slots = 8000;                // L
  int d = 256;
  std::vector<int> kernels{15, 11, 7, 5};  // one branch per kernel
  int blocks = 3;
  int heads = 8;
  int w_intra = 5;
  int w_inter = 3;
  int ffn_width = 1024;
  int num_classes = 100;
  double dropout = 0.1;
  // Output channels of the six convolutions; empty means d/4,d/4,d/2,d/2,d,d.
  std::vector<int> conv_channels;
  std::vector<int> pools{3, 3, 3};       // max-pool size per conv block
  LossMode loss_mode = LossMode::kMulti;
  bool inter_granularity = true;          // coarse-to-fine patch attention
  bool router_interaction = true;         // global attention among routers
  double embed_init_std = 0.02;           // routers and positional tables

  int branches() const { return static_cast<int>(kernels.size()); }
  std::vector<int> channel_plan() const;
  // Patch tokens per branch, in branch order.
  std::vector<int> token_counts() const;
  // Throws Error("invalid_config") on any violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Patch tokens followed by one router row: ((N + 1) x d).
struct TokenSet {
  nn::Mat tokens;

  Eigen::Index patches() const { return tokens.rows() - 1; }
  auto patch_rows() { return tokens.topRows(tokens.rows() - 1); }
  auto patch_rows() const { return tokens.topRows(tokens.rows() - 1); }
  auto router_row() { return tokens.bottomRows(1); }
  auto router_row() const { return tokens.bottomRows(1); }
};

// c_n = floor((n + 0.5) N_f / N_c) for zero-based coarse index n.
int center_index(int n, int coarse_count, int fine_count);
// [max(0, c - w/2), min(N_f - 1, c + w/2)].
nn::KeyRange window_indices(int center, int w, int fine_count);
// Key range per coarse query.
std::vector<nn::KeyRange> inter_ranges(int coarse_count, int fine_count, int w);
// Each patch attends to its own w-wide neighborhood.
std::vector<nn::KeyRange> local_ranges(int count, int w);
std::vector<nn::KeyRange> full_ranges(int queries, int keys);

// One conv block: conv -> BN -> ReLU -> conv -> BN -> ReLU -> pool -> dropout.
struct ConvBlock {
  nn::Conv1d conv1, conv2;
  nn::BatchNorm bn1, bn2;
  int pool = 3;
};

struct Branch {
  std::array<ConvBlock, 3> blocks;
  std::size_t router = 0;      // (1 x d)
  std::size_t positional = 0;  // (N x d)
};

struct InterPair {
  int coarse = 0;  // branch index
  int fine = 0;
  nn::CrossAttentionSublayer attn;
};

struct IntraLayers {
  nn::SelfAttentionSublayer local;
  nn::CrossAttentionSublayer router;
  nn::FeedForwardSublayer ffn;
};

struct AttentionBlock {
  std::vector<InterPair> inter;
  std::vector<IntraLayers> intra;  // per branch
  nn::SelfAttentionSublayer router_mix;
  bool has_router_mix = false;
};

// ---- Per-sample caches for the token stage.

struct InterCache {
  std::vector<nn::CrossAttentionSublayer::Cache> pairs;
};

struct IntraCache {
  nn::SelfAttentionSublayer::Cache local;
  nn::CrossAttentionSublayer::Cache router;
  nn::FeedForwardSublayer::Cache ffn;
};

struct BlockCache {
  InterCache inter;
  std::vector<IntraCache> intra;
  nn::SelfAttentionSublayer::Cache router_mix;
};

struct SampleTape {
  std::vector<BlockCache> blocks;
  nn::Mat z;  // (1 x G d)
};

// ---- Batch caches for the convolution stage.

struct ConvBlockCache {
  std::vector<nn::Mat> input;    // conv1 input
  nn::BatchNorm::Cache bn1, bn2;
  std::vector<nn::Mat> act1;     // ReLU output after bn1 (conv2 input)
  std::vector<nn::Mat> act2;     // ReLU output after bn2 (pool input)
  std::vector<nn::MaxPoolResult> pooled;
  std::vector<nn::Mat> dropout;  // empty when dropout is off
};

struct BranchCache {
  std::array<ConvBlockCache, 3> blocks;
};

struct BatchTape {
  std::vector<BranchCache> branches;
  std::vector<SampleTape> samples;
  // Batch statistics per (branch, block, bn1/bn2), for running updates.
  std::vector<nn::BatchNorm::Stats> bn_stats;
  nn::ForwardMode mode;
};

class PrismModel {
 public:
  explicit PrismModel(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  // Names, shapes and init rules of every array.
  const nn::ParamStore& layout() const noexcept { return layout_; }
  nn::ParamStore init_params(const RngHandle& rng) const;

  const std::vector<Branch>& branches() const noexcept { return branches_; }
  const std::vector<AttentionBlock>& blocks() const noexcept { return blocks_; }
  const nn::Linear& head() const noexcept { return head_; }
  // Branch indices ordered coarse -> fine (ascending token count).
  const std::vector<int>& granularity_order() const noexcept { return order_; }

  // Conv stage for one branch over a batch; returns (N x d) patch tokens.
  std::vector<nn::Mat> branch_forward(const nn::ParamStore& p, int branch,
                                      const std::vector<const nn::Mat*>& inputs,
                                      nn::ForwardMode mode, Rng* rng,
                                      BranchCache* cache,
                                      std::vector<nn::BatchNorm::Stats>* stats) const;

  TokenSet inject_router(const nn::ParamStore& p, int branch,
                         const nn::Mat& patches) const;

  void inter_granularity_interact(const nn::ParamStore& p,
                                  const AttentionBlock& block,
                                  std::vector<TokenSet>& sets,
                                  InterCache* cache) const;
  void intra_granularity_interact(const nn::ParamStore& p,
                                  const AttentionBlock& block, int branch,
                                  TokenSet& set, IntraCache* cache) const;
  void router_interact(const nn::ParamStore& p, const AttentionBlock& block,
                       std::vector<TokenSet>& sets,
                       nn::SelfAttentionSublayer::Cache* cache) const;

  // Token stage + head for one sample; patches are per branch.
  Eigen::RowVectorXd token_forward(const nn::ParamStore& p,
                                   const std::vector<nn::Mat>& patches,
                                   SampleTape* tape) const;

  // Full forward over a batch of (6 x L) inputs; logits are (B x C).
  nn::Mat forward_batch(const nn::ParamStore& p,
                        const std::vector<const nn::Mat*>& inputs,
                        nn::ForwardMode mode, Rng* rng,
                        BatchTape* tape) const;
  // Accumulates parameter gradients given dLoss/dlogits (B x C).
  void backward_batch(const nn::ParamStore& p, const BatchTape& tape,
                      const nn::Mat& dlogits, nn::ParamStore& grads) const;

  // Eval-mode logits for a single input.
  Eigen::VectorXd forward(const nn::ParamStore& p, const nn::Mat& input) const;

  // Writes batch statistics from a training forward into running estimates.
  void update_running_stats(nn::ParamStore& p, const BatchTape& tape,
                            double momentum) const;

 private:
  std::vector<nn::Mat> token_backward(const nn::ParamStore& p,
                                      const SampleTape& tape,
                                      const Eigen::RowVectorXd& dlogits,
                                      nn::ParamStore& g) const;
  std::vector<nn::Mat> branch_backward(const nn::ParamStore& p, int branch,
                                       const BranchCache& cache,
                                       std::vector<nn::Mat> dpatches,
                                       nn::ParamStore& g) const;

  ModelConfig config_;
  std::vector<int> token_counts_;
  std::vector<int> order_;
  nn::ParamStore layout_;
  std::vector<Branch> branches_;
  std::vector<AttentionBlock> blocks_;
  nn::Linear head_;
};

}  // namespace prismwf
