#pragma once

// Layer primitives with explicit forward/backward passes.
//
// Parameters live in a ParamStore; layers only hold indices into it. A
// gradient store has the same layout (ParamStore::zeros_like), so every
// backward takes the parameter store read-only and accumulates into `grads`.
//
// Token matrices are (tokens x width): one row per token.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prismwf {
class Rng;
}

namespace prismwf::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct NamedArray {
  std::string name;
  Mat value;
  bool trainable = true;  // false for running normalization statistics
  // Initial value: init_const + init_std * N(0, 1).
  double init_const = 0.0;
  double init_std = 0.0;
};

class ParamStore {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols,
                  double init_const = 0.0, double init_std = 0.0,
                  bool trainable = true);
  // Fills every array from its init rule, in registration order.
  void initialize(Rng& rng);

  Mat& operator[](std::size_t i) { return arrays_[i].value; }
  const Mat& operator[](std::size_t i) const { return arrays_[i].value; }

  std::size_t size() const noexcept { return arrays_.size(); }
  const NamedArray& array(std::size_t i) const { return arrays_[i]; }
  NamedArray& array(std::size_t i) { return arrays_[i]; }
  const std::vector<NamedArray>& arrays() const noexcept { return arrays_; }
  std::optional<std::size_t> find(std::string_view name) const;

  // Same names and shapes, all values zero.
  ParamStore zeros_like() const;
  void set_zero();
  // Number of scalar entries over trainable arrays.
  Eigen::Index trainable_count() const;
  bool same_layout(const ParamStore& other) const;

 private:
  std::vector<NamedArray> arrays_;
};

// Which normalization statistics and whether dropout is active.
struct ForwardMode {
  bool batch_stats = false;
  bool dropout = false;

  static ForwardMode train() { return {true, true}; }
  static ForwardMode eval() { return {false, false}; }
};

// y = x W^T + b, x is (n x in).
struct Linear {
  std::size_t weight = 0;  // (out x in)
  std::size_t bias = 0;    // (1 x out)

  static Linear create(ParamStore& store, const std::string& prefix,
                       Eigen::Index in, Eigen::Index out);
  Mat forward(const ParamStore& p, const Mat& x) const;
  Mat backward(const ParamStore& p, ParamStore& g, const Mat& x,
               const Mat& dy) const;
};

// Per-row normalization over the feature axis.
struct LayerNorm {
  std::size_t gamma = 0;  // (1 x d)
  std::size_t beta = 0;
  double eps = 1e-5;

  struct Cache {
    Mat xhat;
    Vec inv_std;
  };

  static LayerNorm create(ParamStore& store, const std::string& prefix,
                          Eigen::Index d);
  Mat forward(const ParamStore& p, const Mat& x, Cache* cache) const;
  Mat backward(const ParamStore& p, ParamStore& g, const Cache& cache,
               const Mat& dy) const;
};

// Inclusive key range a query may attend to.
struct KeyRange {
  int lo = 0;
  int hi = 0;

  friend bool operator==(const KeyRange&, const KeyRange&) = default;
};

// Multi-head attention where query i attends only to keys ranges[i].
// Scores outside the range behave as -inf before the softmax.
struct Attention {
  Linear q, k, v, o;
  int heads = 1;

  struct Cache {
    Mat xq, xkv;    // projection inputs
    Mat Q, K, V;    // projected
    Mat context;    // per-head outputs, concatenated (nq x d)
    std::vector<Mat> weights;  // per head, dense (nq x nk), 0 off-range
    std::vector<KeyRange> ranges;
  };

  static Attention create(ParamStore& store, const std::string& prefix,
                          Eigen::Index d, int heads);
  Mat forward(const ParamStore& p, const Mat& xq, const Mat& xkv,
              const std::vector<KeyRange>& ranges, Cache* cache) const;
  // Returns (d xq, d xkv).
  std::pair<Mat, Mat> backward(const ParamStore& p, ParamStore& g,
                               const Cache& cache, const Mat& dy) const;
};

// x + Attn(LN(x), LN(x)).
struct SelfAttentionSublayer {
  LayerNorm norm;
  Attention attn;

  struct Cache {
    LayerNorm::Cache norm;
    Attention::Cache attn;
  };

  static SelfAttentionSublayer create(ParamStore& store,
                                      const std::string& prefix,
                                      Eigen::Index d, int heads);
  Mat forward(const ParamStore& p, const Mat& x,
              const std::vector<KeyRange>& ranges, Cache* cache) const;
  Mat backward(const ParamStore& p, ParamStore& g, const Cache& cache,
               const Mat& dy) const;
};

// xq + Attn(LNq(xq), LNkv(xkv)).
struct CrossAttentionSublayer {
  LayerNorm norm_q;
  LayerNorm norm_kv;
  Attention attn;

  struct Cache {
    LayerNorm::Cache norm_q, norm_kv;
    Attention::Cache attn;
  };

  static CrossAttentionSublayer create(ParamStore& store,
                                       const std::string& prefix,
                                       Eigen::Index d, int heads);
  Mat forward(const ParamStore& p, const Mat& xq, const Mat& xkv,
              const std::vector<KeyRange>& ranges, Cache* cache) const;
  std::pair<Mat, Mat> backward(const ParamStore& p, ParamStore& g,
                               const Cache& cache, const Mat& dy) const;
};

// x + W2 relu(W1 LN(x) + b1) + b2.
struct FeedForwardSublayer {
  LayerNorm norm;
  Linear fc1, fc2;

  struct Cache {
    LayerNorm::Cache norm;
    Mat normed;
    Mat hidden;  // post-ReLU
  };

  static FeedForwardSublayer create(ParamStore& store,
                                    const std::string& prefix, Eigen::Index d,
                                    Eigen::Index width);
  Mat forward(const ParamStore& p, const Mat& x, Cache* cache) const;
  Mat backward(const ParamStore& p, ParamStore& g, const Cache& cache,
               const Mat& dy) const;
};

// Valid (unpadded) stride-1 1D convolution over (channels x length) inputs.
// Weight layout is (out x kernel*in): column kk*in + c multiplies channel c
// at tap kk.
struct Conv1d {
  std::size_t weight = 0;
  std::size_t bias = 0;  // (out x 1)
  int in = 0, out = 0, kernel = 0;

  static Conv1d create(ParamStore& store, const std::string& prefix, int in,
                       int out, int kernel);
  Mat forward(const ParamStore& p, const Mat& x) const;
  Mat backward(const ParamStore& p, ParamStore& g, const Mat& x,
               const Mat& dy) const;
};

// Per-channel normalization over batch and length.
struct BatchNorm {
  std::size_t gamma = 0, beta = 0;         // (channels x 1)
  std::size_t running_mean = 0, running_var = 0;
  double eps = 1e-5;

  struct Cache {
    std::vector<Mat> xhat;
    Vec inv_std;
    bool batch_stats = false;
  };
  struct Stats {
    Vec mean;
    Vec var;  // biased
    Eigen::Index count = 0;
  };

  static BatchNorm create(ParamStore& store, const std::string& prefix,
                          int channels);
  std::vector<Mat> forward(const ParamStore& p, const std::vector<Mat>& xs,
                           bool batch_stats, Cache* cache,
                           Stats* stats) const;
  std::vector<Mat> backward(const ParamStore& p, ParamStore& g,
                            const Cache& cache,
                            const std::vector<Mat>& dys) const;
  // running <- (1 - momentum) running + momentum batch (unbiased variance).
  void update_running(ParamStore& p, const Stats& stats,
                      double momentum) const;
};

// Non-overlapping max pooling along columns; output length floor(L / size).
struct MaxPoolResult {
  Mat y;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax;
};
MaxPoolResult max_pool(const Mat& x, int size);
Mat max_pool_backward(const MaxPoolResult& fwd, Eigen::Index in_len,
                      const Mat& dy);

// Inverted dropout mask: entries are 0 or 1 / (1 - rate).
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

Mat relu(const Mat& x);

}  // namespace prismwf::nn
