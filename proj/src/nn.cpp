#include "prismwf/nn.hpp"

#include <cmath>
#include <limits>

#include "prismwf/core.hpp"
#include "prismwf/rng.hpp"

namespace prismwf::nn {

std::size_t ParamStore::add(std::string name, Eigen::Index rows,
                            Eigen::Index cols, double init_const,
                            double init_std, bool trainable) {
  if (find(name)) throw Error("duplicate_param", "parameter " + name + " registered twice");
  arrays_.push_back(NamedArray{std::move(name), Mat::Constant(rows, cols, init_const),
                               trainable, init_const, init_std});
  return arrays_.size() - 1;
}

void ParamStore::initialize(Rng& rng) {
  for (auto& a : arrays_) {
    for (Eigen::Index j = 0; j < a.value.cols(); ++j) {
      for (Eigen::Index i = 0; i < a.value.rows(); ++i) {
        a.value(i, j) = a.init_const + (a.init_std > 0.0 ? a.init_std * rng.normal() : 0.0);
      }
    }
  }
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    if (arrays_[i].name == name) return i;
  }
  return std::nullopt;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out = *this;
  out.set_zero();
  return out;
}

void ParamStore::set_zero() {
  for (auto& a : arrays_) a.value.setZero();
}

Eigen::Index ParamStore::trainable_count() const {
  Eigen::Index n = 0;
  for (const auto& a : arrays_) {
    if (a.trainable) n += a.value.size();
  }
  return n;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (arrays_.size() != other.arrays_.size()) return false;
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    const auto& a = arrays_[i];
    const auto& b = other.arrays_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- Linear

Linear Linear::create(ParamStore& store, const std::string& prefix,
                      Eigen::Index in, Eigen::Index out) {
  const double std = std::sqrt(2.0 / static_cast<double>(in + out));
  Linear l;
  l.weight = store.add(prefix + ".weight", out, in, 0.0, std);
  l.bias = store.add(prefix + ".bias", 1, out);
  return l;
}

Mat Linear::forward(const ParamStore& p, const Mat& x) const {
  Mat y = x * p[weight].transpose();
  y.rowwise() += p[bias].row(0);
  return y;
}

Mat Linear::backward(const ParamStore& p, ParamStore& g, const Mat& x,
                     const Mat& dy) const {
  g[weight].noalias() += dy.transpose() * x;
  g[bias].row(0) += dy.colwise().sum();
  return dy * p[weight];
}

// ------------------------------------------------------------- LayerNorm

LayerNorm LayerNorm::create(ParamStore& store, const std::string& prefix,
                            Eigen::Index d) {
  LayerNorm n;
  n.gamma = store.add(prefix + ".gamma", 1, d, 1.0);
  n.beta = store.add(prefix + ".beta", 1, d);
  return n;
}

Mat LayerNorm::forward(const ParamStore& p, const Mat& x, Cache* cache) const {
  const Eigen::Index n = x.rows();
  const auto d = static_cast<double>(x.cols());
  Mat xhat(x.rows(), x.cols());
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mean).square().sum() / d;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Mat y = xhat.array().rowwise() * p[gamma].row(0).array();
  y.rowwise() += p[beta].row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat LayerNorm::backward(const ParamStore& p, ParamStore& g, const Cache& cache,
                        const Mat& dy) const {
  const auto& xhat = cache.xhat;
  g[gamma].row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  g[beta].row(0) += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * p[gamma].row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / d;
    const double mean_dx = dxhat.row(i).dot(xhat.row(i)) / d;
    dx.row(i) = cache.inv_std(i) *
                (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx).matrix();
  }
  return dx;
}

// ------------------------------------------------------------- Attention

Attention Attention::create(ParamStore& store, const std::string& prefix,
                            Eigen::Index d, int heads) {
  if (heads < 1 || d % heads != 0) {
    throw Error("invalid_config", "attention width must divide into heads");
  }
  Attention a;
  a.q = Linear::create(store, prefix + ".q", d, d);
  a.k = Linear::create(store, prefix + ".k", d, d);
  a.v = Linear::create(store, prefix + ".v", d, d);
  a.o = Linear::create(store, prefix + ".o", d, d);
  a.heads = heads;
  return a;
}

Mat Attention::forward(const ParamStore& p, const Mat& xq, const Mat& xkv,
                       const std::vector<KeyRange>& ranges,
                       Cache* cache) const {
  const Eigen::Index nq = xq.rows();
  const Eigen::Index nk = xkv.rows();
  if (static_cast<Eigen::Index>(ranges.size()) != nq) {
    throw Error("shape_mismatch", "attention needs one key range per query");
  }
  Mat Q = q.forward(p, xq);
  Mat K = k.forward(p, xkv);
  Mat V = v.forward(p, xkv);
  const Eigen::Index d = Q.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat context = Mat::Zero(nq, d);
  std::vector<Mat> weights(static_cast<std::size_t>(heads), Mat::Zero(nq, nk));
  Vec scores;
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * dh;
    Mat& w = weights[static_cast<std::size_t>(h)];
    for (Eigen::Index i = 0; i < nq; ++i) {
      const KeyRange r = ranges[static_cast<std::size_t>(i)];
      if (r.lo < 0 || r.hi >= nk || r.lo > r.hi) {
        throw Error("shape_mismatch", "attention key range out of bounds");
      }
      const Eigen::Index len = r.hi - r.lo + 1;
      scores.resize(len);
      for (Eigen::Index j = 0; j < len; ++j) {
        scores(j) = scale * Q.row(i).segment(off, dh).dot(K.row(r.lo + j).segment(off, dh));
      }
      const double mx = scores.maxCoeff();
      scores = (scores.array() - mx).exp();
      scores /= scores.sum();
      for (Eigen::Index j = 0; j < len; ++j) {
        w(i, r.lo + j) = scores(j);
        context.row(i).segment(off, dh) += scores(j) * V.row(r.lo + j).segment(off, dh);
      }
    }
  }
  Mat y = o.forward(p, context);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->Q = std::move(Q);
    cache->K = std::move(K);
    cache->V = std::move(V);
    cache->context = std::move(context);
    cache->weights = std::move(weights);
    cache->ranges = ranges;
  }
  return y;
}

std::pair<Mat, Mat> Attention::backward(const ParamStore& p, ParamStore& g,
                                        const Cache& c, const Mat& dy) const {
  const Mat dcontext = o.backward(p, g, c.context, dy);
  const Eigen::Index nq = c.Q.rows();
  const Eigen::Index d = c.Q.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dQ = Mat::Zero(nq, d);
  Mat dK = Mat::Zero(c.K.rows(), d);
  Mat dV = Mat::Zero(c.V.rows(), d);
  Vec dw;
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * dh;
    const Mat& w = c.weights[static_cast<std::size_t>(h)];
    for (Eigen::Index i = 0; i < nq; ++i) {
      const KeyRange r = c.ranges[static_cast<std::size_t>(i)];
      const Eigen::Index len = r.hi - r.lo + 1;
      const auto dout = dcontext.row(i).segment(off, dh);
      dw.resize(len);
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < len; ++j) {
        const Eigen::Index key = r.lo + j;
        dV.row(key).segment(off, dh) += w(i, key) * dout;
        dw(j) = dout.dot(c.V.row(key).segment(off, dh));
        weighted += w(i, key) * dw(j);
      }
      for (Eigen::Index j = 0; j < len; ++j) {
        const Eigen::Index key = r.lo + j;
        const double ds = w(i, key) * (dw(j) - weighted) * scale;
        dQ.row(i).segment(off, dh) += ds * c.K.row(key).segment(off, dh);
        dK.row(key).segment(off, dh) += ds * c.Q.row(i).segment(off, dh);
      }
    }
  }
  Mat dxq = q.backward(p, g, c.xq, dQ);
  Mat dxkv = k.backward(p, g, c.xkv, dK);
  dxkv += v.backward(p, g, c.xkv, dV);
  return {std::move(dxq), std::move(dxkv)};
}

// ------------------------------------------------------------ Sublayers

SelfAttentionSublayer SelfAttentionSublayer::create(ParamStore& store,
                                                    const std::string& prefix,
                                                    Eigen::Index d, int heads) {
  SelfAttentionSublayer s;
  s.norm = LayerNorm::create(store, prefix + ".norm", d);
  s.attn = Attention::create(store, prefix + ".attn", d, heads);
  return s;
}

Mat SelfAttentionSublayer::forward(const ParamStore& p, const Mat& x,
                                   const std::vector<KeyRange>& ranges,
                                   Cache* cache) const {
  const Mat normed = norm.forward(p, x, cache ? &cache->norm : nullptr);
  return x + attn.forward(p, normed, normed, ranges, cache ? &cache->attn : nullptr);
}

Mat SelfAttentionSublayer::backward(const ParamStore& p, ParamStore& g,
                                    const Cache& cache, const Mat& dy) const {
  auto [dq, dkv] = attn.backward(p, g, cache.attn, dy);
  dq += dkv;
  return dy + norm.backward(p, g, cache.norm, dq);
}

CrossAttentionSublayer CrossAttentionSublayer::create(ParamStore& store,
                                                      const std::string& prefix,
                                                      Eigen::Index d,
                                                      int heads) {
  CrossAttentionSublayer s;
  s.norm_q = LayerNorm::create(store, prefix + ".norm_q", d);
  s.norm_kv = LayerNorm::create(store, prefix + ".norm_kv", d);
  s.attn = Attention::create(store, prefix + ".attn", d, heads);
  return s;
}

Mat CrossAttentionSublayer::forward(const ParamStore& p, const Mat& xq,
                                    const Mat& xkv,
                                    const std::vector<KeyRange>& ranges,
                                    Cache* cache) const {
  const Mat nq = norm_q.forward(p, xq, cache ? &cache->norm_q : nullptr);
  const Mat nkv = norm_kv.forward(p, xkv, cache ? &cache->norm_kv : nullptr);
  return xq + attn.forward(p, nq, nkv, ranges, cache ? &cache->attn : nullptr);
}

std::pair<Mat, Mat> CrossAttentionSublayer::backward(const ParamStore& p,
                                                     ParamStore& g,
                                                     const Cache& cache,
                                                     const Mat& dy) const {
  auto [dq, dkv] = attn.backward(p, g, cache.attn, dy);
  Mat dxq = dy + norm_q.backward(p, g, cache.norm_q, dq);
  Mat dxkv = norm_kv.backward(p, g, cache.norm_kv, dkv);
  return {std::move(dxq), std::move(dxkv)};
}

FeedForwardSublayer FeedForwardSublayer::create(ParamStore& store,
                                                const std::string& prefix,
                                                Eigen::Index d,
                                                Eigen::Index width) {
  FeedForwardSublayer f;
  f.norm = LayerNorm::create(store, prefix + ".norm", d);
  f.fc1 = Linear::create(store, prefix + ".fc1", d, width);
  f.fc2 = Linear::create(store, prefix + ".fc2", width, d);
  return f;
}

Mat FeedForwardSublayer::forward(const ParamStore& p, const Mat& x,
                                 Cache* cache) const {
  LayerNorm::Cache nc;
  Mat normed = norm.forward(p, x, &nc);
  Mat hidden = relu(fc1.forward(p, normed));
  Mat y = x + fc2.forward(p, hidden);
  if (cache) {
    cache->norm = std::move(nc);
    cache->normed = std::move(normed);
    cache->hidden = std::move(hidden);
  }
  return y;
}

Mat FeedForwardSublayer::backward(const ParamStore& p, ParamStore& g,
                                  const Cache& cache, const Mat& dy) const {
  Mat dh = fc2.backward(p, g, cache.hidden, dy);
  dh = (cache.hidden.array() > 0.0).select(dh, 0.0);
  const Mat dn = fc1.backward(p, g, cache.normed, dh);
  return dy + norm.backward(p, g, cache.norm, dn);
}

// ---------------------------------------------------------------- Conv1d

Conv1d Conv1d::create(ParamStore& store, const std::string& prefix, int in,
                      int out, int kernel) {
  Conv1d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  const double std = std::sqrt(2.0 / static_cast<double>(in * kernel));
  c.weight = store.add(prefix + ".weight", out, static_cast<Eigen::Index>(in) * kernel, 0.0, std);
  c.bias = store.add(prefix + ".bias", out, 1);
  return c;
}

namespace {

Mat im2col(const Mat& x, int kernel, Eigen::Index out_len) {
  const Eigen::Index in = x.rows();
  Mat cols(in * kernel, out_len);
  for (int kk = 0; kk < kernel; ++kk) {
    cols.middleRows(kk * in, in) = x.middleCols(kk, out_len);
  }
  return cols;
}

}  // namespace

Mat Conv1d::forward(const ParamStore& p, const Mat& x) const {
  const Eigen::Index out_len = x.cols() - kernel + 1;
  if (x.rows() != in || out_len < 1) {
    throw Error("shape_mismatch", "conv input has wrong channels or is shorter than the kernel");
  }
  Mat y = p[weight] * im2col(x, kernel, out_len);
  y.colwise() += p[bias].col(0);
  return y;
}

Mat Conv1d::backward(const ParamStore& p, ParamStore& g, const Mat& x,
                     const Mat& dy) const {
  const Eigen::Index out_len = dy.cols();
  g[weight].noalias() += dy * im2col(x, kernel, out_len).transpose();
  g[bias].col(0) += dy.rowwise().sum();
  const Mat dcols = p[weight].transpose() * dy;
  Mat dx = Mat::Zero(x.rows(), x.cols());
  for (int kk = 0; kk < kernel; ++kk) {
    dx.middleCols(kk, out_len) += dcols.middleRows(kk * in, in);
  }
  return dx;
}

// ------------------------------------------------------------- BatchNorm

BatchNorm BatchNorm::create(ParamStore& store, const std::string& prefix,
                            int channels) {
  BatchNorm b;
  b.gamma = store.add(prefix + ".gamma", channels, 1, 1.0);
  b.beta = store.add(prefix + ".beta", channels, 1);
  b.running_mean = store.add(prefix + ".running_mean", channels, 1, 0.0, 0.0, false);
  b.running_var = store.add(prefix + ".running_var", channels, 1, 1.0, 0.0, false);
  return b;
}

std::vector<Mat> BatchNorm::forward(const ParamStore& p,
                                    const std::vector<Mat>& xs,
                                    bool batch_stats, Cache* cache,
                                    Stats* stats) const {
  const Eigen::Index channels = p[gamma].rows();
  Vec mean, var;
  if (batch_stats) {
    Eigen::Index count = 0;
    mean = Vec::Zero(channels);
    for (const auto& x : xs) {
      mean += x.rowwise().sum();
      count += x.cols();
    }
    mean /= static_cast<double>(count);
    var = Vec::Zero(channels);
    for (const auto& x : xs) {
      var += (x.colwise() - mean).array().square().rowwise().sum().matrix();
    }
    var /= static_cast<double>(count);
    if (stats) *stats = Stats{mean, var, count};
  } else {
    mean = p[running_mean].col(0);
    var = p[running_var].col(0);
  }
  const Vec inv_std = (var.array() + eps).rsqrt().matrix();
  std::vector<Mat> ys;
  ys.reserve(xs.size());
  std::vector<Mat> xhats;
  for (const auto& x : xs) {
    Mat xhat = (x.colwise() - mean).array().colwise() * inv_std.array();
    Mat y = xhat.array().colwise() * p[gamma].col(0).array();
    y.colwise() += p[beta].col(0);
    ys.push_back(std::move(y));
    if (cache) xhats.push_back(std::move(xhat));
  }
  if (cache) {
    cache->xhat = std::move(xhats);
    cache->inv_std = inv_std;
    cache->batch_stats = batch_stats;
  }
  return ys;
}

std::vector<Mat> BatchNorm::backward(const ParamStore& p, ParamStore& g,
                                     const Cache& cache,
                                     const std::vector<Mat>& dys) const {
  const Eigen::Index channels = p[gamma].rows();
  Vec sum_dy = Vec::Zero(channels);
  Vec sum_dy_xhat = Vec::Zero(channels);
  Eigen::Index count = 0;
  for (std::size_t s = 0; s < dys.size(); ++s) {
    sum_dy += dys[s].rowwise().sum();
    sum_dy_xhat += (dys[s].array() * cache.xhat[s].array()).rowwise().sum().matrix();
    count += dys[s].cols();
  }
  g[gamma].col(0) += sum_dy_xhat;
  g[beta].col(0) += sum_dy;

  const Vec& gm = p[gamma].col(0);
  std::vector<Mat> dxs;
  dxs.reserve(dys.size());
  if (!cache.batch_stats) {
    const Vec scale = gm.cwiseProduct(cache.inv_std);
    for (const auto& dy : dys) dxs.push_back(dy.array().colwise() * scale.array());
    return dxs;
  }
  // dx = gamma inv_std / M (M dy - sum dy - xhat sum(dy xhat)).
  const auto m = static_cast<double>(count);
  const Vec mean_dy = sum_dy / m;
  const Vec mean_dy_xhat = sum_dy_xhat / m;
  const Vec scale = gm.cwiseProduct(cache.inv_std);
  for (std::size_t s = 0; s < dys.size(); ++s) {
    Mat dx = (dys[s].colwise() - mean_dy) -
             Mat(cache.xhat[s].array().colwise() * mean_dy_xhat.array());
    dx = dx.array().colwise() * scale.array();
    dxs.push_back(std::move(dx));
  }
  return dxs;
}

void BatchNorm::update_running(ParamStore& p, const Stats& stats,
                               double momentum) const {
  const double m = static_cast<double>(stats.count);
  const double correction = m > 1 ? m / (m - 1.0) : 1.0;
  p[running_mean].col(0) = (1.0 - momentum) * p[running_mean].col(0) + momentum * stats.mean;
  p[running_var].col(0) =
      (1.0 - momentum) * p[running_var].col(0) + momentum * correction * stats.var;
}

// ------------------------------------------------------------ Elementwise

MaxPoolResult max_pool(const Mat& x, int size) {
  const Eigen::Index out_len = x.cols() / size;
  if (out_len < 1) throw Error("shape_mismatch", "sequence shorter than pool window");
  MaxPoolResult r;
  r.y.resize(x.rows(), out_len);
  r.argmax.resize(x.rows(), out_len);
  for (Eigen::Index t = 0; t < out_len; ++t) {
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
      Eigen::Index best = t * size;
      for (Eigen::Index k = 1; k < size; ++k) {
        if (x(c, t * size + k) > x(c, best)) best = t * size + k;
      }
      r.y(c, t) = x(c, best);
      r.argmax(c, t) = best;
    }
  }
  return r;
}

Mat max_pool_backward(const MaxPoolResult& fwd, Eigen::Index in_len,
                      const Mat& dy) {
  Mat dx = Mat::Zero(dy.rows(), in_len);
  for (Eigen::Index t = 0; t < dy.cols(); ++t) {
    for (Eigen::Index c = 0; c < dy.rows(); ++c) dx(c, fwd.argmax(c, t)) += dy(c, t);
  }
  return dx;
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = rng.uniform() < rate ? 0.0 : keep;
  }
  return mask;
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

}  // namespace prismwf::nn
