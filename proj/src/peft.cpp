#include "coefflab/peft.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "coefflab/adam.hpp"
#include "coefflab/random.hpp"
#include "coefflab/toy.hpp"

namespace coefflab {

namespace {

constexpr std::uint64_t kBackboneStream = 21;
constexpr std::uint64_t kTaskStream = 22;
constexpr std::uint64_t kTuneStream = 23;
constexpr std::uint64_t kBatchStream = 24;

// c (m x n) = a (m x k) * b (k x n), or += when acc.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool acc) {
  if (!acc) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* bp = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c (m x n) (+)= a b^T with a (m x k), b (n x k).
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc ? c[i * n + j] + s : s;
    }
  }
}

struct LayerCache {
  // x: N x C layer input; q/k/v: N x C with head i in columns [i*d, (i+1)*d);
  // f/fh: H blocks of N x N raw and mixed attention; g: N x C head outputs.
  std::vector<double> x, q, k, v, f, fh, g;
};

// Flattened frozen backbone. Each layer computes
//   X + concat_h(Fhat^h X W_v^h) W_o,  Fhat^h = sum_i alpha'[h,i] F^i,
// which equals X + sum_h Fhat^h X W^h.
class Engine {
 public:
  explicit Engine(const FrozenBackbone& bb)
      : bb_(bb),
        n_(bb.spec.tokens),
        c_(bb.spec.dim),
        h_(bb.spec.heads),
        d_(bb.spec.dim / bb.spec.heads),
        l_(bb.spec.layers),
        wq_(l_, std::vector<double>(c_ * c_)),
        wk_(l_, std::vector<double>(c_ * c_)),
        wv_(l_, std::vector<double>(c_ * c_)),
        alpha_(l_, std::vector<double>(h_ * h_)) {
    for (std::size_t l = 0; l < l_; ++l) {
      const AttentionParams& p = bb.layers[l];
      for (std::size_t i = 0; i < h_; ++i) {
        for (std::size_t r = 0; r < c_; ++r) {
          for (std::size_t t = 0; t < d_; ++t) {
            wq_[l][r * c_ + i * d_ + t] = p.wq[i](r, t);
            wk_[l][r * c_ + i * d_ + t] = p.wk[i](r, t);
            wv_[l][r * c_ + i * d_ + t] = p.wv[i](r, t);
          }
        }
      }
    }
  }

  std::size_t dim() const { return c_; }

  void mix(const std::vector<Matrix>& alpha_prime) {
    if (alpha_prime.size() != l_) {
      throw ArityError("expected " + std::to_string(l_) + " coefficient matrices, got " +
                       std::to_string(alpha_prime.size()));
    }
    for (std::size_t l = 0; l < l_; ++l) {
      if (alpha_prime[l].rows() != h_ || alpha_prime[l].cols() != h_) {
        throw DimensionError("layer coefficient must be " + std::to_string(h_) + "x" +
                             std::to_string(h_) + ", got " + alpha_prime[l].shape());
      }
      auto a = alpha_prime[l].data();
      std::copy(a.begin(), a.end(), alpha_[l].begin());
    }
  }

  std::vector<LayerCache> make_cache() const {
    std::vector<LayerCache> cache(l_);
    for (auto& lc : cache) {
      for (auto* buf : {&lc.x, &lc.q, &lc.k, &lc.v, &lc.g}) buf->resize(n_ * c_);
      lc.f.resize(h_ * n_ * n_);
      lc.fh.resize(h_ * n_ * n_);
    }
    return cache;
  }

  // Mean-pooled features. cache must come from make_cache().
  void forward(const Matrix& x, std::vector<LayerCache>& cache, double* feat) const {
    if (x.rows() != n_ || x.cols() != c_) {
      throw DimensionError("sample must be " + std::to_string(n_) + "x" + std::to_string(c_) +
                           ", got " + x.shape());
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    const std::size_t nn = n_ * n_;
    for (std::size_t l = 0; l < l_; ++l) {
      LayerCache& lc = cache[l];
      std::copy(out.begin(), out.end(), lc.x.begin());
      const double* cur = lc.x.data();
      gemm_nn(cur, wq_[l].data(), lc.q.data(), n_, c_, c_, false);
      gemm_nn(cur, wk_[l].data(), lc.k.data(), n_, c_, c_, false);
      gemm_nn(cur, wv_[l].data(), lc.v.data(), n_, c_, c_, false);
      for (std::size_t i = 0; i < h_; ++i) {
        double* fi = lc.f.data() + i * nn;
        for (std::size_t r = 0; r < n_; ++r) {
          const double* qr = lc.q.data() + r * c_ + i * d_;
          double* row = fi + r * n_;
          for (std::size_t j = 0; j < n_; ++j) {
            const double* kj = lc.k.data() + j * c_ + i * d_;
            double s = 0.0;
            for (std::size_t t = 0; t < d_; ++t) s += qr[t] * kj[t];
            row[j] = s;
          }
          const double mx = *std::max_element(row, row + n_);
          double total = 0.0;
          for (std::size_t j = 0; j < n_; ++j) {
            row[j] = std::exp(row[j] - mx);
            total += row[j];
          }
          for (std::size_t j = 0; j < n_; ++j) row[j] /= total;
        }
      }
      const double* a = alpha_[l].data();
      for (std::size_t h = 0; h < h_; ++h) {
        double* fh = lc.fh.data() + h * nn;
        std::fill(fh, fh + nn, 0.0);
        for (std::size_t i = 0; i < h_; ++i) {
          const double w = a[h * h_ + i];
          const double* fi = lc.f.data() + i * nn;
#pragma omp simd
          for (std::size_t e = 0; e < nn; ++e) fh[e] += w * fi[e];
        }
        for (std::size_t r = 0; r < n_; ++r) {
          double* gr = lc.g.data() + r * c_ + h * d_;
          for (std::size_t t = 0; t < d_; ++t) gr[t] = 0.0;
          for (std::size_t j = 0; j < n_; ++j) {
            const double w = fh[r * n_ + j];
            const double* vj = lc.v.data() + j * c_ + h * d_;
            for (std::size_t t = 0; t < d_; ++t) gr[t] += w * vj[t];
          }
        }
      }
      gemm_nn(lc.g.data(), bb_.layers[l].wo.data().data(), out.data(), n_, c_, c_, true);
    }
    for (std::size_t col = 0; col < c_; ++col) feat[col] = 0.0;
    for (std::size_t r = 0; r < n_; ++r) {
      for (std::size_t col = 0; col < c_; ++col) feat[col] += out[r * c_ + col];
    }
    for (std::size_t col = 0; col < c_; ++col) feat[col] /= static_cast<double>(n_);
  }

  // dalpha_prime holds L blocks of H x H, overwritten.
  void backward(const std::vector<LayerCache>& cache, const double* dfeat,
                double* dalpha_prime) const {
    const std::size_t nn = n_ * n_;
    std::vector<double> dnext(n_ * c_), dx(n_ * c_), dg(n_ * c_), dfh(h_ * nn), df(nn),
        dq(n_ * c_), dk(n_ * c_), dv(n_ * c_);
    for (std::size_t r = 0; r < n_; ++r) {
      for (std::size_t col = 0; col < c_; ++col) {
        dnext[r * c_ + col] = dfeat[col] / static_cast<double>(n_);
      }
    }
    for (std::size_t l = l_; l-- > 0;) {
      const LayerCache& lc = cache[l];
      const double* a = alpha_[l].data();
      double* da = dalpha_prime + l * h_ * h_;
      gemm_nt(dnext.data(), bb_.layers[l].wo.data().data(), dg.data(), n_, c_, c_, false);
      std::fill(dv.begin(), dv.end(), 0.0);
      for (std::size_t h = 0; h < h_; ++h) {
        double* dfhh = dfh.data() + h * nn;
        const double* fh = lc.fh.data() + h * nn;
        for (std::size_t r = 0; r < n_; ++r) {
          const double* gr = dg.data() + r * c_ + h * d_;
          for (std::size_t j = 0; j < n_; ++j) {
            const double* vj = lc.v.data() + j * c_ + h * d_;
            double* dvj = dv.data() + j * c_ + h * d_;
            const double w = fh[r * n_ + j];
            double s = 0.0;
            for (std::size_t t = 0; t < d_; ++t) {
              s += gr[t] * vj[t];
              dvj[t] += w * gr[t];
            }
            dfhh[r * n_ + j] = s;
          }
        }
        for (std::size_t i = 0; i < h_; ++i) {
          const double* fi = lc.f.data() + i * nn;
          double s = 0.0;
#pragma omp simd reduction(+ : s)
          for (std::size_t e = 0; e < nn; ++e) s += dfhh[e] * fi[e];
          da[h * h_ + i] = s;
        }
      }
      if (l == 0) break;
      dx = dnext;
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      for (std::size_t i = 0; i < h_; ++i) {
        const double* fi = lc.f.data() + i * nn;
        std::fill(df.begin(), df.end(), 0.0);
        for (std::size_t h = 0; h < h_; ++h) {
          const double w = a[h * h_ + i];
          const double* dfhh = dfh.data() + h * nn;
#pragma omp simd
          for (std::size_t e = 0; e < nn; ++e) df[e] += w * dfhh[e];
        }
        for (std::size_t r = 0; r < n_; ++r) {
          const double* fr = fi + r * n_;
          double* dr = df.data() + r * n_;
          double dot = 0.0;
          for (std::size_t j = 0; j < n_; ++j) dot += dr[j] * fr[j];
          for (std::size_t j = 0; j < n_; ++j) dr[j] = fr[j] * (dr[j] - dot);
        }
        for (std::size_t r = 0; r < n_; ++r) {
          const double* dr = df.data() + r * n_;
          double* dqr = dq.data() + r * c_ + i * d_;
          const double* qr = lc.q.data() + r * c_ + i * d_;
          for (std::size_t j = 0; j < n_; ++j) {
            const double* kj = lc.k.data() + j * c_ + i * d_;
            double* dkj = dk.data() + j * c_ + i * d_;
            for (std::size_t t = 0; t < d_; ++t) {
              dqr[t] += dr[j] * kj[t];
              dkj[t] += dr[j] * qr[t];
            }
          }
        }
      }
      gemm_nt(dq.data(), wq_[l].data(), dx.data(), n_, c_, c_, true);
      gemm_nt(dk.data(), wk_[l].data(), dx.data(), n_, c_, c_, true);
      gemm_nt(dv.data(), wv_[l].data(), dx.data(), n_, c_, c_, true);
      std::swap(dnext, dx);
    }
  }

 private:
  const FrozenBackbone& bb_;
  std::size_t n_, c_, h_, d_, l_;
  std::vector<std::vector<double>> wq_, wk_, wv_;
  std::vector<std::vector<double>> alpha_;
};

std::vector<Matrix> identity_coefficients(std::size_t layers, std::size_t heads) {
  return std::vector<Matrix>(layers, Matrix::identity(heads));
}

struct Head {
  Matrix w;  // dim x classes
  Matrix b;  // 1 x classes
};

// Loss and gradient of the mean squared error against one-hot labels; fills
// dfeat (samples x dim) when given.
double head_loss(const Head& head, const std::vector<double>& feats,
                 const std::vector<const Sample*>& data,
                 std::size_t dim, Matrix* dw, Matrix* db, std::vector<double>* dfeat,
                 std::size_t* correct) {
  const std::size_t k = head.w.cols(), n = data.size();
  const double denom = static_cast<double>(n * k);
  double loss = 0.0;
  std::size_t hits = 0;
  if (dw) *dw = Matrix(dim, k);
  if (db) *db = Matrix(1, k);
  if (dfeat) dfeat->assign(n * dim, 0.0);
  std::vector<double> out(k), g(k);
  for (std::size_t s = 0; s < n; ++s) {
    const double* fs = feats.data() + s * dim;
    for (std::size_t j = 0; j < k; ++j) {
      double v = head.b(0, j);
      for (std::size_t c = 0; c < dim; ++c) v += fs[c] * head.w(c, j);
      out[j] = v;
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (out[j] > out[best]) best = j;
    }
    if (best == data[s]->label) ++hits;
    for (std::size_t j = 0; j < k; ++j) {
      const double diff = out[j] - (j == data[s]->label ? 1.0 : 0.0);
      loss += diff * diff;
      g[j] = 2.0 * diff / denom;
    }
    if (dw) {
      for (std::size_t c = 0; c < dim; ++c) {
        for (std::size_t j = 0; j < k; ++j) (*dw)(c, j) += fs[c] * g[j];
      }
    }
    if (db) {
      for (std::size_t j = 0; j < k; ++j) (*db)(0, j) += g[j];
    }
    if (dfeat) {
      for (std::size_t c = 0; c < dim; ++c) {
        double v = 0.0;
        for (std::size_t j = 0; j < k; ++j) v += head.w(c, j) * g[j];
        (*dfeat)[s * dim + c] = v;
      }
    }
  }
  if (correct) *correct = hits;
  return loss / denom;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& data) {
  std::vector<const Sample*> out;
  for (const Sample& s : data) out.push_back(&s);
  return out;
}

std::vector<double> all_features(const Engine& eng, const std::vector<const Sample*>& data,
                                 std::vector<std::vector<LayerCache>>* caches) {
  const std::size_t dim = eng.dim();
  std::vector<double> feats(data.size() * dim);
  const long n = static_cast<long>(data.size());
#pragma omp parallel
  {
    std::vector<LayerCache> scratch = eng.make_cache();
#pragma omp for schedule(static)
    for (long s = 0; s < n; ++s) {
      eng.forward(data[s]->x, caches ? (*caches)[s] : scratch, feats.data() + s * dim);
    }
  }
  return feats;
}

Matrix initial_alpha(TuneMode mode, std::size_t heads, Rng& rng) {
  switch (mode) {
    case TuneMode::AlphaDirectRandom: return gaussian(heads, heads, kRandomAlphaStd, rng);
    case TuneMode::AlphaDirectIdentity: return Matrix::identity(heads);
    default: return Matrix(heads, heads);
  }
}

bool residual_mode(TuneMode mode) {
  return mode == TuneMode::AlphaResidual || mode == TuneMode::LinearProbe;
}

std::vector<Matrix> eval_coefficients(TuneMode mode, const std::vector<Matrix>& alpha) {
  std::vector<Matrix> out;
  for (const Matrix& a : alpha) {
    out.push_back(residual_mode(mode) ? add(a, Matrix::identity(a.rows())) : a);
  }
  return out;
}

}  // namespace

FrozenBackbone build_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  if (spec.layers < 1 || spec.heads < 1 || spec.tokens < 1 || spec.dim < 1) {
    throw UsageError("backbone sizes must be >= 1");
  }
  if (spec.dim % spec.heads != 0) {
    throw DimensionError("backbone dim " + std::to_string(spec.dim) + " not divisible by " +
                         std::to_string(spec.heads) + " heads");
  }
  Rng rng(derive_seed(seed, kBackboneStream, 0));
  const std::size_t d = spec.dim / spec.heads;
  const double vo_std = 1.0 / std::sqrt(static_cast<double>(spec.dim));
  FrozenBackbone bb;
  bb.spec = spec;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    AttentionParams p;
    p.heads = spec.heads;
    for (std::size_t h = 0; h < spec.heads; ++h) {
      p.wq.push_back(gaussian(spec.dim, d, spec.qk_std, rng));
      p.wk.push_back(gaussian(spec.dim, d, spec.qk_std, rng));
      p.wv.push_back(gaussian(spec.dim, d, vo_std, rng));
    }
    p.wo = gaussian(spec.dim, spec.dim, vo_std, rng);
    validate(p);
    bb.head_weights.push_back(head_weights(p));
    bb.layers.push_back(std::move(p));
  }
  return bb;
}

SyntheticTask generate_task(const TaskSpec& spec, const FrozenBackbone& backbone,
                            std::uint64_t seed) {
  const std::size_t k = spec.classes;
  if (k < 2) throw UsageError("need at least 2 classes");
  if (spec.train_samples < k || spec.test_samples < k) {
    throw UsageError("each split needs at least one sample per class");
  }
  if (!(spec.keep > 0.0 && spec.keep <= 1.0)) throw UsageError("keep must be in (0, 1]");

  Rng rng(derive_seed(seed, kTaskStream, 0));
  const BackboneSpec& bs = backbone.spec;
  std::vector<Matrix> teacher;
  for (std::size_t l = 0; l < bs.layers; ++l) {
    teacher.push_back(
        add(gaussian(bs.heads, bs.heads, spec.teacher_alpha_std, rng), Matrix::identity(bs.heads)));
  }
  const Matrix direction = gaussian(bs.dim, 1, 1.0, rng);

  const std::size_t per_class = (spec.train_samples + k - 1) / k + (spec.test_samples + k - 1) / k;
  const std::size_t pool = static_cast<std::size_t>(
                               std::ceil(static_cast<double>(per_class * k) / spec.keep)) +
                           k;
  std::vector<Sample> all(pool);
  for (auto& s : all) s.x = gaussian(bs.tokens, bs.dim, 1.0, rng);

  Engine eng(backbone);
  eng.mix(teacher);
  std::vector<double> feats = all_features(eng, pointers(all), nullptr);
  std::vector<double> score(pool);
  for (std::size_t s = 0; s < pool; ++s) {
    double v = 0.0;
    for (std::size_t c = 0; c < bs.dim; ++c) v += feats[s * bs.dim + c] * direction(c, 0);
    score[s] = v;
  }
  std::vector<std::size_t> order(pool);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });

  const std::size_t bin = static_cast<std::size_t>(static_cast<double>(pool) * spec.keep) / k;
  const std::size_t gap = (pool - k * bin) / (k - 1);
  SyntheticTask task;
  task.seed = seed;
  task.classes = k;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> members(order.begin() + c * (bin + gap),
                                     order.begin() + c * (bin + gap) + bin);
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n_train = spec.train_samples / k + (c < spec.train_samples % k ? 1 : 0);
    const std::size_t n_test = spec.test_samples / k + (c < spec.test_samples % k ? 1 : 0);
    for (std::size_t i = 0; i < n_train + n_test; ++i) {
      Sample s{all[members[i]].x, c};
      (i < n_train ? task.train : task.test).push_back(std::move(s));
    }
  }
  std::shuffle(task.train.begin(), task.train.end(), rng);
  std::shuffle(task.test.begin(), task.test.end(), rng);
  return task;
}

SyntheticTask generate_task(std::uint64_t seed, std::size_t tokens, std::size_t in_dim,
                            std::size_t classes, std::size_t samples) {
  if (samples < classes) throw UsageError("samples must be >= classes");
  TaskSpec spec;
  spec.backbone.tokens = tokens;
  spec.backbone.dim = in_dim;
  if (in_dim % spec.backbone.heads != 0) spec.backbone.heads = 1;
  spec.classes = classes;
  spec.train_samples = samples;
  spec.test_samples = samples;
  return generate_task(spec, build_backbone(spec.backbone, seed), seed);
}

std::string to_string(TuneMode m) {
  switch (m) {
    case TuneMode::LinearProbe: return "linear-probe";
    case TuneMode::AlphaResidual: return "residual-zero-init";
    case TuneMode::AlphaDirectRandom: return "direct-random-init";
    case TuneMode::AlphaDirectIdentity: return "direct-identity-init";
  }
  return "?";
}

TuneMode parse_tune_mode(std::string_view name) {
  for (TuneMode m : kAllTuneModes) {
    if (name == to_string(m)) return m;
  }
  throw UsageError("unknown tuning mode '" + std::string(name) + "'");
}

std::vector<double> backbone_features(const FrozenBackbone& bb, const Matrix& x,
                                      const std::vector<Matrix>& alpha_prime) {
  Engine eng(bb);
  eng.mix(alpha_prime);
  std::vector<double> feat(bb.spec.dim);
  std::vector<LayerCache> cache = eng.make_cache();
  eng.forward(x, cache, feat.data());
  return feat;
}

std::vector<Matrix> backbone_alpha_grad(const FrozenBackbone& bb, const Matrix& x,
                                        const std::vector<Matrix>& alpha_prime,
                                        const std::vector<double>& w) {
  if (w.size() != bb.spec.dim) throw DimensionError("weight vector must match backbone dim");
  Engine eng(bb);
  eng.mix(alpha_prime);
  std::vector<LayerCache> cache = eng.make_cache();
  std::vector<double> feat(bb.spec.dim);
  eng.forward(x, cache, feat.data());
  const std::size_t h = bb.spec.heads;
  std::vector<double> flat(bb.spec.layers * h * h);
  eng.backward(cache, w.data(), flat.data());
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < bb.spec.layers; ++l) {
    out.emplace_back(h, h, std::vector<double>(flat.begin() + l * h * h,
                                               flat.begin() + (l + 1) * h * h));
  }
  return out;
}

TuneMetrics tune(const FrozenBackbone& bb, const SyntheticTask& task, const TuneConfig& cfg) {
  if (cfg.steps < 1) throw UsageError("steps must be >= 1");
  if (!(cfg.alpha_lr > 0.0) || !(cfg.head_lr > 0.0)) throw UsageError("learning rates must be > 0");
  if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p <= 1.0)) {
    throw UsageError("dropout p must be in [0, 1]");
  }
  if (task.train.empty() || task.test.empty()) throw UsageError("task has an empty split");

  const std::size_t layers = bb.spec.layers, heads = bb.spec.heads, dim = bb.spec.dim;
  const std::size_t k = task.classes;
  const bool probe = cfg.mode == TuneMode::LinearProbe;
  const bool residual = residual_mode(cfg.mode);
  const bool learn_alpha = !probe && !cfg.freeze_alpha;
  const bool dropout = !probe && cfg.dropout_enabled;

  Rng rng(derive_seed(cfg.seed, kTuneStream, 0));
  std::vector<Matrix> alpha;
  for (std::size_t l = 0; l < layers; ++l) alpha.push_back(initial_alpha(cfg.mode, heads, rng));

  Head head{Matrix(dim, k), Matrix(1, k)};
  Adam head_opt(AdamConfig{cfg.head_lr});
  Adam alpha_opt(AdamConfig{cfg.alpha_lr});
  Engine eng(bb);

  TuneMetrics out;
  out.trainable_params = dim * k + k + (probe ? 0 : count_coeff_params(heads, layers));

  const std::vector<const Sample*> train = pointers(task.train), test = pointers(task.test);
  const std::size_t n = train.size();
  const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);

  std::vector<double> cached;
  if (probe) {
    eng.mix(identity_coefficients(layers, heads));
    cached = all_features(eng, train, nullptr);
  }
  std::vector<std::vector<LayerCache>> caches(learn_alpha ? batch : 0, eng.make_cache());
  std::vector<double> dfeat, dalpha(learn_alpha ? batch * layers * heads * heads : 0);
  std::vector<double> feats(batch * dim);
  Matrix dw, db;

  // Epoch-wise shuffled minibatches from their own stream, so every mode
  // sees the same batch sequence.
  Rng batch_rng(derive_seed(cfg.seed, kBatchStream, 0));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;
  std::vector<std::size_t> idx(batch);
  std::vector<const Sample*> items(batch);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (batch == n) {
      std::iota(idx.begin(), idx.end(), 0);
    } else {
      for (std::size_t b = 0; b < batch; ++b) {
        if (cursor == n) {
          std::shuffle(order.begin(), order.end(), batch_rng);
          cursor = 0;
        }
        idx[b] = order[cursor++];
      }
    }
    for (std::size_t b = 0; b < batch; ++b) items[b] = train[idx[b]];

    std::vector<Matrix> masks;
    if (!probe) {
      std::vector<Matrix> ap;
      for (std::size_t l = 0; l < layers; ++l) {
        Matrix a = alpha[l];
        if (dropout) {
          masks.push_back(dropout_mask(heads, cfg.dropout_p, true, rng));
          a = hadamard(a, masks.back());
        }
        if (residual) a = add(a, Matrix::identity(heads));
        ap.push_back(std::move(a));
      }
      eng.mix(ap);
      feats = all_features(eng, items, learn_alpha ? &caches : nullptr);
    } else {
      for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(cached.begin() + idx[b] * dim, dim, feats.begin() + b * dim);
      }
    }
    const double loss =
        head_loss(head, feats, items, dim, &dw, &db, learn_alpha ? &dfeat : nullptr, nullptr);
    if (!std::isfinite(loss)) throw TrainingError(step, "non-finite loss");
    out.train_loss = loss;

    if (learn_alpha) {
      const std::size_t block = layers * heads * heads;
      const long lb = static_cast<long>(batch);
#pragma omp parallel for schedule(static)
      for (long s = 0; s < lb; ++s) {
        eng.backward(caches[s], dfeat.data() + s * dim, dalpha.data() + s * block);
      }
      std::vector<Matrix> grads(layers, Matrix(heads, heads));
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t l = 0; l < layers; ++l) {
          auto g = grads[l].data();
          const double* src = dalpha.data() + s * block + l * heads * heads;
          for (std::size_t e = 0; e < heads * heads; ++e) g[e] += src[e];
        }
      }
      for (std::size_t l = 0; l < layers; ++l) {
        if (dropout) grads[l] = hadamard(grads[l], masks[l]);
        if (!all_finite(grads[l])) throw TrainingError(step, "non-finite coefficient gradient");
      }
      std::vector<Matrix*> ptrs;
      for (auto& a : alpha) ptrs.push_back(&a);
      alpha_opt.step(ptrs, grads);
    }
    head_opt.step({&head.w, &head.b}, {dw, db});
  }

  eng.mix(probe ? identity_coefficients(layers, heads) : eval_coefficients(cfg.mode, alpha));
  std::size_t hits = 0;
  head_loss(head, all_features(eng, train, nullptr), train, dim, nullptr, nullptr, nullptr, &hits);
  out.train_acc = static_cast<double>(hits) / static_cast<double>(n);
  out.test_loss =
      head_loss(head, all_features(eng, test, nullptr), test, dim, nullptr, nullptr, nullptr, &hits);
  out.test_acc = static_cast<double>(hits) / static_cast<double>(test.size());
  if (!probe) out.alpha = alpha;
  return out;
}

bool AblationReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const OrderingCheck& c) { return !c.gating || c.pass(); });
}

const AblationRow* AblationReport::find(TuneMode m, double p, std::uint64_t seed) const {
  for (const auto& r : rows) {
    if (r.mode == m && r.dropout_p == p && r.seed == seed) return &r;
  }
  return nullptr;
}

AblationReport run_ablation_grid(const std::vector<std::uint64_t>& seeds,
                                 const AblationConfig& cfg, int jobs) {
  if (seeds.empty()) throw UsageError("need at least one seed");
  if (cfg.dropout_rates.empty() || cfg.modes.empty()) throw UsageError("empty ablation grid");

  struct Cell {
    std::size_t seed_index;
    TuneMode mode;
    double p;
  };
  std::vector<FrozenBackbone> backbones;
  std::vector<SyntheticTask> tasks;
  std::vector<Cell> cells;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    backbones.push_back(build_backbone(cfg.task.backbone, seeds[si]));
    tasks.push_back(generate_task(cfg.task, backbones.back(), seeds[si]));
    for (TuneMode m : cfg.modes) {
      if (m == TuneMode::LinearProbe) {
        cells.push_back({si, m, cfg.dropout_rates.front()});
        continue;
      }
      for (double p : cfg.dropout_rates) cells.push_back({si, m, p});
    }
  }

  std::vector<TuneMetrics> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  const long count = static_cast<long>(cells.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, jobs))
  for (long i = 0; i < count; ++i) {
    try {
      TuneConfig tc;
      tc.mode = cells[i].mode;
      tc.dropout_p = cells[i].p;
      tc.steps = cfg.steps;
      tc.batch_size = cfg.batch_size;
      tc.alpha_lr = cfg.lr;
      tc.head_lr = cfg.lr;
      tc.seed = seeds[cells[i].seed_index];
      results[i] = tune(backbones[cells[i].seed_index], tasks[cells[i].seed_index], tc);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  AblationReport report;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    // The probe ignores dropout, so one run fills every p column.
    const std::vector<double> ps =
        c.mode == TuneMode::LinearProbe ? cfg.dropout_rates : std::vector<double>{c.p};
    for (double p : ps) {
      report.rows.push_back({c.mode, p, seeds[c.seed_index], results[i].train_loss,
                             results[i].test_acc});
    }
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const AblationRow& a, const AblationRow& b) {
                     if (a.seed != b.seed) return a.seed < b.seed;
                     if (a.mode != b.mode) return a.mode < b.mode;
                     return a.dropout_p < b.dropout_p;
                   });
  report.checks = evaluate_orderings(report.rows);
  return report;
}

AblationReport run_ablation_grid(std::uint64_t seed, const AblationConfig& cfg) {
  return run_ablation_grid(std::vector<std::uint64_t>{seed}, cfg, 1);
}

std::vector<OrderingCheck> evaluate_orderings(const std::vector<AblationRow>& rows) {
  std::vector<std::uint64_t> seeds;
  for (const auto& r : rows) {
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  auto acc = [&](TuneMode m, double p, std::uint64_t s) -> std::optional<double> {
    for (const auto& r : rows) {
      if (r.mode == m && r.dropout_p == p && r.seed == s) return r.test_acc;
    }
    return std::nullopt;
  };
  const std::size_t majority = seeds.size() / 2 + 1;
  std::vector<OrderingCheck> checks;
  auto add_check = [&](std::string name, std::size_t required, auto holds_for,
                       bool gating = true) {
    OrderingCheck c{std::move(name), 0, 0, required, gating};
    for (auto s : seeds) {
      std::optional<bool> h = holds_for(s);
      if (!h) continue;
      ++c.seeds;
      if (*h) ++c.holds;
    }
    if (c.seeds == 0) return;
    c.required = std::min(c.required, c.seeds);
    checks.push_back(std::move(c));
  };
  auto compare = [&](TuneMode a, TuneMode b, bool strict) {
    return [&, a, b, strict](std::uint64_t s) -> std::optional<bool> {
      auto x = acc(a, 0.0, s), y = acc(b, 0.0, s);
      if (!x || !y) return std::nullopt;
      return strict ? *x > *y : *x >= *y;
    };
  };
  add_check("residual-zero-init > linear-probe", seeds.size(),
            compare(TuneMode::AlphaResidual, TuneMode::LinearProbe, true));
  add_check("residual-zero-init > direct-random-init", majority,
            compare(TuneMode::AlphaResidual, TuneMode::AlphaDirectRandom, true));
  add_check("residual-zero-init >= direct-identity-init >= direct-random-init", majority,
            [&](std::uint64_t s) -> std::optional<bool> {
              auto r = acc(TuneMode::AlphaResidual, 0.0, s);
              auto i = acc(TuneMode::AlphaDirectIdentity, 0.0, s);
              auto d = acc(TuneMode::AlphaDirectRandom, 0.0, s);
              if (!r || !i || !d) return std::nullopt;
              return *r >= *i && *i >= *d;
            },
            false);
  add_check("some p > 0 matches or beats p = 0 (residual)", majority,
            [&](std::uint64_t s) -> std::optional<bool> {
              auto base = acc(TuneMode::AlphaResidual, 0.0, s);
              if (!base) return std::nullopt;
              bool any = false, found = false;
              for (const auto& r : rows) {
                if (r.seed == s && r.mode == TuneMode::AlphaResidual && r.dropout_p > 0.0) {
                  found = true;
                  any = any || r.test_acc >= *base;
                }
              }
              if (!found) return std::nullopt;
              return any;
            },
            false);
  return checks;
}

}  // namespace coefflab
