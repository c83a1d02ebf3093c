#include "coast/align.hpp"

#include <algorithm>
#include <cmath>

#include "coast/errors.hpp"
#include "coast/util.hpp"

namespace coast {

AlignParams AlignParams::init(std::size_t d, const AlignConfig& cfg, std::mt19937_64& rng) {
  if (cfg.prototypes < 2) throw ConfigError("need at least 2 prototypes");
  if (!(cfg.tau > 0.0) || !(cfg.sinkhorn_eps > 0.0)) throw ConfigError("tau and sinkhorn_eps must be positive");
  AlignParams p;
  const std::array<std::size_t, 3> widths{d, cfg.proj_dim, cfg.proj_dim};
  for (auto& f : p.extractor) f = Mlp::init(widths, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> c(cfg.prototypes * cfg.proj_dim);
  for (auto& x : c) x = n(rng);
  p.prototypes = Tensor::from_data({cfg.prototypes, cfg.proj_dim}, std::move(c), true);
  p.normalize_prototypes();
  return p;
}

void AlignParams::register_into(ParamSet& params) const {
  extractor[0].register_into(params, "align.extract_S");
  extractor[1].register_into(params, "align.extract_T");
  params.add("align.prototypes", prototypes);
}

void AlignParams::normalize_prototypes() const {
  Tensor c = prototypes;
  auto v = c.mutable_data();
  const std::size_t dim = c.cols();
  for (std::size_t k = 0; k < c.rows(); ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += v[k * dim + j] * v[k * dim + j];
    const double norm = std::sqrt(sq);
    if (norm == 0.0) throw DegenerateOutputError("prototype " + std::to_string(k) + " collapsed to zero");
    for (std::size_t j = 0; j < dim; ++j) v[k * dim + j] /= norm;
  }
}

Tensor build_views(const Tensor& embeddings, std::span<const std::size_t> centers,
                   std::span<const std::vector<std::size_t>> neighbors) {
  if (centers.size() != neighbors.size()) throw DimensionError("build_views: centers and neighbour lists differ");
  const std::size_t b = centers.size();
  std::size_t width = 1;
  for (const auto& n : neighbors) width = std::max(width, n.size());
  std::vector<std::size_t> nb(b * width), ctr(b * width), group(b * width);
  std::vector<double> mask(b * width, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& list = neighbors[i];
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t k = i * width + j;
      ctr[k] = centers[i];
      group[k] = i;
      if (list.empty()) {
        nb[k] = centers[i];
        if (j > 0) mask[k] = -1e30;
      } else if (j < list.size()) {
        nb[k] = list[j];
      } else {
        nb[k] = centers[i];
        mask[k] = -1e30;
      }
    }
  }
  const Tensor e_nb = gather_rows(embeddings, nb);
  const Tensor scores = reshape(row_dot(e_nb, gather_rows(embeddings, ctr)), {b, width});
  const Tensor alpha = softmax_rows(add(scores, Tensor::from_data({b, width}, std::move(mask))));
  const Tensor weighted = mul(e_nb, reshape(alpha, {b * width, 1}));
  return scatter_add_rows(weighted, group, b);
}

namespace {

// Pairwise summation: exact for power-of-two counts of equal values.
double pairwise_sum(const double* v, std::size_t n, std::size_t stride) {
  if (n == 1) return v[0];
  if (n == 0) return 0.0;
  const std::size_t half = n / 2;
  return pairwise_sum(v, half, stride) + pairwise_sum(v + half * stride, n - half, stride);
}

}  // namespace

std::vector<double> sinkhorn_plan(std::span<const double> scores, std::size_t rows, std::size_t cols, double eps,
                                  std::size_t iters) {
  if (scores.size() != rows * cols || rows == 0 || cols == 0) throw DimensionError("sinkhorn: bad score shape");
  double hi = -INFINITY;
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericDomainError("sinkhorn: non-finite score");
    hi = std::max(hi, s);
  }
  std::vector<double> p(scores.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp((scores[i] - hi) / eps);
  const double total = pairwise_sum(p.data(), p.size(), 1);
  for (auto& x : p) x /= total;
  const double col_target = 1.0 / static_cast<double>(cols);
  const double row_target = 1.0 / static_cast<double>(rows);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t k = 0; k < cols; ++k) {
      const double s = pairwise_sum(p.data() + k, rows, cols);
      if (s <= 0.0) continue;
      for (std::size_t b = 0; b < rows; ++b) p[b * cols + k] = p[b * cols + k] / s * col_target;
    }
    for (std::size_t b = 0; b < rows; ++b) {
      const double s = pairwise_sum(p.data() + b * cols, cols, 1);
      if (s <= 0.0) continue;
      for (std::size_t k = 0; k < cols; ++k) p[b * cols + k] = p[b * cols + k] / s * row_target;
    }
  }
  return p;
}

Tensor sinkhorn_codes(const Tensor& scores, double eps, std::size_t iters) {
  const std::size_t rows = scores.rows(), cols = scores.cols();
  std::vector<double> q = sinkhorn_plan(scores.data(), rows, cols, eps, iters);
  for (std::size_t b = 0; b < rows; ++b) {
    const double s = pairwise_sum(q.data() + b * cols, cols, 1);
    if (s <= 0.0) throw NumericDomainError("sinkhorn: a row of the transport plan vanished");
    for (std::size_t k = 0; k < cols; ++k) q[b * cols + k] /= s;
  }
  return Tensor::from_data({rows, cols}, std::move(q));
}

Tensor swapped_prediction(const Tensor& z, const Tensor& codes, const Tensor& prototypes, double tau) {
  const Tensor log_p = log_softmax_rows(scale(matmul(z, transpose(prototypes)), 1.0 / tau));
  return scale(sum(mul(codes, log_p)), -1.0 / static_cast<double>(z.rows()));
}

Tensor user_user_loss(const Tensor& view_s, const Tensor& view_t, const AlignParams& params, const AlignConfig& cfg) {
  if (view_s.shape() != view_t.shape()) throw DimensionError("user_user_loss: view shapes differ");
  if (view_s.rows() < 2) {
    log(LogLevel::kDebug, "user-user alignment skipped: fewer than 2 aligned users in batch");
    return Tensor::scalar(0.0);
  }
  const Tensor z_s = row_l2_normalize(params.extractor[0].forward(view_s));
  const Tensor z_t = row_l2_normalize(params.extractor[1].forward(view_t));
  Tensor q_s, q_t;
  {
    NoGradGuard no_grad;
    q_s = sinkhorn_codes(matmul(z_s.detach(), transpose(params.prototypes.detach())), cfg.sinkhorn_eps,
                         cfg.sinkhorn_iters);
    q_t = sinkhorn_codes(matmul(z_t.detach(), transpose(params.prototypes.detach())), cfg.sinkhorn_eps,
                         cfg.sinkhorn_iters);
  }
  return scale(add(swapped_prediction(z_t, q_s, params.prototypes, cfg.tau),
                   swapped_prediction(z_s, q_t, params.prototypes, cfg.tau)),
               0.5);
}

Tensor grad_vector(const Tensor& loss, std::span<const Tensor> wrt) {
  const auto grads = grad(loss, wrt, true);
  return flatten(grads);
}

Tensor user_item_loss(const Tensor& g_s, const Tensor& g_t) {
  if (g_s.size() != g_t.size()) {
    throw ContractError("user_item_loss: gradient lengths differ (" + std::to_string(g_s.size()) + " vs " +
                        std::to_string(g_t.size()) + ")");
  }
  const Tensor a = reshape(g_s, {1, g_s.size()});
  const Tensor b = reshape(g_t, {1, g_t.size()});
  const Tensor ss = sum(square(a));
  const Tensor tt = sum(square(b));
  const bool zero_s = ss.item() == 0.0, zero_t = tt.item() == 0.0;
  if (zero_s && zero_t) {
    log(LogLevel::kDebug, "user-item alignment: both gradients are zero");
    return Tensor::scalar(0.0);
  }
  if (zero_s || zero_t) return Tensor::scalar(1.0);
  return add_scalar(neg(div(sum(mul(a, b)), sqrt(mul(ss, tt)))), 1.0);
}

}  // namespace coast
