#include "coast/towers.hpp"

#include <cmath>
#include <random>
#include <unordered_map>
#include <vector>

#include "coast/errors.hpp"

namespace coast {

Mlp Mlp::init(std::span<const std::size_t> widths, std::mt19937_64& rng) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least two widths");
  Mlp m;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    m.weights.push_back(kaiming_normal(widths[l], widths[l + 1], rng));
    // Fan-in uniform biases keep a layer of dead units from zeroing a row.
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> b(widths[l + 1]);
    for (auto& x : b) x = u(rng);
    m.biases.push_back(Tensor::from_data({1, widths[l + 1]}, std::move(b), true));
  }
  return m;
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = add(matmul(h, weights[l]), biases[l]);
    if (l + 1 < weights.size()) h = relu(h);
  }
  return h;
}

std::vector<Tensor> Mlp::tensors() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

std::vector<Tensor> Mlp::last_layer_tensors() const { return {weights.back(), biases.back()}; }

void Mlp::register_into(ParamSet& params, const std::string& prefix) const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    params.add(prefix + "." + std::to_string(l) + ".w", weights[l]);
    params.add(prefix + "." + std::to_string(l) + ".b", biases[l]);
  }
}

std::vector<std::size_t> tower_widths(std::size_t d) { return {d, 2 * d, 4 * d, 8 * d, 4 * d, 2 * d, d}; }

TowerParams TowerParams::init(std::size_t d, std::mt19937_64& rng) {
  const auto widths = tower_widths(d);
  TowerParams t;
  for (Domain dom : kDomains) {
    t.user[index_of(dom)] = Mlp::init(widths, rng);
    t.item[index_of(dom)] = Mlp::init(widths, rng);
  }
  return t;
}

void TowerParams::register_into(ParamSet& params) const {
  for (Domain d : kDomains) {
    const std::string tag(domain_tag(d));
    user[index_of(d)].register_into(params, "tower.user_" + tag);
    item[index_of(d)].register_into(params, "tower.item_" + tag);
  }
}

Tensor tower_forward(const Mlp& tower, const Tensor& x) { return row_l2_normalize(tower.forward(x)); }

Tensor predict_scores(const Tensor& user_out, const Tensor& item_out) {
  return clamp(scale(add_scalar(row_dot(user_out, item_out), 1.0), 0.5), kProbEps, 1.0 - kProbEps);
}

Tensor bce(const Tensor& y_hat, const Tensor& labels) {
  if (y_hat.shape() != labels.shape()) throw DimensionError("bce: prediction and label shapes differ");
  const Tensor pos = mul(log(y_hat), labels);
  const Tensor neg_part = mul(log(add_scalar(neg(y_hat), 1.0)), add_scalar(neg(labels), 1.0));
  return neg(mean(add(pos, neg_part)));
}

DomainBatch gather_domain_batch(const Tensor& propagated, const CrossDomainGraph& g, std::span<const Example> batch,
                                Domain d, const std::vector<bool>* keep) {
  DomainBatch b;
  b.domain = d;
  std::unordered_map<std::size_t, std::size_t> user_slot, item_slot;
  std::vector<std::size_t> pick_a, pick_b, items;
  std::vector<double> labels;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Example& e = batch[k];
    if (e.domain != d || (keep && !(*keep)[e.user])) continue;
    auto [uit, new_user] = user_slot.try_emplace(e.user, pick_a.size());
    if (new_user) {
      const auto [a, bn] = g.prediction_nodes(d, e.user);
      pick_a.push_back(a);
      pick_b.push_back(bn);
    }
    const std::size_t node = g.item_node(d, e.item);
    auto [iit, new_item] = item_slot.try_emplace(node, items.size());
    if (new_item) items.push_back(node);
    b.example_index.push_back(k);
    b.user_row.push_back(uit->second);
    b.item_row.push_back(iit->second);
    labels.push_back(e.label);
  }
  if (b.example_index.empty()) return b;
  const bool merged = pick_a != pick_b;
  b.user_emb = merged ? maximum(gather_rows(propagated, pick_a), gather_rows(propagated, pick_b))
                      : gather_rows(propagated, pick_a);
  b.item_emb = gather_rows(propagated, items);
  const std::size_t n = labels.size();
  b.labels = Tensor::from_data({n, 1}, std::move(labels));
  return b;
}

DomainScores score_domain(const DomainBatch& b, const TowerParams& towers) {
  if (b.example_index.empty()) throw ContractError("score_domain: empty batch");
  const Tensor zu = tower_forward(towers.user[index_of(b.domain)], b.user_emb);
  const Tensor zv = tower_forward(towers.item[index_of(b.domain)], b.item_emb);
  DomainScores s;
  s.y_hat = predict_scores(gather_rows(zu, b.user_row), gather_rows(zv, b.item_row));
  s.bce_loss = bce(s.y_hat, b.labels);
  return s;
}

SupervisedLoss supervised_loss(const Tensor& propagated, const CrossDomainGraph& g, std::span<const Example> batch,
                               const TowerParams& towers, double lambda1) {
  if (batch.empty()) throw ContractError("supervised_loss: empty batch");
  SupervisedLoss out;
  std::vector<Tensor> reg_terms;
  for (Domain d : kDomains) {
    const DomainBatch b = gather_domain_batch(propagated, g, batch, d);
    if (b.example_index.empty()) continue;
    out.per_domain[index_of(d)] = score_domain(b, towers).bce_loss;
    const Tensor user_sq = gather_rows(sum_cols(square(b.user_emb)), b.user_row);
    const Tensor item_sq = gather_rows(sum_cols(square(b.item_emb)), b.item_row);
    reg_terms.push_back(sum(add(user_sq, item_sq)));
  }
  Tensor reg_sum = reg_terms.front();
  for (std::size_t i = 1; i < reg_terms.size(); ++i) reg_sum = add(reg_sum, reg_terms[i]);
  out.regularizer = scale(reg_sum, 1.0 / static_cast<double>(batch.size()));
  Tensor total = scale(out.regularizer, lambda1);
  for (const auto& l : out.per_domain)
    if (l.defined()) total = add(total, l);
  out.total = total;
  return out;
}

}  // namespace coast
