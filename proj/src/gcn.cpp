#include "coast/gcn.hpp"

#include <array>

#include "coast/errors.hpp"

namespace coast {

GcnParams GcnParams::init(const GcnConfig& cfg, std::mt19937_64& rng) {
  if (cfg.layers > 4) throw ConfigError("gcn supports at most 4 layers");
  if (cfg.dim == 0) throw ConfigError("embedding dim must be positive");
  GcnParams p;
  for (std::size_t l = 0; l < cfg.layers; ++l)
    p.layers.push_back(
        {kaiming_normal(cfg.dim, cfg.dim, rng), kaiming_normal(cfg.dim, cfg.dim, rng), kaiming_normal(cfg.dim, cfg.dim, rng)});
  return p;
}

void GcnParams::register_into(ParamSet& params) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "gcn." + std::to_string(l) + ".";
    params.add(prefix + "w1", layers[l].w1);
    params.add(prefix + "w2", layers[l].w2);
    params.add(prefix + "w3", layers[l].w3);
  }
}

namespace {

// x (row) times W (D_in x D_out).
std::vector<double> row_times(std::span<const double> x, const Tensor& w) {
  const auto wd = w.data();
  const std::size_t out = w.cols();
  std::vector<double> y(out, 0.0);
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t j = 0; j < out; ++j) y[j] += x[k] * wd[k * out + j];
  return y;
}

}  // namespace

std::vector<double> message(const CrossDomainGraph& g, std::size_t receiver, std::size_t sender,
                            std::span<const double> e_receiver, std::span<const double> e_sender,
                            const GcnLayer& layer, const GcnConfig& cfg) {
  if (!g.has_edge(receiver, sender)) throw ContractError("message: nodes are not connected");
  if (e_receiver.size() != layer.w1.rows() || e_sender.size() != layer.w1.rows()) {
    throw DimensionError("message: embedding length does not match the layer");
  }
  const std::size_t item = g.is_item(sender) ? sender : receiver;
  const Domain d = g.item_domain(item);
  std::vector<double> m = row_times(cfg.literal_messages ? e_receiver : e_sender, layer.w1);
  if (cfg.interaction_terms) {
    std::vector<double> prod(e_sender.size());
    for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = e_sender[k] * e_receiver[k];
    const auto t = row_times(prod, d == Domain::kSource ? layer.w2 : layer.w3);
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += t[j];
  }
  const double w = g.edge_weight(receiver, sender);
  for (auto& x : m) x *= w;
  return m;
}

Tensor propagate_layer(const Tensor& e, const CrossDomainGraph& g, const GcnLayer& layer, const GcnConfig& cfg) {
  if (e.rows() != g.node_count) throw DimensionError("propagate_layer: embedding rows do not match the graph");
  Tensor neighbours;
  if (cfg.literal_messages) {
    std::vector<double> row_sum(g.node_count, 0.0);
    const auto& lap = *g.laplacian;
    for (std::size_t r = 0; r < lap.rows(); ++r)
      for (std::size_t k = lap.row_ptr()[r]; k < lap.row_ptr()[r + 1]; ++k) row_sum[r] += lap.values()[k];
    neighbours = mul(e, Tensor::from_data({g.node_count, 1}, std::move(row_sum)));
  } else {
    neighbours = sparse_matmul(g.laplacian, e);
  }
  Tensor out = matmul(add(neighbours, e), layer.w1);
  if (cfg.interaction_terms) {
    out = add(out, matmul(mul(sparse_matmul(g.type_laplacian[0], e), e), layer.w2));
    out = add(out, matmul(mul(sparse_matmul(g.type_laplacian[1], e), e), layer.w3));
  }
  return leaky_relu(out, cfg.leaky_alpha);
}

Tensor propagate(const Tensor& e0, const CrossDomainGraph& g, const GcnParams& params, const GcnConfig& cfg) {
  std::vector<Tensor> outs{e0};
  for (const auto& layer : params.layers) outs.push_back(propagate_layer(outs.back(), g, layer, cfg));
  if (outs.size() == 1) return e0;
  return concat_cols(outs);
}

}  // namespace coast
