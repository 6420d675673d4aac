#include "ende/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "ende/error.hpp"

namespace ende {

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ContractError("cosine of a zero vector");
  return a.dot(b) / (na * nb);
}

namespace {

// Adds upstream * d cos(a, b) / da and / db.
void add_cosine_gradient(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double upstream,
                         Eigen::VectorXd& grad_a, Eigen::VectorXd& grad_b) {
  const double na = a.norm();
  const double nb = b.norm();
  const double c = a.dot(b) / (na * nb);
  grad_a += upstream * (b / (na * nb) - c * a / (na * na));
  grad_b += upstream * (a / (na * nb) - c * b / (nb * nb));
}

}  // namespace

ContrastiveResult info_nce(const std::vector<Eigen::VectorXd>& vectors,
                           const std::vector<ContrastivePair>& pairs, double tau) {
  if (pairs.empty()) throw ContractError("no trainable pairs");
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  ContrastiveResult result;
  result.gradients.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.norm() == 0.0) throw ContractError("zero vector in contrastive loss");
    result.gradients.push_back(Eigen::VectorXd::Zero(v.size()));
  }
  const double weight = 1.0 / static_cast<double>(pairs.size());
  std::vector<double> logits;
  for (const auto& pair : pairs) {
    const auto& a = vectors.at(static_cast<std::size_t>(pair.anchor));
    logits.clear();
    logits.push_back(cosine(a, vectors.at(static_cast<std::size_t>(pair.positive))) / tau);
    for (int n : pair.negatives) logits.push_back(cosine(a, vectors.at(static_cast<std::size_t>(n))) / tau);
    // log-sum-exp with max shift
    const double top = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - top);
    const double log_z = top + std::log(sum);
    result.loss += weight * (log_z - logits[0]);

    // d/d logit_k = softmax_k - [k == 0]
    auto& ga = result.gradients[static_cast<std::size_t>(pair.anchor)];
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double p = std::exp(logits[k] - log_z);
      const double d_logit = weight * (p - (k == 0 ? 1.0 : 0.0));
      if (d_logit == 0.0) continue;
      const int other = k == 0 ? pair.positive : pair.negatives[k - 1];
      add_cosine_gradient(a, vectors[static_cast<std::size_t>(other)], d_logit / tau, ga,
                          result.gradients[static_cast<std::size_t>(other)]);
    }
  }
  // Rounding can leave a tiny negative value when every term is ~0.
  result.loss = std::max(result.loss, 0.0);
  return result;
}

}  // namespace ende
