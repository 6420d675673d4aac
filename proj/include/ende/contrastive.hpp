#pragma once

#include <vector>

#include <Eigen/Dense>

namespace ende {

// One InfoNCE term: an anchor, one positive, and the negatives it competes
// against. Indices refer to a caller-owned vector list.
struct ContrastivePair {
  int anchor = 0;
  int positive = 0;
  std::vector<int> negatives;
};

struct ContrastiveResult {
  double loss = 0.0;
  // d loss / d vectors[k], same length as the input list.
  std::vector<Eigen::VectorXd> gradients;
};

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Mean over pairs of
//   -log( exp(cos(a,p)/tau) / (exp(cos(a,p)/tau) + sum_n exp(cos(a,n)/tau)) )
// which is >= 0 and exactly 0 when a pair has no negatives.
// Throws ContractError on an empty pair list or a zero vector.
ContrastiveResult info_nce(const std::vector<Eigen::VectorXd>& vectors,
                           const std::vector<ContrastivePair>& pairs, double tau);

}  // namespace ende
