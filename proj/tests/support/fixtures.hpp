#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ende/corpus.hpp"
#include "ende/encoders.hpp"
#include "ende/retriever.hpp"

namespace ende::testing {

// Preterminal tree: (S (TAG tok) ...) with optional grouping, see make_tree.
enum class TreeShape { kFlat, kRightBranching, kLeftBranching };

BoundaryAnnotation make_boundary(const std::vector<std::string>& tokens, const std::vector<std::string>& pos,
                                 TreeShape shape);

AnnotatedExample make_example(const std::string& id, std::vector<std::string> tokens,
                              std::vector<EntitySpan> spans, std::vector<std::string> pos,
                              TreeShape shape = TreeShape::kFlat);

// 3 clusters x `per_cluster` sentences. Clusters draw tokens, POS tags, tree
// shapes and entity labels from disjoint distributions. cluster_of[i] gives
// the cluster.
struct ClusterCorpus {
  Dataset dataset;
  std::vector<int> cluster_of;
};
ClusterCorpus make_cluster_corpus(int per_cluster, std::uint64_t seed);

// 20 annotated sentences with nested spans over PER / ORG / GPE. Tokens are
// distinct within each sentence.
Dataset make_toy_corpus();
// Held-out sentences in the same style.
Dataset make_toy_test_corpus();

// Random pool with small vocabularies, so exact duplicates and ties occur.
Dataset make_random_pool(int n, std::uint64_t seed);

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_dataset_file(const std::filesystem::path& path, const Dataset& dataset);
std::string read_file(const std::filesystem::path& path);

// Central finite differences of `loss` against every parameter element of
// `stack`, compared with `analytic`. Returns the largest per-element relative
// error |a - n| / max(|a|, |n|, floor).
struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};
GradCheck check_gradients(EncoderStack& stack, StackGradients& analytic,
                          const std::function<double()>& loss, double step = 1e-5, double floor = 1e-6);

// Three one-token examples: "p" and "q" identical, "n" different. Every
// output map is set so that p and q encode to e1 and n to e2 in all three
// spaces (dim 2), and entity spans of p, q (PER) and n (ORG) likewise.
struct OrthogonalSetup {
  std::vector<AnnotatedExample> pool;
  EncoderStack stack;
  PairSets pairs;  // anchor 0: positive 1, negative 2
};
OrthogonalSetup make_orthogonal_setup();

// -log(e^{1/tau} / (e^{1/tau} + n e^{0})), evaluated directly.
double unit_pair_loss(double tau, int orthogonal_negatives);

enum class LossKind { kSemantic, kBoundaryPos, kBoundaryCon, kLabel };
const char* loss_name(LossKind kind);

// Random small instance (d <= 8, <= 5 tokens, <= 4 negatives) drawn from
// `seed`; analytic loss gradients against central differences.
GradCheck loss_gradient_check(LossKind kind, std::uint64_t seed);

// Linear scan: normalize every vector, score all entries, full sort by
// (score desc, id asc).
std::vector<ScoredId> brute_force_ranking(const std::vector<AnnotatedExample>& pool, const EncoderStack& stack,
                                          const ScoringWeights& weights, const AnnotatedExample& query, int m);

}  // namespace ende::testing
