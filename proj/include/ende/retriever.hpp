#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ende/contrastive.hpp"
#include "ende/corpus.hpp"
#include "ende/encoders.hpp"

namespace ende {

// ------------------------------------------------------------ pair sets

struct PairSetConfig {
  double threshold = 0.5;
  int negatives_per_pair = 4;
  // Cap on |Q_i| (seeded subsample); 0 keeps every positive.
  int max_positives = 8;
  std::uint64_t seed = 0;
};

// Positives and negatives per anchor, as indices into the pool.
// positives[i] is Q_i; negatives[i][j] is N(i, positives[i][j]).
struct PairSets {
  std::vector<std::vector<int>> positives;
  std::vector<std::vector<std::vector<int>>> negatives;
  std::size_t skipped_anchors = 0;  // anchors with empty Q_i

  std::size_t size() const { return positives.size(); }
  std::size_t pair_count() const;
  // Flattened InfoNCE terms for the given anchors.
  std::vector<ContrastivePair> pairs_for(const std::vector<int>& anchors) const;
};

// j is a positive of i iff cos(x_i, x_j) > threshold (strict) and j != i.
// Negatives of (i, j) are a seeded uniform sample from {* != i :
// cos(x_i, x_*) <= threshold}.
PairSets build_pair_sets(const std::vector<Vector>& semantic_vectors, const PairSetConfig& cfg);
PairSets build_pair_sets(const std::vector<AnnotatedExample>& pool, const EncoderStack& stack,
                         const PairSetConfig& cfg);

// ---------------------------------------------------------------- losses

struct LossResult {
  double value = 0.0;
  std::size_t pairs = 0;
  StackGradients gradients;
};

// Anchors are pool indices; each must have a non-empty Q_i.
struct TrainingBatch {
  std::vector<int> anchors;
  double tau = 0.1;
};

LossResult loss_semantic(const std::vector<AnnotatedExample>& pool, const PairSets& pairs,
                         const TrainingBatch& batch, const EncoderStack& stack);

struct BoundaryLoss {
  LossResult pos;
  LossResult con;

  double value() const { return pos.value + con.value; }
};

// InfoNCE over POS vectors plus InfoNCE over tree vectors, same pairs as the
// semantic loss. Throws DataError naming an example without annotation.
BoundaryLoss loss_boundary(const std::vector<AnnotatedExample>& pool, const PairSets& pairs,
                           const TrainingBatch& batch, const EncoderStack& stack);

// An entity mention: pool index plus span.
struct EntityRef {
  int example = 0;
  EntitySpan span;
};

struct LabelPairConfig {
  int negatives_per_pair = 4;
  int max_positives = 8;
  std::uint64_t seed = 0;
};

// Entities of the given pool examples, in pool then span order.
std::vector<EntityRef> collect_entities(const std::vector<AnnotatedExample>& pool,
                                        const std::vector<int>& examples);

// Same-label pairs are positives. Different-label entities that share a token
// with the anchor are always negatives; further different-label negatives are
// sampled up to negatives_per_pair in total.
std::vector<ContrastivePair> build_label_pairs(const std::vector<EntityRef>& entities,
                                               const LabelPairConfig& cfg);

// Entity representation: mean of the entity's projected token embeddings.
// Throws DataError("label loss undefined for batch") without a same-label pair.
LossResult loss_label(const std::vector<AnnotatedExample>& pool, const std::vector<EntityRef>& entities,
                      const std::vector<ContrastivePair>& pairs, double tau, const EncoderStack& stack);

// -------------------------------------------------------------- training

struct TrainConfig {
  EncoderConfig encoder;
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 0.1;
  double tau = 0.1;
  double lambda_semantic = 1.0;
  double lambda_boundary = 1.0;
  double lambda_label = 1.0;
  double threshold = 0.5;
  int negatives_per_pair = 4;
  int max_positives = 8;
  std::uint64_t seed = 0;
};

struct LossReport {
  int epoch = 0;
  double semantic = 0.0;
  double boundary_pos = 0.0;
  double boundary_con = 0.0;
  double label = 0.0;
  double total = 0.0;  // lambda-weighted sum of the components
  int steps = 0;
  std::size_t skipped_anchors = 0;

  double boundary() const { return boundary_pos + boundary_con; }
};

using EpochCallback = std::function<void(const LossReport&)>;

// Plain SGD on lambda_sem * L_sem + lambda_bdy * L_bdy + lambda_lab * L_lab.
// Pair sets are rebuilt from the current semantic encoder at the start of
// every epoch. Deterministic given cfg.seed. Throws TrainingDiverged if the
// loss becomes non-finite.
std::vector<LossReport> train(EncoderStack& stack, const std::vector<AnnotatedExample>& pool,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Creates the stack from the pool's vocabularies and trains it.
struct TrainResult {
  EncoderStack stack;
  std::vector<LossReport> trace;
};
TrainResult train(const std::vector<AnnotatedExample>& pool, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// ------------------------------------------------------------- retrieval

struct ScoringWeights {
  double semantic = 0.5;
  double pos = 0.25;
  double tree = 0.25;

  // Non-negative and summing to 1 (within 1e-9), else ConfigError.
  void validate() const;
};

struct IndexEntry {
  std::string id;
  Vector semantic;
  Vector pos;
  Vector tree;
};

struct ScoredId {
  std::string id;
  double score = 0.0;
};

// Unit-normalized vector triples plus the weights they are scored with. Read
// only after construction; concurrent retrieve calls are safe.
class RetrievalIndex {
 public:
  RetrievalIndex(ScoringWeights weights, int dim, std::vector<IndexEntry> entries);

  // score = w_sem cos(sem) + w_pos cos(pos) + w_tree cos(tree), best first,
  // ties by ascending id. Query vectors need not be normalized; components
  // with zero weight may be empty.
  std::vector<ScoredId> retrieve(const IndexEntry& query, int m) const;

  std::size_t size() const { return entries_.size(); }
  int dim() const { return dim_; }
  const ScoringWeights& weights() const { return weights_; }
  const std::vector<IndexEntry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static RetrievalIndex load(const std::filesystem::path& path);

 private:
  ScoringWeights weights_;
  int dim_;
  std::vector<IndexEntry> entries_;
};

RetrievalIndex build_index(const std::vector<AnnotatedExample>& pool, const EncoderStack& stack,
                           const ScoringWeights& weights);

// Query vectors for a test sentence. Boundary components are left empty when
// `boundary` is null.
IndexEntry encode_query(const EncoderStack& stack, const Sentence& sentence,
                        const BoundaryAnnotation* boundary);

std::vector<ScoredId> retrieve(const RetrievalIndex& index, const EncoderStack& stack,
                               const Sentence& sentence, const BoundaryAnnotation* boundary, int m);

}  // namespace ende
