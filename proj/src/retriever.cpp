#include "ende/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "ende/error.hpp"
#include "ende/rng.hpp"
#include "ende/serialize.hpp"

namespace ende {

// ------------------------------------------------------------ pair sets

std::size_t PairSets::pair_count() const {
  std::size_t n = 0;
  for (const auto& q : positives) n += q.size();
  return n;
}

std::vector<ContrastivePair> PairSets::pairs_for(const std::vector<int>& anchors) const {
  std::vector<ContrastivePair> out;
  for (int i : anchors) {
    const auto& q = positives.at(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < q.size(); ++j) {
      out.push_back(ContrastivePair{i, q[j], negatives[static_cast<std::size_t>(i)][j]});
    }
  }
  return out;
}

PairSets build_pair_sets(const std::vector<Vector>& vectors, const PairSetConfig& cfg) {
  const int n = static_cast<int>(vectors.size());
  PairSets sets;
  sets.positives.resize(static_cast<std::size_t>(n));
  sets.negatives.resize(static_cast<std::size_t>(n));
  Rng rng(cfg.seed);
  for (int i = 0; i < n; ++i) {
    std::vector<int> positive;
    std::vector<int> negative;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (cosine(vectors[i], vectors[j]) > cfg.threshold) {
        positive.push_back(j);
      } else {
        negative.push_back(j);
      }
    }
    if (positive.empty()) {
      ++sets.skipped_anchors;
      continue;
    }
    if (cfg.max_positives > 0) {
      positive = rng.sample(std::move(positive), static_cast<std::size_t>(cfg.max_positives));
      std::sort(positive.begin(), positive.end());
    }
    for (std::size_t j = 0; j < positive.size(); ++j) {
      auto drawn = rng.sample(negative, static_cast<std::size_t>(std::max(cfg.negatives_per_pair, 0)));
      sets.negatives[i].push_back(std::move(drawn));
    }
    sets.positives[i] = std::move(positive);
  }
  return sets;
}

PairSets build_pair_sets(const std::vector<AnnotatedExample>& pool, const EncoderStack& stack,
                         const PairSetConfig& cfg) {
  std::vector<Vector> vectors;
  vectors.reserve(pool.size());
  for (const auto& ex : pool) vectors.push_back(stack.encode_semantic(ex.sentence));
  return build_pair_sets(vectors, cfg);
}

// ---------------------------------------------------------------- losses

namespace {

// Maps pool indices used by a set of pairs onto dense local indices.
struct LocalPairs {
  std::vector<int> members;  // local -> pool index
  std::vector<ContrastivePair> pairs;
};

LocalPairs localize(const std::vector<ContrastivePair>& pairs) {
  LocalPairs out;
  std::map<int, int> local;
  auto map = [&](int pool_index) {
    auto [it, inserted] = local.emplace(pool_index, static_cast<int>(out.members.size()));
    if (inserted) out.members.push_back(pool_index);
    return it->second;
  };
  for (const auto& p : pairs) {
    ContrastivePair lp;
    lp.anchor = map(p.anchor);
    lp.positive = map(p.positive);
    for (int n : p.negatives) lp.negatives.push_back(map(n));
    out.pairs.push_back(std::move(lp));
  }
  return out;
}

std::vector<ContrastivePair> batch_pairs(const PairSets& pairs, const TrainingBatch& batch) {
  for (int a : batch.anchors) {
    if (a < 0 || static_cast<std::size_t>(a) >= pairs.size()) {
      throw ContractError("batch anchor " + std::to_string(a) + " is outside the pool");
    }
  }
  auto out = pairs.pairs_for(batch.anchors);
  if (out.empty()) throw ContractError("no trainable pairs");
  return out;
}

const BoundaryAnnotation& require_boundary(const AnnotatedExample& ex) {
  if (!ex.boundary) throw DataError("example " + ex.id() + " has no boundary annotation");
  return *ex.boundary;
}

template <typename Trace, typename Encode>
LossResult contrastive_over(const LocalPairs& local, double tau, const EncoderStack& stack, Encode encode) {
  std::vector<Trace> traces(local.members.size());
  std::vector<Vector> vectors;
  vectors.reserve(local.members.size());
  for (std::size_t k = 0; k < local.members.size(); ++k) {
    vectors.push_back(encode(local.members[k], traces[k]));
  }
  const auto nce = info_nce(vectors, local.pairs, tau);
  LossResult result;
  result.value = nce.loss;
  result.pairs = local.pairs.size();
  result.gradients = stack.zero_gradients();
  for (std::size_t k = 0; k < traces.size(); ++k) {
    stack.backward(traces[k], nce.gradients[k], result.gradients);
  }
  return result;
}

}  // namespace

LossResult loss_semantic(const std::vector<AnnotatedExample>& pool, const PairSets& pairs,
                         const TrainingBatch& batch, const EncoderStack& stack) {
  const auto local = localize(batch_pairs(pairs, batch));
  return contrastive_over<SemanticTrace>(local, batch.tau, stack, [&](int i, SemanticTrace& t) {
    return stack.encode_semantic(pool.at(static_cast<std::size_t>(i)).sentence, &t);
  });
}

BoundaryLoss loss_boundary(const std::vector<AnnotatedExample>& pool, const PairSets& pairs,
                           const TrainingBatch& batch, const EncoderStack& stack) {
  const auto local = localize(batch_pairs(pairs, batch));
  for (int i : local.members) require_boundary(pool.at(static_cast<std::size_t>(i)));
  BoundaryLoss out;
  out.pos = contrastive_over<RecurrentTrace>(local, batch.tau, stack, [&](int i, RecurrentTrace& t) {
    return stack.encode_pos(pool[static_cast<std::size_t>(i)].boundary->pos, &t);
  });
  out.con = contrastive_over<GraphTrace>(local, batch.tau, stack, [&](int i, GraphTrace& t) {
    return stack.encode_tree(*pool[static_cast<std::size_t>(i)].boundary, &t);
  });
  return out;
}

std::vector<EntityRef> collect_entities(const std::vector<AnnotatedExample>& pool,
                                        const std::vector<int>& examples) {
  std::vector<int> sorted = examples;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<EntityRef> out;
  for (int i : sorted) {
    for (const auto& span : pool.at(static_cast<std::size_t>(i)).entities) out.push_back({i, span});
  }
  return out;
}

std::vector<ContrastivePair> build_label_pairs(const std::vector<EntityRef>& entities,
                                               const LabelPairConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<ContrastivePair> out;
  const int n = static_cast<int>(entities.size());
  for (int i = 0; i < n; ++i) {
    const auto& a = entities[i];
    std::vector<int> positives;
    std::vector<int> forced;
    std::vector<int> others;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto& b = entities[j];
      if (b.span.label == a.span.label) {
        positives.push_back(j);
      } else if (b.example == a.example && b.span.overlaps(a.span)) {
        forced.push_back(j);
      } else {
        others.push_back(j);
      }
    }
    if (positives.empty()) continue;
    if (cfg.max_positives > 0) {
      positives = rng.sample(std::move(positives), static_cast<std::size_t>(cfg.max_positives));
      std::sort(positives.begin(), positives.end());
    }
    const std::size_t budget = forced.size() >= static_cast<std::size_t>(std::max(cfg.negatives_per_pair, 0))
                                   ? 0
                                   : static_cast<std::size_t>(cfg.negatives_per_pair) - forced.size();
    for (int p : positives) {
      ContrastivePair pair{i, p, forced};
      for (int s : rng.sample(others, budget)) pair.negatives.push_back(s);
      out.push_back(std::move(pair));
    }
  }
  return out;
}

LossResult loss_label(const std::vector<AnnotatedExample>& pool, const std::vector<EntityRef>& entities,
                      const std::vector<ContrastivePair>& pairs, double tau, const EncoderStack& stack) {
  if (pairs.empty()) throw DataError("label loss undefined for batch");
  for (const auto& p : pairs) {
    if (entities.at(static_cast<std::size_t>(p.anchor)).span.label !=
        entities.at(static_cast<std::size_t>(p.positive)).span.label) {
      throw ContractError("label pair joins different labels");
    }
  }
  const auto local = localize(pairs);
  return contrastive_over<SemanticTrace>(local, tau, stack, [&](int e, SemanticTrace& t) {
    const auto& ref = entities[static_cast<std::size_t>(e)];
    const auto& tokens = pool.at(static_cast<std::size_t>(ref.example)).sentence.tokens;
    return stack.semantic.encode_tokens(tokens, ref.span.start, ref.span.end, &t);
  });
}

// -------------------------------------------------------------- training

namespace {

void accumulate(StackGradients& into, StackGradients& from, double weight) {
  auto dst = into.tensors();
  auto src = from.tensors();
  for (std::size_t k = 0; k < dst.size(); ++k) *dst[k].value += weight * *src[k].value;
}

}  // namespace

std::vector<LossReport> train(EncoderStack& stack, const std::vector<AnnotatedExample>& pool,
                              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (pool.empty()) throw DataError("training pool is empty");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
  for (const auto& ex : pool) require_boundary(ex);

  const int n = static_cast<int>(pool.size());
  std::vector<LossReport> trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
    PairSetConfig pair_cfg{cfg.threshold, cfg.negatives_per_pair, cfg.max_positives, mix_seed(epoch_seed, 1)};
    const PairSets pairs = build_pair_sets(pool, stack, pair_cfg);

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(epoch_seed, 2));
    rng.shuffle(order);

    LossReport report;
    report.epoch = epoch;
    report.skipped_anchors = pairs.skipped_anchors;
    int semantic_steps = 0;
    int label_steps = 0;
    for (int begin = 0; begin < n; begin += cfg.batch_size) {
      const int step = begin / cfg.batch_size;
      std::vector<int> members(order.begin() + begin, order.begin() + std::min(n, begin + cfg.batch_size));
      TrainingBatch batch{{}, cfg.tau};
      for (int i : members) {
        if (!pairs.positives[static_cast<std::size_t>(i)].empty()) batch.anchors.push_back(i);
      }
      const auto entities = collect_entities(pool, members);
      const auto label_pairs = build_label_pairs(
          entities, {cfg.negatives_per_pair, cfg.max_positives, mix_seed(epoch_seed, 3 + static_cast<std::uint64_t>(step))});
      if (batch.anchors.empty() && label_pairs.empty()) continue;

      StackGradients grads = stack.zero_gradients();
      double total = 0.0;
      if (!batch.anchors.empty()) {
        auto sem = loss_semantic(pool, pairs, batch, stack);
        auto bdy = loss_boundary(pool, pairs, batch, stack);
        total += cfg.lambda_semantic * sem.value + cfg.lambda_boundary * bdy.value();
        accumulate(grads, sem.gradients, cfg.lambda_semantic);
        accumulate(grads, bdy.pos.gradients, cfg.lambda_boundary);
        accumulate(grads, bdy.con.gradients, cfg.lambda_boundary);
        report.semantic += sem.value;
        report.boundary_pos += bdy.pos.value;
        report.boundary_con += bdy.con.value;
        ++semantic_steps;
      }
      if (!label_pairs.empty()) {
        auto lab = loss_label(pool, entities, label_pairs, cfg.tau, stack);
        total += cfg.lambda_label * lab.value;
        accumulate(grads, lab.gradients, cfg.lambda_label);
        report.label += lab.value;
        ++label_steps;
      }
      if (!std::isfinite(total)) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": loss is not finite",
                               epoch, step);
      }
      auto params = stack.tensors();
      auto g = grads.tensors();
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (!g[k].value->allFinite()) {
          throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(step) + ": gradient of " + g[k].name + " is not finite",
                                 epoch, step);
        }
        *params[k].value -= cfg.learning_rate * *g[k].value;
      }
      ++report.steps;
    }
    if (semantic_steps > 0) {
      report.semantic /= semantic_steps;
      report.boundary_pos /= semantic_steps;
      report.boundary_con /= semantic_steps;
    }
    if (label_steps > 0) report.label /= label_steps;
    report.total = cfg.lambda_semantic * report.semantic + cfg.lambda_boundary * report.boundary() +
                   cfg.lambda_label * report.label;
    trace.push_back(report);
    if (on_epoch) on_epoch(report);
  }
  return trace;
}

TrainResult train(const std::vector<AnnotatedExample>& pool, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  TrainResult result;
  result.stack = EncoderStack::create(cfg.encoder, Vocabularies::build(pool), cfg.seed);
  result.trace = train(result.stack, pool, cfg, on_epoch);
  return result;
}

// ------------------------------------------------------------- retrieval

void ScoringWeights::validate() const {
  if (!(semantic >= 0.0) || !(pos >= 0.0) || !(tree >= 0.0)) {
    throw ConfigError("retrieval weights must be non-negative");
  }
  if (std::abs(semantic + pos + tree - 1.0) > 1e-9) throw ConfigError("retrieval weights must sum to 1");
}

namespace {

Vector normalized(const Vector& v, const std::string& what) {
  const double norm = v.norm();
  if (norm == 0.0 || !std::isfinite(norm)) throw DataError(what + " is a zero or non-finite vector");
  return v / norm;
}

double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) s += a(k) * b(k);
  return s;
}

}  // namespace

RetrievalIndex::RetrievalIndex(ScoringWeights weights, int dim, std::vector<IndexEntry> entries)
    : weights_(weights), dim_(dim), entries_(std::move(entries)) {
  weights_.validate();
  if (entries_.empty()) throw DataError("cannot build an index over an empty pool");
  for (const auto& e : entries_) {
    for (const Vector* v : {&e.semantic, &e.pos, &e.tree}) {
      if (v->size() != dim_) throw DataError("index entry " + e.id + " has the wrong dimension");
      if (std::abs(v->norm() - 1.0) > 1e-6) throw DataError("index entry " + e.id + " is not unit-normalized");
    }
  }
}

std::vector<ScoredId> RetrievalIndex::retrieve(const IndexEntry& query, int m) const {
  if (m < 1) throw ContractError("retrieve: m must be >= 1");
  if (static_cast<std::size_t>(m) > entries_.size()) {
    throw ContractError("retrieve: m = " + std::to_string(m) + " exceeds index size " +
                        std::to_string(entries_.size()));
  }
  struct Component {
    double weight;
    Vector query;
    Vector IndexEntry::*member;
  };
  std::vector<Component> parts;
  auto add = [&](double w, const Vector& q, Vector IndexEntry::*member, const char* name) {
    if (w == 0.0) return;
    if (q.size() != dim_) throw ContractError(std::string("retrieve: query lacks a ") + name + " vector");
    parts.push_back({w, normalized(q, std::string("query ") + name), member});
  };
  add(weights_.semantic, query.semantic, &IndexEntry::semantic, "semantic");
  add(weights_.pos, query.pos, &IndexEntry::pos, "POS");
  add(weights_.tree, query.tree, &IndexEntry::tree, "tree");

  std::vector<ScoredId> scored;
  scored.reserve(entries_.size());
  for (const auto& e : entries_) {
    double s = 0.0;
    for (const auto& part : parts) s += part.weight * dot(part.query, e.*(part.member));
    scored.push_back({e.id, s});
  }
  auto better = [](const ScoredId& a, const ScoredId& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  };
  std::partial_sort(scored.begin(), scored.begin() + m, scored.end(), better);
  scored.resize(static_cast<std::size_t>(m));
  return scored;
}

namespace {

constexpr const char* kIndexFormat = "ende-index";
constexpr int kIndexVersion = 1;

Json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

void RetrievalIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write index " + path.string());
  out << Json{{"format", kIndexFormat},
              {"version", kIndexVersion},
              {"dim", dim_},
              {"weights", {{"semantic", weights_.semantic}, {"pos", weights_.pos}, {"tree", weights_.tree}}},
              {"size", entries_.size()}}
             .dump()
      << '\n';
  for (const auto& e : entries_) {
    out << Json{{"id", e.id}, {"semantic", vec_json(e.semantic)}, {"pos", vec_json(e.pos)}, {"tree", vec_json(e.tree)}}
               .dump()
        << '\n';
  }
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open index " + path.string());
  std::string line;
  try {
    if (!std::getline(in, line)) throw DataError("index file is empty: " + path.string());
    const Json header = Json::parse(line);
    if (header.at("format") != kIndexFormat || header.at("version") != kIndexVersion) {
      throw DataError("not a version-1 ende index: " + path.string());
    }
    ScoringWeights w{header.at("weights").at("semantic"), header.at("weights").at("pos"),
                     header.at("weights").at("tree")};
    std::vector<IndexEntry> entries;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const Json j = Json::parse(line);
      entries.push_back({j.at("id"), json_vec(j.at("semantic")), json_vec(j.at("pos")), json_vec(j.at("tree"))});
    }
    return RetrievalIndex(w, header.at("dim"), std::move(entries));
  } catch (const Json::exception& e) {
    throw DataError("malformed index " + path.string() + ": " + e.what());
  }
}

IndexEntry encode_query(const EncoderStack& stack, const Sentence& sentence, const BoundaryAnnotation* boundary) {
  IndexEntry q;
  q.id = sentence.id;
  q.semantic = stack.encode_semantic(sentence);
  if (boundary != nullptr) {
    q.pos = stack.encode_pos(boundary->pos);
    q.tree = stack.encode_tree(*boundary);
  }
  return q;
}

RetrievalIndex build_index(const std::vector<AnnotatedExample>& pool, const EncoderStack& stack,
                           const ScoringWeights& weights) {
  if (pool.empty()) throw DataError("cannot build an index over an empty pool");
  std::vector<IndexEntry> entries;
  entries.reserve(pool.size());
  for (const auto& ex : pool) {
    const auto& boundary = require_boundary(ex);
    IndexEntry e = encode_query(stack, ex.sentence, &boundary);
    e.semantic = normalized(e.semantic, "semantic vector of example " + ex.id());
    e.pos = normalized(e.pos, "POS vector of example " + ex.id());
    e.tree = normalized(e.tree, "tree vector of example " + ex.id());
    entries.push_back(std::move(e));
  }
  return RetrievalIndex(weights, stack.dim(), std::move(entries));
}

std::vector<ScoredId> retrieve(const RetrievalIndex& index, const EncoderStack& stack, const Sentence& sentence,
                               const BoundaryAnnotation* boundary, int m) {
  return index.retrieve(encode_query(stack, sentence, boundary), m);
}

}  // namespace ende
