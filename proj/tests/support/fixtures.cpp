#include "fixtures.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ende/boundary.hpp"
#include "ende/rng.hpp"

namespace ende::testing {

namespace fs = std::filesystem;

namespace {

std::string preterminal(const std::string& tag, const std::string& token) {
  return "(" + tag + " " + escape_tree_token(token) + ")";
}

std::string right_branching(const std::vector<std::string>& tokens, const std::vector<std::string>& pos,
                            std::size_t i) {
  if (i + 1 == tokens.size()) return preterminal(pos[i], tokens[i]);
  return "(VP " + preterminal(pos[i], tokens[i]) + " " + right_branching(tokens, pos, i + 1) + ")";
}

std::string left_branching(const std::vector<std::string>& tokens, const std::vector<std::string>& pos,
                           std::size_t end) {
  if (end == 1) return preterminal(pos[0], tokens[0]);
  return "(FRAG " + left_branching(tokens, pos, end - 1) + " " + preterminal(pos[end - 1], tokens[end - 1]) + ")";
}

}  // namespace

BoundaryAnnotation make_boundary(const std::vector<std::string>& tokens, const std::vector<std::string>& pos,
                                 TreeShape shape) {
  std::string text;
  switch (shape) {
    case TreeShape::kFlat: {
      text = "(S";
      for (std::size_t i = 0; i < tokens.size(); ++i) text += " " + preterminal(pos[i], tokens[i]);
      text += ")";
      break;
    }
    case TreeShape::kRightBranching:
      text = "(S " + right_branching(tokens, pos, 0) + ")";
      break;
    case TreeShape::kLeftBranching:
      text = "(S " + left_branching(tokens, pos, tokens.size()) + ")";
      break;
  }
  return {pos, parse_bracketed_tree(text, tokens)};
}

AnnotatedExample make_example(const std::string& id, std::vector<std::string> tokens,
                              std::vector<EntitySpan> spans, std::vector<std::string> pos, TreeShape shape) {
  AnnotatedExample ex;
  ex.sentence = {id, std::move(tokens)};
  ex.entities = std::move(spans);
  ex.boundary = make_boundary(ex.sentence.tokens, pos, shape);
  validate_example(ex, nullptr);
  return ex;
}

ClusterCorpus make_cluster_corpus(int per_cluster, std::uint64_t seed) {
  const std::vector<std::vector<std::string>> vocab = {
      {"river", "stone", "water", "bank", "fish", "boat", "shore", "reed"},
      {"market", "price", "trade", "stock", "bond", "fund", "yield", "loan"},
      {"planet", "orbit", "star", "comet", "moon", "probe", "light", "dust"},
  };
  const std::vector<std::vector<std::string>> tags = {{"DT", "NN"}, {"JJ", "NNS"}, {"VB", "RB"}};
  const std::vector<TreeShape> shapes = {TreeShape::kFlat, TreeShape::kRightBranching, TreeShape::kLeftBranching};
  const std::vector<std::vector<std::string>> labels = {{"LOC", "FAC"}, {"ORG", "MONEY"}, {"EVENT", "MISC"}};

  Rng rng(seed);
  ClusterCorpus out;
  for (const auto& pair : labels) {
    for (const auto& l : pair) out.dataset.labels.add(l);
  }
  for (int c = 0; c < 3; ++c) {
    for (int s = 0; s < per_cluster; ++s) {
      const int len = 4 + static_cast<int>(rng.index(3));
      auto tokens = rng.sample(vocab[c], static_cast<std::size_t>(len));
      std::vector<std::string> pos;
      for (int t = 0; t < len; ++t) pos.push_back(tags[c][rng.index(2)]);
      std::vector<EntitySpan> spans = {{0, 2, labels[c][0]}, {1, 2, labels[c][1]}};
      const std::string id = "c" + std::to_string(c) + "-" + (s < 10 ? "0" : "") + std::to_string(s);
      out.dataset.examples.push_back(make_example(id, std::move(tokens), std::move(spans), std::move(pos), shapes[c]));
      out.cluster_of.push_back(c);
    }
  }
  return out;
}

namespace {

const std::vector<std::string> kFirst = {"Alice", "Bruno", "Chen",  "Dana",  "Emil",  "Farah", "Goran",
                                         "Hana",  "Ivan",  "Jonas", "Kiri",  "Lena",  "Mateo", "Nadia",
                                         "Omar",  "Priya", "Quinn", "Rosa",  "Sven",  "Tariq", "Uma",
                                         "Viktor", "Wen",  "Xena",  "Yusuf", "Zara"};
const std::vector<std::string> kLast = {"Abe",  "Bauer", "Costa", "Dahl", "Evans", "Fox",  "Grant",
                                        "Hale", "Ito",   "Jain",  "Kerr", "Lund",  "Moss", "Nolan",
                                        "Ortiz", "Park", "Quade", "Reyes", "Sato", "Toll", "Ueda",
                                        "Voss", "Weber", "Xu",   "Young", "Zhou"};
const std::vector<std::string> kCity = {"Austin", "Boston", "Cairo", "Dublin", "Essen",  "Fresno", "Geneva",
                                        "Hanoi",  "Izmir",  "Jaipur", "Kyoto", "Lima",   "Madrid", "Nairobi",
                                        "Oslo",   "Perth",  "Quito",  "Riga",  "Seoul",  "Tunis",  "Utrecht",
                                        "Vienna", "Warsaw", "Xiamen", "York",  "Zagreb"};
const std::vector<std::string> kCompany = {"Acme",   "Borex", "Cyntra", "Dynacorp", "Elcom",  "Fabrik",
                                           "Globex", "Hexa",  "Initech", "Juno",    "Kronos", "Lumen",
                                           "Monarch", "Nexus", "Orbis",  "Pinnacle", "Quantix", "Rexon",
                                           "Stark",  "Tyrell", "Umbra",  "Vertex",  "Wayne",  "Xylo",
                                           "Yotta",  "Zenith"};

AnnotatedExample toy_sentence(const std::string& id, int template_id, int i) {
  const auto& first = kFirst[static_cast<std::size_t>(i) % kFirst.size()];
  const auto& last = kLast[static_cast<std::size_t>(i) % kLast.size()];
  const auto& city = kCity[static_cast<std::size_t>(i) % kCity.size()];
  const auto& company = kCompany[static_cast<std::size_t>(i) % kCompany.size()];
  switch (template_id % 4) {
    case 0:
      return make_example(id, {first, last, "joined", city, "University", "yesterday"},
                          {{0, 2, "PER"}, {3, 4, "GPE"}, {3, 5, "ORG"}},
                          {"NNP", "NNP", "VBD", "NNP", "NNP", "NN"}, TreeShape::kRightBranching);
    case 1:
      return make_example(id, {"The", city, "mayor", first, "spoke"}, {{1, 2, "GPE"}, {1, 4, "PER"}},
                          {"DT", "NNP", "NN", "NNP", "VBD"}, TreeShape::kFlat);
    case 2:
      return make_example(id, {company, "Corp", "hired", first, last}, {{0, 2, "ORG"}, {3, 5, "PER"}},
                          {"NNP", "NNP", "VBD", "NNP", "NNP"}, TreeShape::kLeftBranching);
    default:
      return make_example(id, {"Officials", "in", city, "praised", company, "Bank"},
                          {{2, 3, "GPE"}, {4, 6, "ORG"}},
                          {"NNS", "IN", "NNP", "VBD", "NNP", "NNP"}, TreeShape::kRightBranching);
  }
}

}  // namespace

Dataset make_toy_corpus() {
  Dataset ds;
  ds.labels = LabelSet({"PER", "ORG", "GPE"});
  ds.explicit_labels = true;
  for (int i = 0; i < 20; ++i) {
    ds.examples.push_back(toy_sentence("train-" + std::string(i < 10 ? "0" : "") + std::to_string(i), i, i));
  }
  return ds;
}

Dataset make_toy_test_corpus() {
  Dataset ds;
  ds.labels = LabelSet({"PER", "ORG", "GPE"});
  ds.explicit_labels = true;
  for (int i = 0; i < 8; ++i) ds.examples.push_back(toy_sentence("test-" + std::to_string(i), i, 20 + i));
  return ds;
}

Dataset make_random_pool(int n, std::uint64_t seed) {
  const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  const std::vector<std::string> tags = {"NN", "VB", "DT", "JJ"};
  const std::vector<TreeShape> shapes = {TreeShape::kFlat, TreeShape::kRightBranching, TreeShape::kLeftBranching};
  Rng rng(seed);
  Dataset ds;
  ds.labels = LabelSet({"X", "Y"});
  for (int i = 0; i < n; ++i) {
    const int len = 2 + static_cast<int>(rng.index(3));
    std::vector<std::string> tokens;
    std::vector<std::string> pos;
    for (int t = 0; t < len; ++t) {
      tokens.push_back(words[rng.index(words.size())]);
      pos.push_back(tags[rng.index(tags.size())]);
    }
    char id[16];
    std::snprintf(id, sizeof id, "p%03d", i);
    ds.examples.push_back(make_example(id, std::move(tokens), {{0, 1, rng.index(2) == 0 ? "X" : "Y"}},
                                       std::move(pos), shapes[rng.index(shapes.size())]));
  }
  return ds;
}

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "ende-test-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_dataset_file(const fs::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  write_dataset(out, dataset);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GradCheck check_gradients(EncoderStack& stack, StackGradients& analytic, const std::function<double()>& loss,
                          double step, double floor) {
  GradCheck out;
  auto params = stack.tensors();
  auto grads = analytic.tensors();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k].value;
    const Matrix& g = *grads[k].value;
    for (Eigen::Index idx = 0; idx < p.size(); ++idx) {
      const double saved = p.data()[idx];
      p.data()[idx] = saved + step;
      const double up = loss();
      p.data()[idx] = saved - step;
      const double down = loss();
      p.data()[idx] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = g.data()[idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = params[k].name + "[" + std::to_string(idx) + "] analytic " + std::to_string(a) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace ende::testing

namespace ende::testing {

namespace {

// Output map M with M a = e1 and M b = e2.
Matrix separate(const Vector& a, const Vector& b) {
  Matrix features(2, 2);
  features.col(0) = a;
  features.col(1) = b;
  if (std::abs(features.determinant()) < 1e-8) throw std::runtime_error("degenerate features");
  return features.inverse();
}

}  // namespace

OrthogonalSetup make_orthogonal_setup() {
  OrthogonalSetup s;
  s.pool = {make_example("p", {"alpha"}, {{0, 1, "PER"}}, {"TA"}), make_example("q", {"alpha"}, {{0, 1, "PER"}}, {"TA"}),
            make_example("n", {"omega"}, {{0, 1, "ORG"}}, {"TB"})};
  // Distinct root labels for the negative tree.
  s.pool[2].boundary->tree = parse_bracketed_tree("(R (TB omega))", {"omega"});

  EncoderConfig cfg;
  cfg.dim = cfg.token_dim = cfg.pos_dim = cfg.hidden = cfg.node_dim = 2;
  s.stack = EncoderStack::create(cfg, Vocabularies::build(s.pool), 17);
  auto& st = s.stack;
  const Matrix eye = Matrix::Identity(2, 2);
  st.semantic.params.projection = eye;
  st.pos.params.output = eye;
  st.tree.params.output = eye;
  st.semantic.params.projection = separate(st.encode_semantic(s.pool[0].sentence), st.encode_semantic(s.pool[2].sentence));
  st.pos.params.output = separate(st.encode_pos(s.pool[0].boundary->pos), st.encode_pos(s.pool[2].boundary->pos));
  st.tree.params.output = separate(st.encode_tree(*s.pool[0].boundary), st.encode_tree(*s.pool[2].boundary));

  s.pairs.positives = {{1}, {0}, {}};
  s.pairs.negatives = {{{2}}, {{2}}, {}};
  s.pairs.skipped_anchors = 1;
  return s;
}

double unit_pair_loss(double tau, int orthogonal_negatives) {
  const double pos = std::exp(1.0 / tau);
  return -std::log(pos / (pos + orthogonal_negatives * std::exp(0.0)));
}

const char* loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::kSemantic:
      return "L_sem";
    case LossKind::kBoundaryPos:
      return "L_bdy_pos";
    case LossKind::kBoundaryCon:
      return "L_bdy_con";
    case LossKind::kLabel:
      return "L_lab";
  }
  return "?";
}

GradCheck loss_gradient_check(LossKind kind, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 77));
  const int n = 6;
  const Dataset ds = make_random_pool(n, seed);
  EncoderConfig cfg;
  cfg.dim = 2 + static_cast<int>(rng.index(7));
  cfg.token_dim = 3;
  cfg.pos_dim = 3;
  cfg.hidden = 3;
  cfg.node_dim = 3;
  EncoderStack stack = EncoderStack::create(cfg, Vocabularies::build(ds.examples), seed);
  const double tau = rng.uniform(0.3, 1.0);

  PairSets pairs;
  pairs.positives.resize(n);
  pairs.negatives.resize(n);
  std::vector<int> anchors = {0, 1, 2};
  for (int i : anchors) {
    std::vector<int> others;
    for (int j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    rng.shuffle(others);
    const int j = others.back();
    others.pop_back();
    pairs.positives[i] = {j};
    pairs.negatives[i] = {rng.sample(others, 1 + rng.index(4))};
  }
  const TrainingBatch batch{anchors, tau};
  const auto entities = collect_entities(ds.examples, {0, 1, 2, 3, 4, 5});
  const auto label_pairs = build_label_pairs(entities, {4, 2, seed});

  auto evaluate = [&]() -> LossResult {
    switch (kind) {
      case LossKind::kSemantic:
        return loss_semantic(ds.examples, pairs, batch, stack);
      case LossKind::kBoundaryPos:
        return loss_boundary(ds.examples, pairs, batch, stack).pos;
      case LossKind::kBoundaryCon:
        return loss_boundary(ds.examples, pairs, batch, stack).con;
      case LossKind::kLabel:
        break;
    }
    return loss_label(ds.examples, entities, label_pairs, tau, stack);
  };
  LossResult analytic = evaluate();
  return check_gradients(stack, analytic.gradients, [&] { return evaluate().value; });
}

std::vector<ScoredId> brute_force_ranking(const std::vector<AnnotatedExample>& pool, const EncoderStack& stack,
                                          const ScoringWeights& weights, const AnnotatedExample& query, int m) {
  auto unit = [](const Vector& v) -> Vector { return v / v.norm(); };
  auto dot = [](const Vector& a, const Vector& b) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k) s += a(k) * b(k);
    return s;
  };
  const Vector qs = unit(stack.encode_semantic(query.sentence));
  const Vector qp = unit(stack.encode_pos(query.boundary->pos));
  const Vector qt = unit(stack.encode_tree(*query.boundary));
  std::vector<ScoredId> all;
  for (const auto& ex : pool) {
    double s = 0.0;
    if (weights.semantic != 0.0) s += weights.semantic * dot(qs, unit(stack.encode_semantic(ex.sentence)));
    if (weights.pos != 0.0) s += weights.pos * dot(qp, unit(stack.encode_pos(ex.boundary->pos)));
    if (weights.tree != 0.0) s += weights.tree * dot(qt, unit(stack.encode_tree(*ex.boundary)));
    all.push_back({ex.id(), s});
  }
  std::sort(all.begin(), all.end(), [](const ScoredId& a, const ScoredId& b) {
    if (a.score > b.score) return true;
    if (b.score > a.score) return false;
    return a.id < b.id;
  });
  all.resize(static_cast<std::size_t>(m));
  return all;
}

}  // namespace ende::testing
