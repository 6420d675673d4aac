#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ende/boundary.hpp"
#include "ende/encoders.hpp"
#include "ende/error.hpp"
#include "ende/rng.hpp"
#include "fixtures.hpp"

using namespace ende;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.dim = 6;
  c.token_dim = 4;
  c.pos_dim = 3;
  c.hidden = 3;
  c.node_dim = 4;
  return c;
}

EncoderStack toy_stack(std::uint64_t seed = 7) {
  const auto ds = testing::make_toy_corpus();
  return EncoderStack::create(small_config(), Vocabularies::build(ds.examples), seed);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector random_vector(int n, Rng& rng) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST_CASE("vocabulary maps unknown words to id 0") {
  Vocabulary v({"a", "b"});
  CHECK(v.size() == 3);
  CHECK(v.lookup("a") == 1);
  CHECK(v.lookup("zzz") == Vocabulary::kUnknown);
  CHECK(v.words()[0] == Vocabulary::kUnknownWord);
}

TEST_CASE("initialization is seeded") {
  auto a = toy_stack(3);
  auto b = toy_stack(3);
  auto c = toy_stack(4);
  auto ta = a.tensors();
  auto tb = b.tensors();
  auto tc = c.tensors();
  bool any_diff = false;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    CHECK(ta[k].name == tb[k].name);
    CHECK((ta[k].value->array() == tb[k].value->array()).all());
    if (ta[k].value->size() > 0 && !(ta[k].value->array() == tc[k].value->array()).all()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("semantic encoder") {
  const auto stack = toy_stack();
  const Sentence s1{"a", {"Alice", "Abe", "joined"}};
  const Sentence s2{"b", {"Alice", "Abe", "joined"}};
  CHECK((stack.encode_semantic(s1).array() == stack.encode_semantic(s2).array()).all());

  SUBCASE("single token is the projected embedding") {
    const Sentence one{"c", {"Alice"}};
    const int id = stack.semantic.vocab().lookup("Alice");
    const Vector expected = stack.semantic.params.projection * stack.semantic.params.embedding.row(id).transpose();
    CHECK((stack.encode_semantic(one) - expected).norm() == 0.0);
  }
  SUBCASE("token order does not matter") {
    const Sentence permuted{"d", {"joined", "Alice", "Abe"}};
    CHECK((stack.encode_semantic(s1) - stack.encode_semantic(permuted)).norm() < 1e-12);
  }
  SUBCASE("unknown tokens use the reserved row") {
    const Sentence unk{"e", {"never-seen"}};
    const Vector expected = stack.semantic.params.projection * stack.semantic.params.embedding.row(0).transpose();
    CHECK((stack.encode_semantic(unk) - expected).norm() == 0.0);
  }
}

TEST_CASE("recurrent encoder single step matches the cell equations") {
  const auto stack = toy_stack();
  const auto& p = stack.pos.params;
  const int h = stack.pos.hidden();
  const Vector x = p.embedding.row(stack.pos.vocab().lookup("NNP")).transpose();
  Vector hidden(h);
  for (int k = 0; k < h; ++k) {
    // Zero initial state: c = i * g, h = o * tanh(c).
    const double i = sigmoid(p.input.row(k).dot(x) + p.bias(k, 0));
    const double o = sigmoid(p.input.row(2 * h + k).dot(x) + p.bias(2 * h + k, 0));
    const double g = std::tanh(p.input.row(3 * h + k).dot(x) + p.bias(3 * h + k, 0));
    hidden(k) = o * std::tanh(i * g);
  }
  const Vector expected = p.output * hidden;
  CHECK((stack.encode_pos({"NNP"}) - expected).norm() < 1e-12);
}

TEST_CASE("recurrent encoder depends on order") {
  const auto ds = testing::make_toy_corpus();
  auto vocab = Vocabularies::build(ds.examples);
  vocab.pos.add("DT");
  vocab.pos.add("NN");
  const auto stack = EncoderStack::create(small_config(), vocab, 11);
  const Vector a = stack.encode_pos({"DT", "NN"});
  const Vector b = stack.encode_pos({"NN", "DT"});
  CHECK((a - b).norm() > 1e-9);
  CHECK((stack.encode_pos({"DT", "NN"}) - a).norm() == 0.0);
  CHECK_THROWS_AS(stack.encode_pos({}), ContractError);
}

TEST_CASE("graph encoder") {
  const auto stack = toy_stack();
  const auto corpus = testing::make_toy_corpus();
  const auto& ex = corpus.examples[0];
  const TreeGraph g = tree_to_graph(ex.boundary->tree, ex.boundary->pos);

  SUBCASE("node relabelling leaves the output unchanged") {
    const int n = g.size();
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(5);
    rng.shuffle(perm);
    TreeGraph shuffled;
    shuffled.adjacency.resize(n, n);
    shuffled.node_labels.resize(n);
    for (int i = 0; i < n; ++i) {
      shuffled.node_labels[perm[i]] = g.node_labels[i];
      for (int j = 0; j < n; ++j) shuffled.adjacency(perm[i], perm[j]) = g.adjacency(i, j);
    }
    CHECK((stack.encode_tree(g) - stack.encode_tree(shuffled)).norm() < 1e-9);
  }
  SUBCASE("zero embeddings give a zero output") {
    auto zeroed = stack;
    zeroed.tree.params.embedding.setZero();
    zeroed.semantic.params.embedding.setZero();
    CHECK(zeroed.encode_tree(g).norm() == 0.0);
    CHECK(zeroed.encode_semantic(ex.sentence).norm() == 0.0);
  }
  SUBCASE("one-node graph") {
    TreeGraph one;
    one.adjacency = Matrix::Ones(1, 1);
    one.node_labels = {"S"};
    const auto& p = stack.tree.params;
    Eigen::RowVectorXd state = p.embedding.row(stack.tree.vocab().lookup("S"));
    for (const auto& w : p.layers) state = (state * w).array().tanh().matrix();
    const Vector expected = p.output * state.transpose();
    CHECK((stack.encode_tree(one) - expected).norm() < 1e-12);
  }
}

TEST_CASE("backward contracts") {
  auto stack = toy_stack();
  const auto corpus = testing::make_toy_corpus();
  const auto& ex = corpus.examples[1];
  auto grads = stack.zero_gradients();

  CHECK_THROWS_AS(stack.backward(SemanticTrace{}, Vector::Ones(stack.dim()), grads), ContractError);
  CHECK_THROWS_AS(stack.backward(RecurrentTrace{}, Vector::Ones(stack.dim()), grads), ContractError);
  CHECK_THROWS_AS(stack.backward(GraphTrace{}, Vector::Ones(stack.dim()), grads), ContractError);

  SemanticTrace st;
  RecurrentTrace rt;
  GraphTrace gt;
  stack.encode_semantic(ex.sentence, &st);
  stack.encode_pos(ex.boundary->pos, &rt);
  stack.encode_tree(*ex.boundary, &gt);
  const Vector zero = Vector::Zero(stack.dim());
  stack.backward(st, zero, grads);
  stack.backward(rt, zero, grads);
  stack.backward(gt, zero, grads);
  for (auto& t : grads.tensors()) CHECK(t.value->norm() == 0.0);

  stack.backward(st, Vector::Ones(stack.dim()), grads);
  const int unused = stack.semantic.vocab().lookup("Abe");
  REQUIRE(unused != Vocabulary::kUnknown);
  CHECK(grads.semantic.embedding.row(unused).norm() == 0.0);
  CHECK(grads.semantic.embedding.row(stack.semantic.vocab().lookup("mayor")).norm() > 0.0);
}

TEST_CASE("encoder gradients match finite differences") {
  const auto ds = testing::make_toy_corpus();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto stack = EncoderStack::create(small_config(), Vocabularies::build(ds.examples), seed);
    const auto& ex = ds.examples[seed % ds.examples.size()];
    Rng rng(seed + 100);
    const Vector upstream = random_vector(stack.dim(), rng);

    auto grads = stack.zero_gradients();
    SemanticTrace st;
    RecurrentTrace rt;
    GraphTrace gt;
    stack.encode_semantic(ex.sentence, &st);
    stack.encode_pos(ex.boundary->pos, &rt);
    stack.encode_tree(*ex.boundary, &gt);
    stack.backward(st, upstream, grads);
    stack.backward(rt, upstream, grads);
    stack.backward(gt, upstream, grads);

    const auto check = testing::check_gradients(stack, grads, [&] {
      return upstream.dot(stack.encode_semantic(ex.sentence) + stack.encode_pos(ex.boundary->pos) +
                          stack.encode_tree(*ex.boundary));
    });
    INFO(check.worst);
    CHECK(check.max_rel_error <= 1e-4);
  }
}

TEST_CASE("single-parameter perturbation on a one-token input") {
  auto stack = toy_stack(21);
  const Sentence one{"x", {"mayor"}};
  const Vector upstream = Vector::Ones(stack.dim());
  auto grads = stack.zero_gradients();
  SemanticTrace st;
  stack.encode_semantic(one, &st);
  stack.backward(st, upstream, grads);
  const int row = stack.semantic.vocab().lookup("mayor");
  double& w = stack.semantic.params.embedding(row, 1);
  const double saved = w;
  const double h = 1e-5;
  w = saved + h;
  const double up = upstream.dot(stack.encode_semantic(one));
  w = saved - h;
  const double down = upstream.dot(stack.encode_semantic(one));
  w = saved;
  const double numeric = (up - down) / (2 * h);
  CHECK(grads.semantic.embedding(row, 1) == doctest::Approx(numeric).epsilon(1e-6));
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir;
  auto stack = toy_stack(9);
  save_checkpoint(dir / "ckpt.json", stack);
  auto back = load_checkpoint(dir / "ckpt.json");
  auto a = stack.tensors();
  auto b = back.tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK((a[k].value->array() == b[k].value->array()).all());
  const auto corpus = testing::make_toy_corpus();
  const auto& ex = corpus.examples[2];
  CHECK((stack.encode_tree(*ex.boundary) - back.encode_tree(*ex.boundary)).norm() == 0.0);
  CHECK(back.config().dim == stack.config().dim);

  std::ofstream(dir / "bad.json") << R"({"format":"something-else","version":1})";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), DataError);
}

TEST_CASE("external semantic vectors") {
  testing::TempDir dir;
  std::ofstream(dir / "vec.jsonl") << R"({"id":"s1","vector":[1,0,0,0,0,0]})"
                                   << "\n"
                                   << R"({"id":"s2","vector":[0,2,0,0,0,0]})"
                                   << "\n";
  auto cfg = small_config();
  cfg.semantic_mode = SemanticMode::kExternal;
  auto stack = EncoderStack::create(cfg, Vocabularies::build(testing::make_toy_corpus().examples), 1);
  stack.semantic.set_external_vectors(load_external_vectors(dir / "vec.jsonl"));
  CHECK(stack.encode_semantic({"s2", {"x"}})(1) == 2.0);
  CHECK_THROWS_AS(stack.encode_semantic({"s3", {"x"}}), DataError);
  CHECK(semantic_mode_from_string(to_string(SemanticMode::kExternal)) == SemanticMode::kExternal);
}
