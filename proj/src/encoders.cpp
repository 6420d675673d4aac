#include "ende/encoders.hpp"

#include <cmath>
#include <fstream>

#include "ende/error.hpp"
#include "ende/rng.hpp"
#include "ende/serialize.hpp"

namespace ende {

Vocabulary::Vocabulary() { add(std::string(kUnknownWord)); }

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  if (words.empty() || words.front() != kUnknownWord) add(std::string(kUnknownWord));
  for (const auto& w : words) add(w);
}

int Vocabulary::add(const std::string& word) {
  auto [it, inserted] = ids_.emplace(word, static_cast<int>(words_.size()));
  if (inserted) words_.push_back(word);
  return it->second;
}

int Vocabulary::lookup(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnknown : it->second;
}

Vocabularies Vocabularies::build(const std::vector<AnnotatedExample>& examples) {
  Vocabularies v;
  v.nodes.add(std::string(kLeafLabel));
  for (const auto& ex : examples) {
    for (const auto& t : ex.sentence.tokens) v.tokens.add(t);
    if (!ex.boundary) continue;
    for (const auto& tag : ex.boundary->pos) {
      v.pos.add(tag);
      v.nodes.add(tag);
    }
    for (const auto& node : ex.boundary->tree.nodes()) {
      if (!node.is_leaf()) v.nodes.add(node.label);
    }
  }
  return v;
}

std::string to_string(SemanticMode mode) {
  return mode == SemanticMode::kExternal ? "external" : "trainable-bag";
}

SemanticMode semantic_mode_from_string(std::string_view s) {
  if (s == "trainable-bag") return SemanticMode::kTrainableBag;
  if (s == "external" || s == "external-provider") return SemanticMode::kExternal;
  throw ConfigError("unknown semantic mode '" + std::string(s) + "'");
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void xavier(Matrix& m, int rows, int cols, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  m.resize(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
  }
}

Matrix zeros_like(const Matrix& m) { return Matrix::Zero(m.rows(), m.cols()); }

}  // namespace

std::vector<TensorRef> SemanticEncoder::Params::tensors() {
  return {{"semantic.embedding", &embedding}, {"semantic.projection", &projection}};
}

std::vector<TensorRef> RecurrentEncoder::Params::tensors() {
  return {{"pos.embedding", &embedding},
          {"pos.input", &input},
          {"pos.recurrent", &recurrent},
          {"pos.bias", &bias},
          {"pos.output", &output}};
}

std::vector<TensorRef> GraphEncoder::Params::tensors() {
  std::vector<TensorRef> out{{"tree.embedding", &embedding}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out.push_back({"tree.layer" + std::to_string(l), &layers[l]});
  }
  out.push_back({"tree.output", &output});
  return out;
}

std::vector<TensorRef> StackGradients::tensors() {
  auto out = semantic.tensors();
  for (auto& t : pos.tensors()) out.push_back(t);
  for (auto& t : tree.tensors()) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------- semantic

SemanticEncoder::SemanticEncoder(Vocabulary vocab, int token_dim, int dim, SemanticMode mode)
    : vocab_(std::move(vocab)), mode_(mode) {
  params.embedding = Matrix::Zero(vocab_.size(), token_dim);
  params.projection = Matrix::Zero(dim, token_dim);
}

Vector SemanticEncoder::encode_tokens(const std::vector<std::string>& tokens, int start, int end,
                                      SemanticTrace* trace) const {
  if (start < 0 || end > static_cast<int>(tokens.size()) || start >= end) {
    throw ContractError("encode_tokens: empty or out-of-range token range");
  }
  Vector mean = Vector::Zero(params.embedding.cols());
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(end - start));
  for (int i = start; i < end; ++i) {
    const int id = vocab_.lookup(tokens[static_cast<std::size_t>(i)]);
    ids.push_back(id);
    mean += params.embedding.row(id).transpose();
  }
  mean /= static_cast<double>(ids.size());
  Vector out = params.projection * mean;
  if (trace != nullptr) {
    trace->valid = true;
    trace->external = false;
    trace->ids = std::move(ids);
    trace->mean = std::move(mean);
  }
  return out;
}

Vector SemanticEncoder::encode(const Sentence& sentence, SemanticTrace* trace) const {
  if (mode_ == SemanticMode::kExternal) {
    auto it = external_.find(sentence.id);
    if (it == external_.end()) {
      throw DataError("no external semantic vector for sentence " + sentence.id);
    }
    if (trace != nullptr) {
      *trace = SemanticTrace{};
      trace->valid = true;
      trace->external = true;
    }
    return it->second;
  }
  return encode_tokens(sentence.tokens, 0, sentence.size(), trace);
}

void SemanticEncoder::backward(const SemanticTrace& trace, const Vector& grad, Params& grads) const {
  if (!trace.valid) throw ContractError("semantic backward called without a cached forward pass");
  if (trace.external) return;  // fixed vectors have no parameters
  grads.projection.noalias() += grad * trace.mean.transpose();
  const Vector d_mean = params.projection.transpose() * grad / static_cast<double>(trace.ids.size());
  for (int id : trace.ids) grads.embedding.row(id) += d_mean.transpose();
}

void SemanticEncoder::set_external_vectors(std::map<std::string, Vector> vectors) {
  for (const auto& [id, v] : vectors) {
    if (v.size() != params.projection.rows()) {
      throw DataError("external vector for " + id + " has dimension " + std::to_string(v.size()) +
                      ", expected " + std::to_string(params.projection.rows()));
    }
  }
  external_ = std::move(vectors);
}

// --------------------------------------------------------------- recurrent

RecurrentEncoder::RecurrentEncoder(Vocabulary vocab, int pos_dim, int hidden, int dim)
    : vocab_(std::move(vocab)), hidden_(hidden) {
  params.embedding = Matrix::Zero(vocab_.size(), pos_dim);
  params.input = Matrix::Zero(4 * hidden, pos_dim);
  params.recurrent = Matrix::Zero(4 * hidden, hidden);
  params.bias = Matrix::Zero(4 * hidden, 1);
  params.output = Matrix::Zero(dim, hidden);
}

Vector RecurrentEncoder::encode(const std::vector<std::string>& tags, RecurrentTrace* trace) const {
  if (tags.empty()) throw ContractError("encode_pos: empty tag sequence");
  const int h = hidden_;
  Vector hidden = Vector::Zero(h);
  Vector cell = Vector::Zero(h);
  if (trace != nullptr) {
    *trace = RecurrentTrace{};
    trace->valid = true;
  }
  for (const auto& tag : tags) {
    const int id = vocab_.lookup(tag);
    Vector x = params.embedding.row(id).transpose();
    Vector z = params.input * x + params.recurrent * hidden + params.bias.col(0);
    for (int k = 0; k < 3 * h; ++k) z(k) = sigmoid(z(k));
    for (int k = 3 * h; k < 4 * h; ++k) z(k) = std::tanh(z(k));
    cell = z.segment(h, h).cwiseProduct(cell) + z.segment(0, h).cwiseProduct(z.segment(3 * h, h));
    hidden = z.segment(2 * h, h).cwiseProduct(cell.array().tanh().matrix());
    if (trace != nullptr) {
      trace->ids.push_back(id);
      trace->inputs.push_back(std::move(x));
      trace->gates.push_back(std::move(z));
      trace->cells.push_back(cell);
      trace->hidden.push_back(hidden);
    }
  }
  return params.output * hidden;
}

void RecurrentEncoder::backward(const RecurrentTrace& trace, const Vector& grad, Params& grads) const {
  if (!trace.valid) throw ContractError("recurrent backward called without a cached forward pass");
  const int h = hidden_;
  const int steps = static_cast<int>(trace.ids.size());
  grads.output.noalias() += grad * trace.hidden.back().transpose();
  Vector d_hidden = params.output.transpose() * grad;
  Vector d_cell = Vector::Zero(h);
  const Vector zero = Vector::Zero(h);
  for (int t = steps - 1; t >= 0; --t) {
    const Vector& gates = trace.gates[t];
    const Vector& c = trace.cells[t];
    const Vector& c_prev = t > 0 ? trace.cells[t - 1] : zero;
    const Vector& h_prev = t > 0 ? trace.hidden[t - 1] : zero;
    const auto i = gates.segment(0, h).array();
    const auto f = gates.segment(h, h).array();
    const auto o = gates.segment(2 * h, h).array();
    const auto g = gates.segment(3 * h, h).array();
    const Eigen::ArrayXd tanh_c = c.array().tanh();

    Eigen::ArrayXd dc = d_cell.array() + d_hidden.array() * o * (1.0 - tanh_c.square());
    Vector dz(4 * h);
    dz.segment(0, h) = (dc * g * i * (1.0 - i)).matrix();
    dz.segment(h, h) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
    dz.segment(2 * h, h) = (d_hidden.array() * tanh_c * o * (1.0 - o)).matrix();
    dz.segment(3 * h, h) = (dc * i * (1.0 - g.square())).matrix();

    grads.input.noalias() += dz * trace.inputs[t].transpose();
    grads.recurrent.noalias() += dz * h_prev.transpose();
    grads.bias.col(0) += dz;
    grads.embedding.row(trace.ids[t]) += (params.input.transpose() * dz).transpose();

    d_hidden = params.recurrent.transpose() * dz;
    d_cell = (dc * f).matrix();
  }
}

// ------------------------------------------------------------------- graph

GraphEncoder::GraphEncoder(Vocabulary vocab, int node_dim, int layers, int dim)
    : vocab_(std::move(vocab)) {
  params.embedding = Matrix::Zero(vocab_.size(), node_dim);
  params.layers.assign(static_cast<std::size_t>(layers), Matrix::Zero(node_dim, node_dim));
  params.output = Matrix::Zero(dim, node_dim);
}

Vector GraphEncoder::encode(const TreeGraph& graph, GraphTrace* trace) const {
  const int n = graph.size();
  if (n == 0) throw ContractError("encode_tree: empty graph");
  std::vector<int> ids(static_cast<std::size_t>(n));
  Matrix state(n, params.embedding.cols());
  for (int v = 0; v < n; ++v) {
    ids[v] = vocab_.lookup(graph.node_labels[v]);
    state.row(v) = params.embedding.row(ids[v]);
  }
  std::vector<Matrix> states;
  if (trace != nullptr) states.push_back(state);
  for (const auto& weight : params.layers) {
    state = (graph.adjacency * state * weight).array().tanh().matrix();
    if (trace != nullptr) states.push_back(state);
  }
  Vector mean = state.colwise().mean().transpose();
  Vector out = params.output * mean;
  if (trace != nullptr) {
    trace->valid = true;
    trace->ids = std::move(ids);
    trace->adjacency = graph.adjacency;
    trace->states = std::move(states);
    trace->mean = std::move(mean);
  }
  return out;
}

void GraphEncoder::backward(const GraphTrace& trace, const Vector& grad, Params& grads) const {
  if (!trace.valid) throw ContractError("graph backward called without a cached forward pass");
  const auto n = static_cast<double>(trace.ids.size());
  grads.output.noalias() += grad * trace.mean.transpose();
  const Vector d_mean = params.output.transpose() * grad;
  Matrix d_state = (Vector::Ones(static_cast<Eigen::Index>(trace.ids.size())) * d_mean.transpose()) / n;
  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const Matrix& out = trace.states[l + 1];
    const Matrix d_pre = (d_state.array() * (1.0 - out.array().square())).matrix();
    const Matrix propagated = trace.adjacency * trace.states[l];
    grads.layers[l].noalias() += propagated.transpose() * d_pre;
    d_state = trace.adjacency.transpose() * d_pre * params.layers[l].transpose();
  }
  for (std::size_t v = 0; v < trace.ids.size(); ++v) {
    grads.embedding.row(trace.ids[v]) += d_state.row(static_cast<Eigen::Index>(v));
  }
}

// ------------------------------------------------------------------- stack

EncoderStack EncoderStack::create(const EncoderConfig& config, const Vocabularies& vocab,
                                  std::uint64_t seed) {
  if (config.dim < 1 || config.token_dim < 1 || config.pos_dim < 1 || config.hidden < 1 ||
      config.node_dim < 1 || config.gcn_layers < 1) {
    throw ConfigError("encoder dimensions must be positive");
  }
  EncoderStack stack;
  stack.config_ = config;
  stack.semantic = SemanticEncoder(vocab.tokens, config.token_dim, config.dim, config.semantic_mode);
  stack.pos = RecurrentEncoder(vocab.pos, config.pos_dim, config.hidden, config.dim);
  stack.tree = GraphEncoder(vocab.nodes, config.node_dim, config.gcn_layers, config.dim);

  Rng rng(seed);
  auto& s = stack.semantic.params;
  xavier(s.embedding, vocab.tokens.size(), config.token_dim, 1, config.token_dim, rng);
  xavier(s.projection, config.dim, config.token_dim, config.token_dim, config.dim, rng);

  auto& p = stack.pos.params;
  const int h = config.hidden;
  xavier(p.embedding, vocab.pos.size(), config.pos_dim, 1, config.pos_dim, rng);
  xavier(p.input, 4 * h, config.pos_dim, config.pos_dim, h, rng);
  xavier(p.recurrent, 4 * h, h, h, h, rng);
  p.bias = Matrix::Zero(4 * h, 1);
  p.bias.block(h, 0, h, 1).setOnes();  // forget gate starts open
  xavier(p.output, config.dim, h, h, config.dim, rng);

  auto& t = stack.tree.params;
  xavier(t.embedding, vocab.nodes.size(), config.node_dim, 1, config.node_dim, rng);
  for (auto& layer : t.layers) xavier(layer, config.node_dim, config.node_dim, config.node_dim, config.node_dim, rng);
  xavier(t.output, config.dim, config.node_dim, config.node_dim, config.dim, rng);
  return stack;
}

StackGradients EncoderStack::zero_gradients() const {
  StackGradients g;
  g.semantic.embedding = zeros_like(semantic.params.embedding);
  g.semantic.projection = zeros_like(semantic.params.projection);
  g.pos.embedding = zeros_like(pos.params.embedding);
  g.pos.input = zeros_like(pos.params.input);
  g.pos.recurrent = zeros_like(pos.params.recurrent);
  g.pos.bias = zeros_like(pos.params.bias);
  g.pos.output = zeros_like(pos.params.output);
  g.tree.embedding = zeros_like(tree.params.embedding);
  for (const auto& layer : tree.params.layers) g.tree.layers.push_back(zeros_like(layer));
  g.tree.output = zeros_like(tree.params.output);
  return g;
}

std::vector<TensorRef> EncoderStack::tensors() {
  auto out = semantic.params.tensors();
  for (auto& t : pos.params.tensors()) out.push_back(t);
  for (auto& t : tree.params.tensors()) out.push_back(t);
  return out;
}

// -------------------------------------------------------------- checkpoint

namespace {

constexpr const char* kCheckpointFormat = "ende-checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderStack& stack) {
  const auto& c = stack.config();
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = {{"dim", c.dim},           {"token_dim", c.token_dim},
                 {"pos_dim", c.pos_dim},   {"hidden", c.hidden},
                 {"node_dim", c.node_dim}, {"gcn_layers", c.gcn_layers},
                 {"semantic_mode", to_string(c.semantic_mode)}};
  j["vocabularies"] = {{"tokens", stack.semantic.vocab().words()},
                       {"pos", stack.pos.vocab().words()},
                       {"nodes", stack.tree.vocab().words()}};
  Json tensors = Json::array();
  for (const auto& t : const_cast<EncoderStack&>(stack).tensors()) {
    const Matrix& m = *t.value;
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index col = 0; col < m.cols(); ++col) data.push_back(m(r, col));
    }
    tensors.push_back({{"name", t.name}, {"shape", {m.rows(), m.cols()}}, {"data", data}});
  }
  j["tensors"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

EncoderStack load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format") != kCheckpointFormat) throw DataError("not an ende checkpoint: " + path.string());
    if (j.at("version") != kCheckpointVersion) {
      throw DataError("unsupported checkpoint version " + j.at("version").dump());
    }
    const auto& jc = j.at("config");
    EncoderConfig config;
    config.dim = jc.at("dim");
    config.token_dim = jc.at("token_dim");
    config.pos_dim = jc.at("pos_dim");
    config.hidden = jc.at("hidden");
    config.node_dim = jc.at("node_dim");
    config.gcn_layers = jc.at("gcn_layers");
    config.semantic_mode = semantic_mode_from_string(jc.at("semantic_mode").get<std::string>());
    Vocabularies vocab{Vocabulary(j.at("vocabularies").at("tokens").get<std::vector<std::string>>()),
                       Vocabulary(j.at("vocabularies").at("pos").get<std::vector<std::string>>()),
                       Vocabulary(j.at("vocabularies").at("nodes").get<std::vector<std::string>>())};
    EncoderStack stack = EncoderStack::create(config, vocab, 0);
    std::map<std::string, const Json*> by_name;
    for (const auto& t : j.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    for (auto& t : stack.tensors()) {
      auto it = by_name.find(t.name);
      if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + t.name);
      const Json& jt = *it->second;
      const auto rows = jt.at("shape").at(0).get<Eigen::Index>();
      const auto cols = jt.at("shape").at(1).get<Eigen::Index>();
      if (rows != t.value->rows() || cols != t.value->cols()) {
        throw DataError("checkpoint tensor " + t.name + " has the wrong shape");
      }
      const auto data = jt.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw DataError("checkpoint tensor " + t.name + " has the wrong size");
      }
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) (*t.value)(r, c) = data[static_cast<std::size_t>(r * cols + c)];
      }
    }
    return stack;
  } catch (const Json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

std::map<std::string, Vector> load_external_vectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vector file " + path.string());
  std::map<std::string, Vector> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      const auto values = j.at("vector").get<std::vector<double>>();
      out[j.at("id").get<std::string>()] = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    } catch (const Json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ende
