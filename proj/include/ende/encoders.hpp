#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ende/boundary.hpp"
#include "ende/corpus.hpp"

namespace ende {

// String-to-id table. Id 0 is the reserved unknown entry.
class Vocabulary {
 public:
  static constexpr int kUnknown = 0;
  static constexpr std::string_view kUnknownWord = "<unk>";

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  int add(const std::string& word);
  // kUnknown for out-of-vocabulary words.
  int lookup(const std::string& word) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

struct Vocabularies {
  Vocabulary tokens;
  Vocabulary pos;
  Vocabulary nodes;

  // Tokens, POS tags, and tree node labels of every example, in first-seen order.
  static Vocabularies build(const std::vector<AnnotatedExample>& examples);
};

enum class SemanticMode { kTrainableBag, kExternal };

std::string to_string(SemanticMode mode);
SemanticMode semantic_mode_from_string(std::string_view s);

struct EncoderConfig {
  int dim = 64;        // shared output dimension d
  int token_dim = 32;  // semantic token embedding width
  int pos_dim = 16;    // POS embedding width
  int hidden = 32;     // LSTM hidden size
  int node_dim = 16;   // GCN node state width
  int gcn_layers = 2;
  SemanticMode semantic_mode = SemanticMode::kTrainableBag;
};

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Name and storage of one trainable tensor.
struct TensorRef {
  std::string name;
  Matrix* value;
};

// Forward state kept for backward. A default-constructed trace is empty and
// rejected by backward.
struct SemanticTrace {
  bool valid = false;
  bool external = false;
  std::vector<int> ids;
  Vector mean;  // mean token embedding
};

struct RecurrentTrace {
  bool valid = false;
  std::vector<int> ids;
  std::vector<Vector> inputs;  // x_t
  std::vector<Vector> gates;   // [i; f; o; g] after activation
  std::vector<Vector> cells;   // c_t
  std::vector<Vector> hidden;  // h_t
};

struct GraphTrace {
  bool valid = false;
  std::vector<int> ids;
  Matrix adjacency;
  std::vector<Matrix> states;  // H_0 .. H_L
  Vector mean;                 // mean row of H_L
};

// Bag-of-tokens sentence encoder: x = P * mean(E[tokens]). Each token's
// projected embedding P * E[t] is its TokenEmbedding; entity representations
// are means of those, which is the same map applied to the entity's tokens.
class SemanticEncoder {
 public:
  struct Params {
    Matrix embedding;   // |V| x token_dim
    Matrix projection;  // dim x token_dim

    std::vector<TensorRef> tensors();
  };

  SemanticEncoder() = default;
  SemanticEncoder(Vocabulary vocab, int token_dim, int dim, SemanticMode mode);

  // Sentence vector. In external mode the vector is looked up by sentence id.
  Vector encode(const Sentence& sentence, SemanticTrace* trace = nullptr) const;
  // Projected mean embedding of tokens [start, end). Always uses the bag.
  Vector encode_tokens(const std::vector<std::string>& tokens, int start, int end,
                       SemanticTrace* trace = nullptr) const;
  void backward(const SemanticTrace& trace, const Vector& grad, Params& grads) const;

  void set_external_vectors(std::map<std::string, Vector> vectors);
  const std::map<std::string, Vector>& external_vectors() const { return external_; }

  SemanticMode mode() const { return mode_; }
  const Vocabulary& vocab() const { return vocab_; }
  Params params;

 private:
  Vocabulary vocab_;
  SemanticMode mode_ = SemanticMode::kTrainableBag;
  std::map<std::string, Vector> external_;
};

// Single-layer LSTM over POS tags, zero initial state, output = W_out h_T.
class RecurrentEncoder {
 public:
  struct Params {
    Matrix embedding;  // |V| x pos_dim
    Matrix input;      // 4h x pos_dim, gate order i, f, o, g
    Matrix recurrent;  // 4h x h
    Matrix bias;       // 4h x 1
    Matrix output;     // dim x h

    std::vector<TensorRef> tensors();
  };

  RecurrentEncoder() = default;
  RecurrentEncoder(Vocabulary vocab, int pos_dim, int hidden, int dim);

  Vector encode(const std::vector<std::string>& tags, RecurrentTrace* trace = nullptr) const;
  void backward(const RecurrentTrace& trace, const Vector& grad, Params& grads) const;

  const Vocabulary& vocab() const { return vocab_; }
  int hidden() const { return hidden_; }
  Params params;

 private:
  Vocabulary vocab_;
  int hidden_ = 0;
};

// Graph convolution over a tree graph: H_{l+1} = tanh(A H_l W_l), output =
// W_out * mean over nodes of H_L.
class GraphEncoder {
 public:
  struct Params {
    Matrix embedding;            // |V| x node_dim
    std::vector<Matrix> layers;  // node_dim x node_dim each
    Matrix output;               // dim x node_dim

    std::vector<TensorRef> tensors();
  };

  GraphEncoder() = default;
  GraphEncoder(Vocabulary vocab, int node_dim, int layers, int dim);

  Vector encode(const TreeGraph& graph, GraphTrace* trace = nullptr) const;
  void backward(const GraphTrace& trace, const Vector& grad, Params& grads) const;

  const Vocabulary& vocab() const { return vocab_; }
  Params params;

 private:
  Vocabulary vocab_;
};

struct StackGradients {
  SemanticEncoder::Params semantic;
  RecurrentEncoder::Params pos;
  GraphEncoder::Params tree;

  std::vector<TensorRef> tensors();
};

// The three encoders sharing output dimension d.
class EncoderStack {
 public:
  EncoderStack() = default;

  // Xavier-uniform initialization from `seed`; identical seeds give
  // bit-identical parameters.
  static EncoderStack create(const EncoderConfig& config, const Vocabularies& vocab,
                             std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  int dim() const { return config_.dim; }

  Vector encode_semantic(const Sentence& s, SemanticTrace* trace = nullptr) const {
    return semantic.encode(s, trace);
  }
  Vector encode_pos(const std::vector<std::string>& tags, RecurrentTrace* trace = nullptr) const {
    return pos.encode(tags, trace);
  }
  Vector encode_tree(const TreeGraph& graph, GraphTrace* trace = nullptr) const {
    return tree.encode(graph, trace);
  }
  // Tree graph with leaves featured by the POS tags.
  Vector encode_tree(const BoundaryAnnotation& b, GraphTrace* trace = nullptr) const {
    return tree.encode(tree_to_graph(b.tree, b.pos), trace);
  }

  void backward(const SemanticTrace& t, const Vector& grad, StackGradients& g) const {
    semantic.backward(t, grad, g.semantic);
  }
  void backward(const RecurrentTrace& t, const Vector& grad, StackGradients& g) const {
    pos.backward(t, grad, g.pos);
  }
  void backward(const GraphTrace& t, const Vector& grad, StackGradients& g) const {
    tree.backward(t, grad, g.tree);
  }

  // Same shapes as the parameters, all zero.
  StackGradients zero_gradients() const;
  std::vector<TensorRef> tensors();

  SemanticEncoder semantic;
  RecurrentEncoder pos;
  GraphEncoder tree;

 private:
  EncoderConfig config_;
};

// Checkpoint: JSON with format tag and version, encoder config, vocabularies,
// and named tensors (row-major data with explicit shape).
void save_checkpoint(const std::filesystem::path& path, const EncoderStack& stack);
EncoderStack load_checkpoint(const std::filesystem::path& path);

// JSONL of {"id": str, "vector": [float]}.
std::map<std::string, Vector> load_external_vectors(const std::filesystem::path& path);

}  // namespace ende
