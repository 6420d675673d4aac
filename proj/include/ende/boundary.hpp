#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ende {

// One node of a constituency tree. Leaves carry the token text as label and
// cover exactly one token.
struct TreeNode {
  std::string label;
  std::vector<int> children;
  int parent = -1;
  int start = 0;  // token span [start, end)
  int end = 0;

  bool is_leaf() const { return children.empty(); }
};

// Phrase-structure tree whose leaves are the sentence tokens, left to right.
// Nodes are stored in pre-order, so the root is node 0.
class ConstituencyTree {
 public:
  ConstituencyTree() = default;
  explicit ConstituencyTree(std::vector<TreeNode> nodes);

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  int root() const { return 0; }
  int size() const { return static_cast<int>(nodes_.size()); }
  int leaf_count() const;
  int internal_count() const { return size() - leaf_count(); }
  bool empty() const { return nodes_.empty(); }

  // Throws DataError if the node graph is not a tree, or leaves do not cover
  // tokens 0..n-1 in order, or an internal span is not the concatenation of
  // its children's spans.
  void validate(int token_count) const;

  friend bool operator==(const ConstituencyTree& a, const ConstituencyTree& b);

 private:
  std::vector<TreeNode> nodes_;
};

bool operator==(const TreeNode& a, const TreeNode& b);

struct BoundaryAnnotation {
  std::vector<std::string> pos;
  ConstituencyTree tree;

  friend bool operator==(const BoundaryAnnotation&, const BoundaryAnnotation&) = default;
};

// Parses `(S (NP John) (VP runs))`. Leaves must match `tokens` exactly and in
// order. Tokens containing parentheses are written -LRB- / -RRB-.
ConstituencyTree parse_bracketed_tree(std::string_view text,
                                      const std::vector<std::string>& tokens);

// Inverse of parse_bracketed_tree, single-spaced.
std::string render_bracketed_tree(const ConstituencyTree& tree);

// Symmetric graph of a tree: A' = D^{-1/2} (A + I) D^{-1/2} over parent-child
// edges. Internal nodes are featured by their syntactic label; leaves by their
// POS tag when `pos` is non-empty, otherwise by kLeafLabel.
struct TreeGraph {
  Eigen::MatrixXd adjacency;
  std::vector<std::string> node_labels;

  int size() const { return static_cast<int>(node_labels.size()); }
};

inline constexpr std::string_view kLeafLabel = "<leaf>";

TreeGraph tree_to_graph(const ConstituencyTree& tree,
                        const std::vector<std::string>& pos = {});

// Checks tag count against the sentence and the tree against the tokens.
void validate_boundary(const BoundaryAnnotation& boundary,
                       const std::vector<std::string>& tokens);

// Tokens as they appear in bracketed text.
std::string escape_tree_token(std::string_view token);

}  // namespace ende
