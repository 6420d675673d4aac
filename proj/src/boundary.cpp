#include "ende/boundary.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "ende/error.hpp"

namespace ende {

bool operator==(const TreeNode& a, const TreeNode& b) {
  return a.label == b.label && a.children == b.children && a.parent == b.parent &&
         a.start == b.start && a.end == b.end;
}

bool operator==(const ConstituencyTree& a, const ConstituencyTree& b) {
  return a.nodes_ == b.nodes_;
}

ConstituencyTree::ConstituencyTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

int ConstituencyTree::leaf_count() const {
  int n = 0;
  for (const auto& node : nodes_) n += node.is_leaf() ? 1 : 0;
  return n;
}

void ConstituencyTree::validate(int token_count) const {
  if (nodes_.empty()) throw DataError("constituency tree is empty");
  const int n = size();
  std::vector<int> parent_seen(static_cast<std::size_t>(n), 0);
  for (int id = 0; id < n; ++id) {
    for (int c : nodes_[id].children) {
      if (c <= 0 || c >= n) {
        throw DataError("tree node " + std::to_string(id) + " has invalid child " + std::to_string(c));
      }
      if (nodes_[c].parent != id) {
        throw DataError("tree node " + std::to_string(c) + " parent link is inconsistent");
      }
      ++parent_seen[c];
    }
  }
  if (nodes_[0].parent != -1) throw DataError("tree root has a parent");
  for (int id = 1; id < n; ++id) {
    if (parent_seen[id] != 1) {
      throw DataError("tree node " + std::to_string(id) + " has " +
                      std::to_string(parent_seen[id]) + " parents");
    }
  }

  // Every node reachable from the root exactly once means a tree.
  std::vector<int> stack{0};
  int visited = 0;
  int next_leaf = 0;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  // Pre-order walk, children left to right.
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (seen[id]) throw DataError("tree contains a cycle at node " + std::to_string(id));
    seen[id] = 1;
    ++visited;
    const TreeNode& node = nodes_[id];
    if (node.is_leaf()) {
      if (node.start != next_leaf || node.end != next_leaf + 1) {
        throw DataError("tree leaf " + std::to_string(id) + " does not cover token " +
                        std::to_string(next_leaf));
      }
      ++next_leaf;
    } else {
      const TreeNode& first = nodes_[node.children.front()];
      const TreeNode& last = nodes_[node.children.back()];
      if (node.start != first.start || node.end != last.end) {
        throw DataError("tree node " + std::to_string(id) + " span differs from its children");
      }
      for (std::size_t i = 1; i < node.children.size(); ++i) {
        if (nodes_[node.children[i - 1]].end != nodes_[node.children[i]].start) {
          throw DataError("tree node " + std::to_string(id) + " children are not contiguous");
        }
      }
      for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) stack.push_back(*it);
    }
  }
  if (visited != n) throw DataError("tree is disconnected");
  if (next_leaf != token_count) {
    throw DataError("tree has " + std::to_string(next_leaf) + " leaves for " +
                    std::to_string(token_count) + " tokens");
  }
}

std::string escape_tree_token(std::string_view token) {
  if (token == "(") return "-LRB-";
  if (token == ")") return "-RRB-";
  std::string out;
  for (char c : token) {
    if (c == '(') {
      out += "-LRB-";
    } else if (c == ')') {
      out += "-RRB-";
    } else {
      out += c;
    }
  }
  return out;
}

namespace {

class BracketParser {
 public:
  explicit BracketParser(std::string_view text) : text_(text) {}

  std::vector<TreeNode> parse() {
    skip_space();
    if (pos_ >= text_.size() || text_[pos_] != '(') {
      throw ParseError("expected '(' at offset " + std::to_string(pos_), pos_);
    }
    parse_node(-1);
    skip_space();
    if (pos_ != text_.size()) {
      if (text_[pos_] == ')') {
        throw ParseError("unbalanced at offset " + std::to_string(pos_), pos_);
      }
      throw ParseError("trailing text at offset " + std::to_string(pos_), pos_);
    }
    return std::move(nodes_);
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string atom() {
    const std::size_t begin = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '(' && text_[pos_] != ')') {
      ++pos_;
    }
    return std::string(text_.substr(begin, pos_ - begin));
  }

  int add(std::string label, int parent) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(TreeNode{std::move(label), {}, parent, 0, 0});
    if (parent >= 0) nodes_[parent].children.push_back(id);
    return id;
  }

  // At '('.
  void parse_node(int parent) {
    ++pos_;
    skip_space();
    std::string label = atom();
    // PTB files often wrap the tree in an unlabeled bracket.
    const int id = add(label.empty() ? "ROOT" : std::move(label), parent);
    nodes_[id].start = leaves_;
    for (;;) {
      skip_space();
      if (pos_ >= text_.size()) {
        throw ParseError("unbalanced at offset " + std::to_string(pos_), pos_);
      }
      if (text_[pos_] == ')') {
        ++pos_;
        break;
      }
      if (text_[pos_] == '(') {
        parse_node(id);
      } else {
        const int leaf = add(atom(), id);
        nodes_[leaf].start = leaves_;
        nodes_[leaf].end = ++leaves_;
      }
    }
    if (nodes_[id].children.empty()) {
      throw ParseError("constituent '" + nodes_[id].label + "' has no children before offset " +
                           std::to_string(pos_),
                       pos_);
    }
    nodes_[id].end = leaves_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int leaves_ = 0;
  std::vector<TreeNode> nodes_;
};

}  // namespace

ConstituencyTree parse_bracketed_tree(std::string_view text,
                                      const std::vector<std::string>& tokens) {
  ConstituencyTree tree(BracketParser(text).parse());
  int position = 0;
  for (const auto& node : tree.nodes()) {
    if (!node.is_leaf()) continue;
    if (position >= static_cast<int>(tokens.size())) {
      throw DataError("tree alignment error at position " + std::to_string(position) +
                      ": tree has more leaves than the sentence has tokens");
    }
    if (node.label != escape_tree_token(tokens[position])) {
      throw DataError("tree alignment error at position " + std::to_string(position) + ": leaf '" +
                      node.label + "' vs token '" + tokens[position] + "'");
    }
    ++position;
  }
  if (position != static_cast<int>(tokens.size())) {
    throw DataError("tree alignment error at position " + std::to_string(position) +
                    ": tree has fewer leaves than the sentence has tokens");
  }
  tree.validate(static_cast<int>(tokens.size()));
  return tree;
}

namespace {

void render_node(const ConstituencyTree& tree, int id, std::string& out) {
  const TreeNode& node = tree.node(id);
  if (node.is_leaf()) {
    out += node.label;
    return;
  }
  out += '(';
  out += node.label;
  for (int c : node.children) {
    out += ' ';
    render_node(tree, c, out);
  }
  out += ')';
}

}  // namespace

std::string render_bracketed_tree(const ConstituencyTree& tree) {
  std::string out;
  if (!tree.empty()) render_node(tree, tree.root(), out);
  return out;
}

TreeGraph tree_to_graph(const ConstituencyTree& tree, const std::vector<std::string>& pos) {
  const int n = tree.size();
  TreeGraph graph;
  graph.adjacency = Eigen::MatrixXd::Identity(n, n);
  graph.node_labels.reserve(static_cast<std::size_t>(n));
  for (int id = 0; id < n; ++id) {
    const TreeNode& node = tree.node(id);
    if (node.parent >= 0) {
      graph.adjacency(id, node.parent) = 1.0;
      graph.adjacency(node.parent, id) = 1.0;
    }
    if (!node.is_leaf()) {
      graph.node_labels.push_back(node.label);
    } else if (!pos.empty()) {
      graph.node_labels.push_back(pos.at(static_cast<std::size_t>(node.start)));
    } else {
      graph.node_labels.emplace_back(kLeafLabel);
    }
  }
  Eigen::VectorXd inv_sqrt_degree = graph.adjacency.rowwise().sum().cwiseSqrt().cwiseInverse();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (graph.adjacency(i, j) != 0.0) {
        graph.adjacency(i, j) *= inv_sqrt_degree(i) * inv_sqrt_degree(j);
      }
    }
  }
  return graph;
}

void validate_boundary(const BoundaryAnnotation& boundary, const std::vector<std::string>& tokens) {
  if (boundary.pos.size() != tokens.size()) {
    throw DataError("POS sequence has " + std::to_string(boundary.pos.size()) + " tags for " +
                    std::to_string(tokens.size()) + " tokens");
  }
  for (const auto& tag : boundary.pos) {
    if (tag.empty()) throw DataError("empty POS tag");
  }
  boundary.tree.validate(static_cast<int>(tokens.size()));
  int position = 0;
  for (const auto& node : boundary.tree.nodes()) {
    if (!node.is_leaf()) continue;
    if (node.label != escape_tree_token(tokens[position])) {
      throw DataError("tree alignment error at position " + std::to_string(position));
    }
    ++position;
  }
}

}  // namespace ende
