#include "phonodist/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace phonodist::cluster {

Dendrogram ward_linkage(const transport::DistanceMatrix& matrix, WardMode mode) {
  const std::size_t n = matrix.labels.size();
  if (n < 2) throw std::invalid_argument("ward_linkage needs at least 2 items");
  for (double v : matrix.values.data) {
    if (std::isnan(v)) throw std::runtime_error("ward_linkage: distance matrix contains NaN");
  }

  // Active clusters: working dissimilarity, size, current node id and the
  // smallest member label (for deterministic tie-breaking).
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = matrix.values(i, j);
      d[i][j] = (mode == WardMode::squared) ? v * v : v;
    }
  }
  std::vector<bool> active(n, true);
  std::vector<int> size(n, 1);
  std::vector<int> node_id(n);
  std::vector<std::string> min_label(n);
  for (std::size_t i = 0; i < n; ++i) {
    node_id[i] = static_cast<int>(i);
    min_label[i] = matrix.labels[i];
  }

  Dendrogram tree;
  tree.labels = matrix.labels;
  tree.merges.reserve(n - 1);
  double last_height = 0.0;

  for (std::size_t step = 0; step + 1 < n; ++step) {
    // Closest active pair; ties broken on the sorted (min_label, min_label) pair.
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        const double v = d[i][j];
        bool better = v < best;
        if (!better && v == best && found) {
          const auto key = [&](std::size_t a, std::size_t b) {
            return min_label[a] <= min_label[b] ? std::make_pair(min_label[a], min_label[b])
                                                : std::make_pair(min_label[b], min_label[a]);
          };
          better = key(i, j) < key(bi, bj);
        }
        if (better) {
          best = v;
          bi = i;
          bj = j;
          found = true;
        }
      }
    }
    if (!found) throw std::logic_error("ward_linkage: no active pair found");

    const double height = (mode == WardMode::squared) ? std::sqrt(std::max(0.0, best)) : best;
    if (height + 1e-9 < last_height) {
      throw std::logic_error("ward_linkage: merge heights are not monotone");
    }
    last_height = std::max(last_height, height);

    Merge m;
    m.a = node_id[bi];
    m.b = node_id[bj];
    if (m.a > m.b) std::swap(m.a, m.b);
    m.height = height;
    m.size = size[bi] + size[bj];
    tree.merges.push_back(m);

    // Lance-Williams update with Ward coefficients.
    const double ni = size[bi], nj = size[bj];
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double nk = size[k];
      const double denom = ni + nj + nk;
      const double v =
          ((ni + nk) * d[bi][k] + (nj + nk) * d[bj][k] - nk * d[bi][bj]) / denom;
      d[bi][k] = v;
      d[k][bi] = v;
    }
    active[bj] = false;
    size[bi] += size[bj];
    node_id[bi] = static_cast<int>(n + step);
    if (min_label[bj] < min_label[bi]) min_label[bi] = min_label[bj];
  }
  return tree;
}

namespace {

struct TreeView {
  const Dendrogram* tree;
  int n;

  bool is_leaf(int node) const { return node < n; }
  const Merge& merge_of(int node) const {
    return tree->merges[static_cast<std::size_t>(node - n)];
  }
  double height(int node) const { return is_leaf(node) ? 0.0 : merge_of(node).height; }
};

// Lexicographically smallest label in a subtree.
std::string smallest_label(const TreeView& tv, int node) {
  if (tv.is_leaf(node)) return tv.tree->labels[static_cast<std::size_t>(node)];
  const Merge& m = tv.merge_of(node);
  return std::min(smallest_label(tv, m.a), smallest_label(tv, m.b));
}

void collect_leaves(const TreeView& tv, int node, std::vector<std::string>& out) {
  if (tv.is_leaf(node)) {
    out.push_back(tv.tree->labels[static_cast<std::size_t>(node)]);
    return;
  }
  const Merge& m = tv.merge_of(node);
  int first = m.a, second = m.b;
  if (smallest_label(tv, second) < smallest_label(tv, first)) std::swap(first, second);
  collect_leaves(tv, first, out);
  collect_leaves(tv, second, out);
}

bool needs_quoting(const std::string& label) {
  for (char c : label) {
    if (c == ',' || c == '(' || c == ')' || c == ':' || c == ';' || c == '\'' || c == '[' ||
        c == ']' || c == ' ' || c == '\t') {
      return true;
    }
  }
  return label.empty();
}

std::string newick_label(const std::string& label) {
  if (!needs_quoting(label)) return label;
  std::string out = "'";
  for (char c : label) {
    if (c == '\'') out += "''";
    else out.push_back(c);
  }
  out += "'";
  return out;
}

void write_newick(const TreeView& tv, int node, double parent_height, std::ostringstream& os) {
  if (tv.is_leaf(node)) {
    os << newick_label(tv.tree->labels[static_cast<std::size_t>(node)]);
  } else {
    const Merge& m = tv.merge_of(node);
    int first = m.a, second = m.b;
    if (smallest_label(tv, second) < smallest_label(tv, first)) std::swap(first, second);
    os << '(';
    write_newick(tv, first, m.height, os);
    os << ',';
    write_newick(tv, second, m.height, os);
    os << ')';
  }
  os << ':' << parent_height - tv.height(node);
}

}  // namespace

std::vector<std::string> leaf_order(const Dendrogram& tree) {
  if (tree.labels.empty()) return {};
  if (tree.labels.size() == 1) return tree.labels;
  if (tree.merges.size() + 1 != tree.labels.size()) {
    throw std::invalid_argument("dendrogram has wrong number of merges");
  }
  const TreeView tv{&tree, static_cast<int>(tree.labels.size())};
  const int root = tv.n + static_cast<int>(tree.merges.size()) - 1;
  std::vector<std::string> out;
  out.reserve(tree.labels.size());
  collect_leaves(tv, root, out);
  return out;
}

std::string export_newick(const Dendrogram& tree) {
  if (tree.labels.empty()) throw std::invalid_argument("empty dendrogram");
  std::ostringstream os;
  os << std::setprecision(17);
  if (tree.labels.size() == 1) {
    os << newick_label(tree.labels[0]) << ";";
    return os.str();
  }
  if (tree.merges.size() + 1 != tree.labels.size()) {
    throw std::invalid_argument("dendrogram has wrong number of merges");
  }
  const TreeView tv{&tree, static_cast<int>(tree.labels.size())};
  const int root = tv.n + static_cast<int>(tree.merges.size()) - 1;
  const Merge& m = tv.merge_of(root);
  int first = m.a, second = m.b;
  if (smallest_label(tv, second) < smallest_label(tv, first)) std::swap(first, second);
  os << '(';
  write_newick(tv, first, m.height, os);
  os << ',';
  write_newick(tv, second, m.height, os);
  os << ");";
  return os.str();
}

namespace {

struct NewickParser {
  const std::string& s;
  std::size_t pos = 0;

  struct Node {
    std::string label;
    double branch = 0.0;
    int left = -1, right = -1;  // indices into the node pool
    double height = 0.0;
    std::vector<int> leaves;
  };
  std::vector<Node> pool;

  explicit NewickParser(const std::string& text) : s(text) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("newick parse error at position " + std::to_string(pos) + ": " + what);
  }

  char peek() const { return pos < s.size() ? s[pos] : '\0'; }

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\n' || s[pos] == '\t')) ++pos;
  }

  std::string parse_label() {
    skip_ws();
    std::string out;
    if (peek() == '\'') {
      ++pos;
      for (;;) {
        if (pos >= s.size()) fail("unterminated quoted label");
        if (s[pos] == '\'') {
          if (pos + 1 < s.size() && s[pos + 1] == '\'') {
            out.push_back('\'');
            pos += 2;
          } else {
            ++pos;
            break;
          }
        } else {
          out.push_back(s[pos++]);
        }
      }
      return out;
    }
    while (pos < s.size() && s[pos] != ':' && s[pos] != ',' && s[pos] != ')' && s[pos] != ';' &&
           s[pos] != '(') {
      out.push_back(s[pos++]);
    }
    return out;
  }

  double parse_branch() {
    skip_ws();
    if (peek() != ':') return 0.0;
    ++pos;
    std::size_t consumed = 0;
    const double v = std::stod(s.substr(pos), &consumed);
    pos += consumed;
    return v;
  }

  int parse_node() {
    skip_ws();
    Node node;
    if (peek() == '(') {
      ++pos;
      node.left = parse_node();
      skip_ws();
      if (peek() != ',') fail("expected ','");
      ++pos;
      node.right = parse_node();
      skip_ws();
      if (peek() != ')') fail("expected ')'");
      ++pos;
      node.label = parse_label();  // optional internal label
    } else {
      node.label = parse_label();
      if (node.label.empty()) fail("expected a label");
    }
    node.branch = parse_branch();
    pool.push_back(node);
    return static_cast<int>(pool.size() - 1);
  }
};

}  // namespace

Dendrogram parse_newick(const std::string& text) {
  NewickParser parser(text);
  const int root = parser.parse_node();
  parser.skip_ws();
  if (parser.peek() != ';') parser.fail("expected ';'");

  auto& pool = parser.pool;
  Dendrogram tree;

  // Leaf labels in first-appearance order; heights bottom-up from branches.
  for (auto& node : pool) {
    if (node.left < 0) {
      node.height = 0.0;
      node.leaves = {static_cast<int>(tree.labels.size())};
      tree.labels.push_back(node.label);
    }
  }
  // pool is in post-order (children pushed before parents).
  std::vector<int> internal_order;
  for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
    auto& node = pool[static_cast<std::size_t>(i)];
    if (node.left < 0) continue;
    const auto& l = pool[static_cast<std::size_t>(node.left)];
    const auto& r = pool[static_cast<std::size_t>(node.right)];
    node.height = std::max(l.height + l.branch, r.height + r.branch);
    node.leaves = l.leaves;
    node.leaves.insert(node.leaves.end(), r.leaves.begin(), r.leaves.end());
    internal_order.push_back(i);
  }
  if (internal_order.empty()) {
    if (root >= 0 && !pool.empty() && pool[static_cast<std::size_t>(root)].left < 0) {
      return tree;  // single leaf
    }
    throw std::runtime_error("newick: no internal nodes");
  }
  // Merges sorted by height (stable on the post-order).
  std::stable_sort(internal_order.begin(), internal_order.end(), [&](int a, int b) {
    return pool[static_cast<std::size_t>(a)].height < pool[static_cast<std::size_t>(b)].height;
  });
  const int n = static_cast<int>(tree.labels.size());
  std::vector<int> merge_id(pool.size(), -1);
  for (std::size_t k = 0; k < internal_order.size(); ++k) {
    const int idx = internal_order[k];
    auto& node = pool[static_cast<std::size_t>(idx)];
    auto child_node_id = [&](int child) {
      const auto& c = pool[static_cast<std::size_t>(child)];
      if (c.left < 0) return c.leaves[0];
      return n + merge_id[static_cast<std::size_t>(child)];
    };
    Merge m;
    m.a = child_node_id(node.left);
    m.b = child_node_id(node.right);
    if (m.a > m.b) std::swap(m.a, m.b);
    m.height = node.height;
    m.size = static_cast<int>(node.leaves.size());
    merge_id[static_cast<std::size_t>(idx)] = static_cast<int>(k);
    tree.merges.push_back(m);
  }
  return tree;
}

}  // namespace phonodist::cluster
