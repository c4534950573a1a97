#pragma once

#include <string>
#include <vector>

#include "phonodist/transport.hpp"

namespace phonodist::cluster {

struct Merge {
  int a = 0;  // node ids: 0..n-1 leaves, n+k is the k-th merge
  int b = 0;
  double height = 0.0;
  int size = 0;  // leaves under the merged node
};

struct Dendrogram {
  std::vector<std::string> labels;  // leaf labels, ids 0..n-1
  std::vector<Merge> merges;        // exactly n-1 entries, heights non-decreasing
};

enum class WardMode {
  squared,  // Lance-Williams on squared dissimilarities, heights reported as sqrt
  direct,   // Lance-Williams on the dissimilarities as given
};

// Agglomerative Ward clustering via the Lance-Williams recurrence. Ties are
// broken lexicographically on the (smallest-member-label, smallest-member-label)
// pair of the candidate clusters. Throws on NaN input or non-monotone merges.
Dendrogram ward_linkage(const transport::DistanceMatrix& matrix, WardMode mode = WardMode::squared);

// Left-to-right traversal order; the child subtree containing the
// lexicographically smallest label goes first.
std::vector<std::string> leaf_order(const Dendrogram& tree);

// Newick text with branch lengths (parent height - child height). Labels are
// single-quoted when they contain structural characters.
std::string export_newick(const Dendrogram& tree);

// Parses a Newick string produced by export_newick back into a dendrogram
// (binary trees with branch lengths).
Dendrogram parse_newick(const std::string& text);

}  // namespace phonodist::cluster
