#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mart/common.hpp"

namespace mart::hac {

// One clip span in the hierarchy. Spans are index views into the root
// buffer; containment is structural, no audio is copied.
struct ClipNode {
  int level = 0;
  size_t index = 0;
  long start = 0;
  long end = 0;

  long length() const { return end - start; }
};

// M-ary hierarchy of clip spans: level n holds M^n nodes, node (n, m) spans
// exactly the union of its children (n+1, M*m .. M*m+M-1), and the nodes of
// every level tile the root span.
struct ClipTree {
  size_t branching = 2;                      // M
  size_t depth = 4;                          // N levels
  std::vector<std::vector<ClipNode>> levels; // levels[n].size() == M^n

  const ClipNode& node(int level, size_t index) const { return levels[level][index]; }
  const ClipNode& root() const { return levels[0][0]; }

  std::span<const ClipNode> children_of(int level, size_t index) const {
    return std::span<const ClipNode>(levels[level + 1]).subspan(index * branching, branching);
  }

  size_t total_nodes() const {
    size_t n = 0;
    for (const auto& lv : levels) n += lv.size();
    return n;
  }

  size_t leaf_count() const { return levels.back().size(); }
};

// Deterministically partitions [0, root_len) into an M-ary tree of N
// levels. When a span does not divide evenly the leftmost siblings each
// receive one extra sample. Requires root_len >= M^(N-1) * min_leaf_len.
ClipTree build_tree(long root_len, size_t branching, size_t depth, long min_leaf_len = 1);

// One whole node paired with its M children.
struct PartWholePair {
  int whole_level = 0;
  size_t whole_index = 0;
};

// Every internal node with its children, grouped by level, in
// (level, index) order; pair count = sum over n < N-1 of M^n.
std::vector<PartWholePair> enumerate_pairs(const ClipTree& tree);

// Duration ratio len(part)/len(whole) in (0, 1]; the part must be a direct
// child of the whole.
double clip_len_ratio(const ClipNode& part, const ClipNode& whole, size_t branching);

}  // namespace mart::hac
