#include "mart/hac.hpp"

namespace mart::hac {

namespace {

long checked_pow(size_t base, size_t exp) {
  long r = 1;
  for (size_t i = 0; i < exp; ++i) {
    if (r > (1L << 40)) throw DomainError("build_tree: M^(N-1) overflows a sane span");
    r *= static_cast<long>(base);
  }
  return r;
}

}  // namespace

ClipTree build_tree(long root_len, size_t branching, size_t depth, long min_leaf_len) {
  if (branching < 2) throw DomainError("build_tree: branching factor must be >= 2");
  if (depth < 1) throw DomainError("build_tree: level count must be >= 1");
  if (min_leaf_len < 1) throw DomainError("build_tree: min_leaf_len must be >= 1");
  const long leaves = checked_pow(branching, depth - 1);
  const long required = leaves * min_leaf_len;
  if (root_len < required)
    throw DomainError("build_tree: root of " + std::to_string(root_len) +
                      " samples is too short for M=" + std::to_string(branching) +
                      ", N=" + std::to_string(depth) + "; minimum is " +
                      std::to_string(required));

  ClipTree tree;
  tree.branching = branching;
  tree.depth = depth;
  tree.levels.resize(depth);
  tree.levels[0].push_back(ClipNode{0, 0, 0, root_len});
  for (size_t n = 1; n < depth; ++n) {
    tree.levels[n].reserve(tree.levels[n - 1].size() * branching);
    for (const ClipNode& parent : tree.levels[n - 1]) {
      const long len = parent.length();
      const long base = len / static_cast<long>(branching);
      const long rem = len % static_cast<long>(branching);
      long cursor = parent.start;
      for (size_t m = 0; m < branching; ++m) {
        const long this_len = base + (static_cast<long>(m) < rem ? 1 : 0);
        ClipNode child;
        child.level = static_cast<int>(n);
        child.index = parent.index * branching + m;
        child.start = cursor;
        child.end = cursor + this_len;
        cursor = child.end;
        tree.levels[n].push_back(child);
      }
    }
  }
  return tree;
}

std::vector<PartWholePair> enumerate_pairs(const ClipTree& tree) {
  std::vector<PartWholePair> pairs;
  for (size_t n = 0; n + 1 < tree.depth; ++n)
    for (size_t m = 0; m < tree.levels[n].size(); ++m)
      pairs.push_back(PartWholePair{static_cast<int>(n), m});
  return pairs;
}

double clip_len_ratio(const ClipNode& part, const ClipNode& whole, size_t branching) {
  const bool is_child = part.level == whole.level + 1 &&
                        part.index / branching == whole.index &&
                        part.start >= whole.start && part.end <= whole.end;
  if (!is_child)
    throw DomainError("clip_len_ratio: node (" + std::to_string(part.level) + "," +
                      std::to_string(part.index) + ") is not a child of (" +
                      std::to_string(whole.level) + "," + std::to_string(whole.index) + ")");
  return static_cast<double>(part.length()) / static_cast<double>(whole.length());
}

}  // namespace mart::hac
