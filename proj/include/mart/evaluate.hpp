#pragma once

#include <span>
#include <string>
#include <vector>

#include "mart/common.hpp"
#include "mart/synth.hpp"

namespace mart::eval {

// One row per track, manifest order.
struct EmbeddingSet {
  size_t dim = 0;
  std::vector<std::pair<std::string, std::vector<float>>> rows;  // id -> vector

  const std::vector<float>& row(size_t i) const { return rows[i].second; }
};

// MARTEMB1 container: magic, u32 dim, then records
// `id_len:u32, id:utf8, data:f32[dim]`, little-endian.
void write_embeddings(const std::string& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::string& path);

// Mann-Whitney ROC-AUC: concordant-pair fraction with ties counted 1/2.
// Requires at least one positive and one negative label.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Average precision: mean over relevant items of precision at their rank,
// ranking by descending score with ties broken by ascending index.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

// AP of a ranked relevance list (1 = relevant), same definition.
double average_precision(std::span<const int> ranked_relevance);

struct RetrievalMetrics {
  double map = 0.0;
  double p_at_10 = 0.0;
  double mr1 = 0.0;
  size_t queries = 0;
  size_t skipped = 0;  // singleton cliques
};

// Cover-song style retrieval: each track queries all others by cosine
// similarity (ties by ascending track id); relevance = same clique.
// Cliques of size 1 are skipped with a warning on stderr.
RetrievalMetrics retrieval_eval(const EmbeddingSet& embeddings,
                                const std::vector<std::string>& cliques);

struct ProbeSplit {
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  uint64_t seed = 0;
};

struct ProbeResult {
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  size_t tags_scored = 0;
  size_t tags_skipped = 0;
  size_t epochs_ran = 0;
};

// Single affine layer + sigmoid per tag trained with binary cross-entropy
// on frozen embeddings (Adam, lr 1e-3, full batch), early-stopped on
// validation ROC-AUC with the given patience. Metrics are macro-averaged
// over tags present in the test split; tags with a single class in the
// test split are excluded with a warning.
ProbeResult linear_probe(const EmbeddingSet& embeddings,
                         const std::vector<std::vector<std::string>>& track_tags,
                         const ProbeSplit& split, size_t max_epochs = 200,
                         size_t patience = 10);

}  // namespace mart::eval
