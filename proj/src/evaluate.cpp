#include "mart/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>

#include "mart/adam.hpp"
#include "mart/ops.hpp"

namespace mart::eval {

namespace {

constexpr char kEmbMagic[8] = {'M', 'A', 'R', 'T', 'E', 'M', 'B', '1'};

[[noreturn]] void fail(const std::string& path, size_t offset, const std::string& what) {
  throw ParseError("read_embeddings: " + path + ": " + what + " at byte offset " +
                   std::to_string(offset));
}

}  // namespace

void write_embeddings(const std::string& path, const EmbeddingSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_embeddings: cannot open " + path + " for writing");
  out.write(kEmbMagic, 8);
  const uint32_t dim = static_cast<uint32_t>(set.dim);
  out.write(reinterpret_cast<const char*>(&dim), 4);
  for (const auto& [id, vec] : set.rows) {
    if (vec.size() != set.dim)
      throw DimensionError("write_embeddings: row '" + id + "' has " +
                           std::to_string(vec.size()) + " values, expected " +
                           std::to_string(set.dim));
    const uint32_t len = static_cast<uint32_t>(id.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(id.data(), len);
    out.write(reinterpret_cast<const char*>(vec.data()), vec.size() * 4);
  }
  if (!out) throw IoError("write_embeddings: write failed for " + path);
}

EmbeddingSet read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_embeddings: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12) fail(path, buf.size(), "file too short for header");
  if (std::memcmp(buf.data(), kEmbMagic, 8) != 0) fail(path, 0, "foreign magic bytes");
  EmbeddingSet set;
  uint32_t dim;
  std::memcpy(&dim, buf.data() + 8, 4);
  set.dim = dim;
  if (dim == 0) fail(path, 8, "zero dimension");
  size_t pos = 12;
  while (pos < buf.size()) {
    if (pos + 4 > buf.size()) fail(path, pos, "truncated id length");
    uint32_t len;
    std::memcpy(&len, buf.data() + pos, 4);
    pos += 4;
    if (pos + len + dim * 4 > buf.size()) fail(path, pos, "truncated record");
    std::string id(reinterpret_cast<const char*>(buf.data() + pos), len);
    pos += len;
    std::vector<float> vec(dim);
    std::memcpy(vec.data(), buf.data() + pos, dim * 4);
    pos += dim * 4;
    set.rows.emplace_back(std::move(id), std::move(vec));
  }
  return set;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("roc_auc: score/label length mismatch");
  size_t pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw DomainError("roc_auc: undefined metric, need both classes (got " +
                      std::to_string(pos) + " positives, " + std::to_string(neg) +
                      " negatives)");
  // average ranks over ties, then the Mann-Whitney statistic
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0;
  for (size_t k = 0; k < labels.size(); ++k)
    if (labels[k]) rank_sum += rank[k];
  const double u = rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(std::span<const int> ranked_relevance) {
  size_t total_relevant = 0;
  for (int r : ranked_relevance) total_relevant += r ? 1 : 0;
  if (total_relevant == 0)
    throw DomainError("average_precision: no relevant items in the list");
  double ap = 0;
  size_t hits = 0;
  for (size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (!ranked_relevance[k]) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return ap / static_cast<double>(total_relevant);
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("pr_auc: score/label length mismatch");
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;  // deterministic tie-break by ascending index
  });
  std::vector<int> ranked(scores.size());
  for (size_t k = 0; k < idx.size(); ++k) ranked[k] = labels[idx[k]] ? 1 : 0;
  return average_precision(ranked);
}

RetrievalMetrics retrieval_eval(const EmbeddingSet& embeddings,
                                const std::vector<std::string>& cliques) {
  const size_t n = embeddings.rows.size();
  if (cliques.size() != n)
    throw DimensionError("retrieval_eval: clique list does not match embedding rows");
  std::vector<size_t> clique_sizes;
  std::vector<size_t> clique_of(n);
  {
    std::vector<std::string> names;
    for (size_t i = 0; i < n; ++i) {
      auto it = std::find(names.begin(), names.end(), cliques[i]);
      if (it == names.end()) {
        names.push_back(cliques[i]);
        clique_sizes.push_back(0);
        clique_of[i] = names.size() - 1;
      } else {
        clique_of[i] = static_cast<size_t>(it - names.begin());
      }
      clique_sizes[clique_of[i]] += 1;
    }
  }

  auto cosine = [&](size_t a, size_t b) {
    const auto& u = embeddings.row(a);
    const auto& v = embeddings.row(b);
    double dot = 0, nu = 0, nv = 0;
    for (size_t i = 0; i < u.size(); ++i) {
      dot += static_cast<double>(u[i]) * v[i];
      nu += static_cast<double>(u[i]) * u[i];
      nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0 || nv == 0) throw DomainError("retrieval_eval: zero-norm embedding row");
    return dot / std::sqrt(nu * nv);
  };

  RetrievalMetrics out;
  double map_sum = 0, p10_sum = 0, mr1_sum = 0;
  for (size_t q = 0; q < n; ++q) {
    if (clique_sizes[clique_of[q]] < 2) {
      std::cerr << "retrieval_eval: skipping query '" << embeddings.rows[q].first
                << "' with singleton clique '" << cliques[q] << "'\n";
      out.skipped += 1;
      continue;
    }
    std::vector<size_t> cand;
    cand.reserve(n - 1);
    for (size_t i = 0; i < n; ++i)
      if (i != q) cand.push_back(i);
    std::vector<double> sim(n, 0.0);
    for (size_t i : cand) sim[i] = cosine(q, i);
    std::sort(cand.begin(), cand.end(), [&](size_t a, size_t b) {
      if (sim[a] != sim[b]) return sim[a] > sim[b];
      return embeddings.rows[a].first < embeddings.rows[b].first;
    });
    std::vector<int> rel(cand.size());
    for (size_t k = 0; k < cand.size(); ++k)
      rel[k] = clique_of[cand[k]] == clique_of[q] ? 1 : 0;
    map_sum += average_precision(rel);
    const size_t depth = std::min<size_t>(10, rel.size());
    size_t hits10 = 0;
    for (size_t k = 0; k < depth; ++k) hits10 += rel[k];
    p10_sum += static_cast<double>(hits10) / static_cast<double>(depth);
    size_t first = 0;
    while (first < rel.size() && !rel[first]) ++first;
    mr1_sum += static_cast<double>(first + 1);
    out.queries += 1;
  }
  if (out.queries == 0) throw DomainError("retrieval_eval: no usable queries");
  out.map = map_sum / static_cast<double>(out.queries);
  out.p_at_10 = p10_sum / static_cast<double>(out.queries);
  out.mr1 = mr1_sum / static_cast<double>(out.queries);
  return out;
}

namespace {

struct TagMetrics {
  double auc_sum = 0, ap_sum = 0;
  size_t counted = 0, skipped = 0;
};

// macro average over tags that have both classes in the index set
TagMetrics macro_metrics(const std::vector<std::vector<double>>& scores,
                         const std::vector<std::vector<int>>& labels,
                         const std::vector<size_t>& index_set, bool warn) {
  TagMetrics out;
  const size_t n_tags = scores.size();
  for (size_t t = 0; t < n_tags; ++t) {
    std::vector<double> s;
    std::vector<int> l;
    for (size_t i : index_set) {
      s.push_back(scores[t][i]);
      l.push_back(labels[t][i]);
    }
    size_t pos = 0;
    for (int v : l) pos += v;
    if (pos == 0 || pos == l.size()) {
      if (warn)
        std::cerr << "linear_probe: tag " << t
                  << " has a single class in the split; excluded from the macro average\n";
      out.skipped += 1;
      continue;
    }
    out.auc_sum += roc_auc(s, l);
    out.ap_sum += pr_auc(s, l);
    out.counted += 1;
  }
  return out;
}

}  // namespace

ProbeResult linear_probe(const EmbeddingSet& embeddings,
                         const std::vector<std::vector<std::string>>& track_tags,
                         const ProbeSplit& split, size_t max_epochs, size_t patience) {
  const size_t n = embeddings.rows.size();
  if (track_tags.size() != n)
    throw DimensionError("linear_probe: tag list does not match embedding rows");
  std::vector<std::string> tags;
  for (const auto& ts : track_tags)
    for (const auto& t : ts)
      if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
  if (tags.size() < 2) throw DomainError("linear_probe: need at least 2 distinct tags");
  const size_t n_tags = tags.size();
  const size_t dim = embeddings.dim;

  // multi-hot labels
  std::vector<std::vector<int>> labels(n_tags, std::vector<int>(n, 0));
  for (size_t i = 0; i < n; ++i)
    for (const auto& t : track_tags[i]) {
      const size_t ti =
          static_cast<size_t>(std::find(tags.begin(), tags.end(), t) - tags.begin());
      labels[ti][i] = 1;
    }

  // deterministic split
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split.seed);
  rng.shuffle(order);
  const size_t n_train = std::max<size_t>(1, static_cast<size_t>(n * split.train_fraction));
  const size_t n_val = std::max<size_t>(
      1, static_cast<size_t>(n * split.val_fraction));
  if (n_train + n_val >= n)
    throw ConfigError("linear_probe: split leaves no test tracks");
  std::vector<size_t> train_idx(order.begin(), order.begin() + n_train);
  std::vector<size_t> val_idx(order.begin() + n_train, order.begin() + n_train + n_val);
  std::vector<size_t> test_idx(order.begin() + n_train + n_val, order.end());

  using TF = diff::Tensor<float>;
  // frozen embeddings of the train split
  std::vector<float> xtrain(n_train * dim);
  for (size_t r = 0; r < n_train; ++r)
    for (size_t c = 0; c < dim; ++c) xtrain[r * dim + c] = embeddings.row(train_idx[r])[c];
  TF x = TF::matrix(n_train, dim, std::move(xtrain));
  std::vector<float> ytrain(n_train * n_tags);
  for (size_t r = 0; r < n_train; ++r)
    for (size_t t = 0; t < n_tags; ++t)
      ytrain[r * n_tags + t] = static_cast<float>(labels[t][train_idx[r]]);
  TF y = TF::matrix(n_train, n_tags, std::move(ytrain));

  TF w = TF::zeros({dim, n_tags});
  TF b = TF::zeros({n_tags});
  diff::AdamState<float> adam;
  adam.learning_rate = 1e-3f;
  adam.weight_decay = 0.0f;
  std::vector<diff::Tensor<float>*> params{&w, &b};
  adam.init(params);

  auto predict_scores = [&](const std::vector<size_t>& idx_set) {
    std::vector<std::vector<double>> scores(n_tags, std::vector<double>(n, 0.0));
    for (size_t i : idx_set) {
      const auto& e = embeddings.row(i);
      for (size_t t = 0; t < n_tags; ++t) {
        double z = b[t];
        for (size_t c = 0; c < dim; ++c) z += static_cast<double>(e[c]) * w.at(c, t);
        scores[t][i] = z;  // sigmoid is monotone, ranking metrics see the logit
      }
    }
    return scores;
  };

  double best_val = -1.0;
  std::vector<float> best_w = *w.data, best_b = *b.data;
  size_t since_best = 0;
  ProbeResult result;
  for (size_t epoch = 0; epoch < max_epochs; ++epoch) {
    // full-batch BCE via softplus(z) - y*z, averaged over every cell
    diff::Tape<float> tape;
    tape.watch(w);
    tape.watch(b);
    TF z = diff::add_rowvec(diff::matmul(x, w), b);
    TF losses = diff::sub(diff::softplus(z), diff::mul(y, z));
    TF lossT = diff::mean(losses);
    tape.backward(lossT);
    std::vector<const std::vector<float>*> grads{&tape.grad(w), &tape.grad(b)};
    diff::adam_step(params, grads, adam);
    w.detach();
    b.detach();
    result.epochs_ran = epoch + 1;

    TagMetrics val = macro_metrics(predict_scores(val_idx), labels, val_idx, false);
    const double val_auc = val.counted ? val.auc_sum / val.counted : 0.0;
    if (val_auc > best_val + 1e-9) {
      best_val = val_auc;
      best_w = *w.data;
      best_b = *b.data;
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
  }
  *w.data = best_w;
  *b.data = best_b;

  TagMetrics test = macro_metrics(predict_scores(test_idx), labels, test_idx, true);
  if (test.counted == 0)
    throw DomainError("linear_probe: every tag was single-class in the test split");
  result.roc_auc = test.auc_sum / test.counted;
  result.pr_auc = test.ap_sum / test.counted;
  result.tags_scored = test.counted;
  result.tags_skipped = test.skipped;
  return result;
}

}  // namespace mart::eval
