#include <algorithm>
#include <cmath>
#include <numeric>

#include "volcnn/metrics.hpp"

namespace volcnn {

namespace {

void check_pairs(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                     std::to_string(b));
  }
  if (a == 0) throw DataError(DataErrorKind::kBadValue, std::string(what) + ": empty input");
}

void check_label(int l) {
  if (l < 0 || l >= kNumClasses) {
    throw DataError(DataErrorKind::kBadValue, "class index " + std::to_string(l) + " out of range");
  }
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pairs(preds.size(), labels.size(), "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels, int num_classes) {
  check_pairs(preds.size(), labels.size(), "balanced_accuracy");
  std::vector<std::size_t> total(static_cast<std::size_t>(num_classes)), hit(total.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) check_label(labels[i]);
    ++total[static_cast<std::size_t>(labels[i])];
    hit[static_cast<std::size_t>(labels[i])] += preds[i] == labels[i];
  }
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < total.size(); ++c) {
    if (total[c] == 0) {
      warn("balanced accuracy: class " + std::to_string(c) + " absent from labels, skipped");
      continue;
    }
    sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    ++present;
  }
  return sum / present;
}

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels) {
  check_pairs(preds.size(), labels.size(), "confusion_matrix");
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check_label(labels[i]);
    check_label(preds[i]);
    ++m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  return m;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const int> positive) {
  check_pairs(scores.size(), positive.size(), "roc_auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::uint64_t p = 0, n = 0;
  for (int v : positive) (v ? p : n) += 1;
  if (p == 0 || n == 0) {
    throw DataError(DataErrorKind::kBadValue, "roc_auc: labels contain a single class, AUC undefined");
  }

  RocCurve out;
  out.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  // Walking scores from high to low: each positive in a tie group beats every
  // negative seen later and ties with the negatives of its own group.
  std::uint64_t tp = 0, fp = 0, twice_concordant = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    const double s = scores[order[i]];
    while (j < order.size() && scores[order[j]] == s) {
      (positive[order[j]] ? gp : gn) += 1;
      ++j;
    }
    // positives above this group beat its negatives; pairs inside it are ties
    twice_concordant += 2 * tp * gn + gp * gn;
    tp += gp;
    fp += gn;
    out.points.push_back({static_cast<double>(fp) / static_cast<double>(n),
                          static_cast<double>(tp) / static_cast<double>(p), s});
    i = j;
  }
  out.points.push_back({1.0, 1.0, -std::numeric_limits<double>::infinity()});
  out.auc = static_cast<double>(twice_concordant) /
            (2.0 * static_cast<double>(p) * static_cast<double>(n));
  return out;
}

MulticlassAuc multiclass_auc(std::span<const std::array<double, kNumClasses>> probs,
                             std::span<const int> labels) {
  check_pairs(probs.size(), labels.size(), "multiclass_auc");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    check_label(labels[i]);
    const double s = std::accumulate(probs[i].begin(), probs[i].end(), 0.0);
    if (std::abs(s - 1.0) > 1e-4) {
      throw DataError(DataErrorKind::kBadValue,
                      "probability row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  MulticlassAuc out;
  double sum = 0.0;
  int defined = 0;
  std::vector<double> scores(probs.size()), pooled_scores;
  std::vector<int> pos(probs.size()), pooled_pos;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][ci];
      pos[i] = labels[i] == c;
    }
    pooled_scores.insert(pooled_scores.end(), scores.begin(), scores.end());
    pooled_pos.insert(pooled_pos.end(), pos.begin(), pos.end());
    const bool has_pos = std::find(pos.begin(), pos.end(), 1) != pos.end();
    const bool has_neg = std::find(pos.begin(), pos.end(), 0) != pos.end();
    if (!has_pos || !has_neg) {
      out.per_class[ci] = kUndefined;
      continue;
    }
    out.curves[ci] = roc_auc(scores, pos);
    out.per_class[ci] = out.curves[ci].auc;
    sum += out.per_class[ci];
    ++defined;
  }
  if (defined < kNumClasses) {
    warn("macro AUC averaged over " + std::to_string(defined) + " classes with defined AUC");
  }
  out.macro = defined > 0 ? sum / defined : kUndefined;
  out.micro = roc_auc(pooled_scores, pooled_pos).auc;
  return out;
}

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Interval bootstrap_ci(std::span<const SampleRecord> records, const RecordMetric& metric,
                      const BootstrapOptions& options, const Rng& rng) {
  if (options.n_resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw ConfigError("bootstrap alpha must be in (0,1)");
  if (records.empty()) throw DataError(DataErrorKind::kBadValue, "bootstrap: no records");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(options.n_resamples));
  std::vector<SampleRecord> sample(records.size());
  int redraws = 0;
  for (int i = 0; i < options.n_resamples; ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    while (true) {
      for (auto& s : sample) s = records[static_cast<std::size_t>(r.below(records.size()))];
      const std::optional<double> v = metric(sample);
      if (v && std::isfinite(*v)) {
        values.push_back(*v);
        break;
      }
      if (++redraws > options.max_redraws) {
        throw DataError(DataErrorKind::kBadValue,
                        "bootstrap: metric undefined on " + std::to_string(redraws) +
                            " resamples (cap " + std::to_string(options.max_redraws) +
                            "); too few records per class?");
      }
    }
  }
  std::sort(values.begin(), values.end());
  return {percentile(values, options.alpha / 2.0), percentile(values, 1.0 - options.alpha / 2.0)};
}

std::string_view to_string(Headline h) {
  switch (h) {
    case Headline::kAccuracy: return "accuracy";
    case Headline::kBalancedAccuracy: return "balanced_accuracy";
    case Headline::kMicroAuc: return "micro_auc";
    case Headline::kMacroAuc: return "macro_auc";
  }
  return "?";
}

namespace {

struct Columns {
  std::vector<int> labels, preds;
  std::vector<std::array<double, kNumClasses>> probs;
  std::array<bool, kNumClasses> present{};
};

Columns columns(std::span<const SampleRecord> records) {
  Columns c;
  for (const auto& r : records) {
    c.labels.push_back(r.label);
    c.preds.push_back(r.pred);
    c.probs.push_back(r.probs);
    c.present[static_cast<std::size_t>(r.label)] = true;
  }
  return c;
}

}  // namespace

RecordMetric headline_metric(Headline h, std::span<const SampleRecord> reference) {
  const auto present = columns(reference).present;
  const bool need_all = h == Headline::kBalancedAccuracy || h == Headline::kMacroAuc;
  return [h, present, need_all](std::span<const SampleRecord> rs) -> std::optional<double> {
    const Columns c = columns(rs);
    if (need_all && c.present != present) return std::nullopt;
    switch (h) {
      case Headline::kAccuracy: return accuracy(c.preds, c.labels);
      case Headline::kBalancedAccuracy: return balanced_accuracy(c.preds, c.labels);
      case Headline::kMicroAuc:
      case Headline::kMacroAuc: {
        int n_present = 0;
        for (bool b : c.present) n_present += b;
        if (n_present < 2) return std::nullopt;
        const MulticlassAuc m = multiclass_auc(c.probs, c.labels);
        return h == Headline::kMicroAuc ? m.micro : m.macro;
      }
    }
    return std::nullopt;
  };
}

double EvalReport::headline(Headline h) const {
  switch (h) {
    case Headline::kAccuracy: return accuracy;
    case Headline::kBalancedAccuracy: return balanced_accuracy;
    case Headline::kMicroAuc: return micro_auc;
    case Headline::kMacroAuc: return macro_auc;
  }
  return kUndefined;
}

EvalReport make_report(std::vector<SampleRecord> records, const std::string& split,
                       const BootstrapOptions& options, const Rng& rng) {
  if (records.empty()) throw DataError(DataErrorKind::kBadValue, "no samples to evaluate");
  EvalReport r;
  r.split = split;
  r.n = records.size();
  const Columns c = columns(records);
  r.accuracy = accuracy(c.preds, c.labels);
  r.balanced_accuracy = balanced_accuracy(c.preds, c.labels);
  r.confusion = confusion_matrix(c.preds, c.labels);
  int n_present = 0;
  for (bool b : c.present) n_present += b;
  const bool auc_defined = n_present >= 2;
  if (auc_defined) {
    MulticlassAuc m = multiclass_auc(c.probs, c.labels);
    r.auc_per_class = m.per_class;
    r.micro_auc = m.micro;
    r.macro_auc = m.macro;
    for (std::size_t k = 0; k < kNumClasses; ++k) r.roc[k] = std::move(m.curves[k].points);
  } else {
    warn("only one class present: AUCs undefined");
    r.auc_per_class.fill(kUndefined);
    r.micro_auc = r.macro_auc = kUndefined;
  }
  r.n_resamples = options.n_resamples;
  r.alpha = options.alpha;
  const Rng boot = rng.split(Stream::kBootstrap);
  // resamples that drop a class would warn on every draw
  struct Silence {
    bool was = warnings_enabled();
    Silence() { set_warnings_enabled(false); }
    ~Silence() { set_warnings_enabled(was); }
  } silence;
  for (std::size_t k = 0; k < kHeadlines.size(); ++k) {
    const Headline h = kHeadlines[k];
    if (!auc_defined && (h == Headline::kMicroAuc || h == Headline::kMacroAuc)) {
      r.ci[k] = {kUndefined, kUndefined};
      continue;
    }
    r.ci[k] = bootstrap_ci(records, headline_metric(h, records), options, boot.split(k));
  }
  r.records = std::move(records);
  return r;
}

}  // namespace volcnn
