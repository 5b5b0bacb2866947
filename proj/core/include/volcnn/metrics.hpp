#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "volcnn/data.hpp"
#include "volcnn/rng.hpp"

namespace volcnn {

double accuracy(std::span<const int> preds, std::span<const int> labels);

/// Unweighted mean recall over the classes present in `labels`. Absent
/// classes are skipped with a warning.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels,
                         int num_classes = kNumClasses);

using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;
/// [true label][predicted].
ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocCurve {
  double auc = 0.0;
  /// (0,0) at threshold +inf, one point per distinct score in descending order
  /// (predict positive when score >= threshold), then (1,1) at -inf.
  std::vector<RocPoint> points;
};

/// Binary ROC. `positive` holds 0/1. AUC is the Mann-Whitney statistic with
/// half credit for ties. Throws DataError(kBadValue) unless both classes occur.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> positive);

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

struct MulticlassAuc {
  std::array<double, kNumClasses> per_class{};  // NaN when the class is absent from labels
  double micro = 0.0;
  double macro = 0.0;
  std::array<RocCurve, kNumClasses> curves;
};

/// probs: N rows of class probabilities, each summing to 1 within 1e-4.
/// Per class: one-vs-rest ROC. Macro: mean over defined classes. Micro: one
/// ROC over all N*3 (probability, is-true-class) pairs.
MulticlassAuc multiclass_auc(std::span<const std::array<double, kNumClasses>> probs,
                             std::span<const int> labels);

struct SampleRecord {
  std::string subject_id;
  int label = 0;
  std::array<double, kNumClasses> probs{};
  int pred = 0;
};

/// nullopt marks a resample on which the metric is undefined.
using RecordMetric = std::function<std::optional<double>(std::span<const SampleRecord>)>;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct BootstrapOptions {
  int n_resamples = 1000;
  double alpha = 0.05;
  /// Undefined resamples are redrawn; more than this many redraws in total
  /// is an error.
  int max_redraws = 10000;
};

/// Percentile interval at alpha/2 and 1-alpha/2 (linear interpolation between
/// order statistics). Resample i draws from rng.split(i).
Interval bootstrap_ci(std::span<const SampleRecord> records, const RecordMetric& metric,
                      const BootstrapOptions& options, const Rng& rng);

enum class Headline { kAccuracy, kBalancedAccuracy, kMicroAuc, kMacroAuc };
inline constexpr std::array<Headline, 4> kHeadlines = {
    Headline::kAccuracy, Headline::kBalancedAccuracy, Headline::kMicroAuc, Headline::kMacroAuc};
std::string_view to_string(Headline h);

/// Headline metric as a bootstrap-ready function. Balanced accuracy and macro
/// AUC are undefined on resamples that lose a class present in `reference`.
RecordMetric headline_metric(Headline h, std::span<const SampleRecord> reference);

struct EvalReport {
  std::string split;
  std::size_t n = 0;
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  std::array<double, kNumClasses> auc_per_class{};
  double micro_auc = 0.0;
  double macro_auc = 0.0;
  std::array<Interval, 4> ci{};  // indexed like kHeadlines
  int n_resamples = 0;
  double alpha = 0.0;
  ConfusionMatrix confusion{};
  std::array<std::vector<RocPoint>, kNumClasses> roc;
  std::vector<SampleRecord> records;

  double headline(Headline h) const;
};

EvalReport make_report(std::vector<SampleRecord> records, const std::string& split,
                       const BootstrapOptions& options, const Rng& rng);

/// JSON with keys split, n, accuracy, balanced_accuracy, auc_per_class
/// {CN,MCI,AD}, micro_auc, macro_auc, ci {<metric>: [lo, hi]}, n_resamples,
/// alpha, confusion. Undefined values are written as null.
std::string report_to_json(const EvalReport& report);
void write_report(const std::filesystem::path& path, const EvalReport& report);

/// Header subject_id,label,p_cn,p_mci,p_ad,pred.
void write_logits_csv(const std::filesystem::path& path, std::span<const SampleRecord> records);

/// Writes <prefix>_CN.csv, <prefix>_MCI.csv, <prefix>_AD.csv with header
/// fpr,tpr,threshold. Returns the paths written.
std::vector<std::filesystem::path> export_roc(const EvalReport& report,
                                              const std::filesystem::path& prefix);

/// The four headline metrics with their intervals as a small text table.
std::string format_headline(const EvalReport& report);

}  // namespace volcnn
