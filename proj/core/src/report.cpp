#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "volcnn/metrics.hpp"

namespace volcnn {

namespace fs = std::filesystem;

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(DataErrorKind::kIo, "cannot write " + path.string());
  return os;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["split"] = r.split;
  j["n"] = r.n;
  j["accuracy"] = num(r.accuracy);
  j["balanced_accuracy"] = num(r.balanced_accuracy);
  nlohmann::ordered_json per_class;
  for (std::size_t c = 0; c < kNumClasses; ++c) per_class[std::string(kClassNames[c])] = num(r.auc_per_class[c]);
  j["auc_per_class"] = per_class;
  j["micro_auc"] = num(r.micro_auc);
  j["macro_auc"] = num(r.macro_auc);
  nlohmann::ordered_json ci;
  for (std::size_t k = 0; k < kHeadlines.size(); ++k) {
    ci[std::string(to_string(kHeadlines[k]))] = {num(r.ci[k].lo), num(r.ci[k].hi)};
  }
  j["ci"] = ci;
  j["n_resamples"] = r.n_resamples;
  j["alpha"] = r.alpha;
  j["confusion"] = r.confusion;
  return j.dump(2) + "\n";
}

void write_report(const fs::path& path, const EvalReport& report) {
  auto os = open_out(path);
  os << report_to_json(report);
  if (!os) throw DataError(DataErrorKind::kIo, "write failed for " + path.string());
}

void write_logits_csv(const fs::path& path, std::span<const SampleRecord> records) {
  auto os = open_out(path);
  os << "subject_id,label,p_cn,p_mci,p_ad,pred\n";
  for (const auto& r : records) {
    os << r.subject_id << ',' << kClassNames[static_cast<std::size_t>(r.label)];
    for (double p : r.probs) os << ',' << fmt(p);
    os << ',' << kClassNames[static_cast<std::size_t>(r.pred)] << '\n';
  }
  if (!os) throw DataError(DataErrorKind::kIo, "write failed for " + path.string());
}

std::vector<fs::path> export_roc(const EvalReport& report, const fs::path& prefix) {
  std::vector<fs::path> written;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (report.roc[c].empty()) continue;
    fs::path path = prefix;
    path += "_" + std::string(kClassNames[c]) + ".csv";
    auto os = open_out(path);
    os << "fpr,tpr,threshold\n";
    for (const RocPoint& p : report.roc[c]) {
      os << fmt(p.fpr) << ',' << fmt(p.tpr) << ',' << fmt(p.threshold) << '\n';
    }
    if (!os) throw DataError(DataErrorKind::kIo, "write failed for " + path.string());
    written.push_back(path);
  }
  return written;
}

std::string format_headline(const EvalReport& r) {
  auto cell = [](double v, Interval ci) {
    char buf[64];
    if (!std::isfinite(v)) return std::string("-");
    std::snprintf(buf, sizeof buf, "%.1f%% [%.1f, %.1f]", 100 * v, 100 * ci.lo, 100 * ci.hi);
    return std::string(buf);
  };
  char line[256];
  std::string out;
  std::snprintf(line, sizeof line, "%-8s %-22s %-22s %-22s %-22s\n", "split", "Accuracy",
                "Balanced Acc", "Micro-AUC", "Macro-AUC");
  out += line;
  std::snprintf(line, sizeof line, "%-8s %-22s %-22s %-22s %-22s\n", r.split.c_str(),
                cell(r.accuracy, r.ci[0]).c_str(), cell(r.balanced_accuracy, r.ci[1]).c_str(),
                cell(r.micro_auc, r.ci[2]).c_str(), cell(r.macro_auc, r.ci[3]).c_str());
  out += line;
  std::string per = "per-class AUC:";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    char buf[48];
    if (std::isfinite(r.auc_per_class[c])) {
      std::snprintf(buf, sizeof buf, " %s %.4f", kClassNames[c].data(), r.auc_per_class[c]);
    } else {
      std::snprintf(buf, sizeof buf, " %s -", kClassNames[c].data());
    }
    per += buf;
  }
  return out + per + "\n";
}

}  // namespace volcnn
