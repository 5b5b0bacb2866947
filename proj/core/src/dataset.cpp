#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "volcnn/data.hpp"

namespace volcnn {

namespace fs = std::filesystem;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(text) + "' (train|val|test)");
}

int parse_label(std::string_view text) {
  for (int c = 0; c < kNumClasses; ++c) {
    if (text == kClassNames[static_cast<std::size_t>(c)]) return c;
  }
  throw DataError(DataErrorKind::kBadValue, "unknown label '" + std::string(text) + "' (CN|MCI|AD)");
}

fs::path Manifest::resolve(const ManifestRow& row) const {
  const fs::path p(row.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<ManifestRow> Manifest::rows_in(Split split) const {
  std::vector<ManifestRow> out;
  for (const auto& r : rows) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t c = line.find(',', pos);
    out.push_back(line.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos));
    if (c == std::string_view::npos) break;
    pos = c + 1;
  }
  return out;
}

[[noreturn]] void bad_row(std::size_t line_no, const std::string& why) {
  throw DataError(DataErrorKind::kBadManifest, "manifest line " + std::to_string(line_no) + ": " + why);
}

}  // namespace

Manifest parse_manifest(std::string_view csv, const fs::path& base_dir, bool allow_leakage) {
  Manifest m;
  m.base_dir = base_dir;
  std::size_t pos = 0, line_no = 0;
  bool header_seen = false;
  while (pos < csv.size()) {
    std::size_t end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    std::string_view line = csv.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader) {
        bad_row(line_no, "header must be '" + std::string(kManifestHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 5) bad_row(line_no, "expected 5 fields, got " + std::to_string(f.size()));
    ManifestRow row;
    row.subject_id = std::string(f[0]);
    row.path = std::string(f[1]);
    if (row.subject_id.empty() || row.path.empty()) bad_row(line_no, "empty subject_id or path");
    try {
      row.label = parse_label(f[2]);
      row.split = parse_split(f[4]);
    } catch (const Error& e) {
      bad_row(line_no, e.what());
    }
    const std::string age_text(f[3]);
    char* stop = nullptr;
    row.age = std::strtod(age_text.c_str(), &stop);
    if (age_text.empty() || *stop != '\0' || !(row.age >= 0.0 && row.age <= 120.0)) {
      bad_row(line_no, "age '" + age_text + "' is not a number in [0,120]");
    }
    m.rows.push_back(std::move(row));
  }
  if (!header_seen) throw DataError(DataErrorKind::kBadManifest, "manifest is empty");

  const auto leaks = check_leakage(m);
  if (!leaks.empty()) {
    std::string list;
    for (const auto& s : leaks) list += (list.empty() ? "" : ", ") + s;
    if (!allow_leakage) {
      throw DataError(DataErrorKind::kLeakage, "subjects present in more than one split: " + list);
    }
    warn("leakage override: subjects present in more than one split: " + list);
  }
  return m;
}

Manifest load_manifest(const fs::path& path, bool allow_leakage) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataErrorKind::kIo, "cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), allow_leakage);
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(DataErrorKind::kIo, "cannot write " + path.string());
  os << kManifestHeader << '\n';
  char age[32];
  for (const auto& r : manifest.rows) {
    std::snprintf(age, sizeof age, "%.1f", r.age);
    os << r.subject_id << ',' << r.path << ',' << kClassNames[static_cast<std::size_t>(r.label)]
       << ',' << age << ',' << to_string(r.split) << '\n';
  }
  if (!os) throw DataError(DataErrorKind::kIo, "write failed for " + path.string());
}

std::vector<std::string> check_leakage(const Manifest& manifest) {
  std::map<std::string, std::set<Split>> seen;
  for (const auto& r : manifest.rows) seen[r.subject_id].insert(r.split);
  std::vector<std::string> out;
  for (const auto& [s, splits] : seen) {
    if (splits.size() > 1) out.push_back(s);
  }
  return out;
}

SplitCounts count_splits(const Manifest& manifest) {
  SplitCounts c;
  std::set<std::pair<std::string, std::pair<Split, int>>> subjects;
  for (const auto& r : manifest.rows) {
    const auto s = static_cast<std::size_t>(r.split);
    const auto l = static_cast<std::size_t>(r.label);
    ++c.scans[s][l];
    if (subjects.insert({r.subject_id, {r.split, r.label}}).second) ++c.subjects[s][l];
  }
  return c;
}

std::string format_counts(const SplitCounts& c) {
  std::ostringstream os;
  os << "split  class  subjects  scans\n";
  for (Split s : kAllSplits) {
    for (int l = 0; l < kNumClasses; ++l) {
      const auto si = static_cast<std::size_t>(s);
      const auto li = static_cast<std::size_t>(l);
      os << to_string(s) << ' ' << kClassNames[li] << ' ' << c.subjects[si][li] << ' '
         << c.scans[si][li] << '\n';
    }
  }
  return os.str();
}

Manifest subsample(const Manifest& manifest, double rate, Rng& rng) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw ConfigError("subsample rate must be in (0,1], got " + std::to_string(rate));
  }
  if (rate == 1.0) return manifest;
  // Train subjects per class, in order of first appearance.
  std::array<std::vector<std::string>, kNumClasses> by_class;
  std::set<std::string> listed;
  for (const auto& r : manifest.rows) {
    if (r.split == Split::kTrain && listed.insert(r.subject_id).second) {
      by_class[static_cast<std::size_t>(r.label)].push_back(r.subject_id);
    }
  }
  std::set<std::string> keep;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& subjects = by_class[static_cast<std::size_t>(c)];
    if (subjects.empty()) continue;
    const auto n = static_cast<std::size_t>(std::llround(rate * static_cast<double>(subjects.size())));
    if (n == 0) {
      throw DataError(DataErrorKind::kBadValue,
                      "subsample rate " + std::to_string(rate) + " keeps no " +
                          std::string(kClassNames[static_cast<std::size_t>(c)]) + " subjects (of " +
                          std::to_string(subjects.size()) + ")");
    }
    rng.shuffle(std::span<std::string>(subjects));
    keep.insert(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n));
  }
  Manifest out;
  out.base_dir = manifest.base_dir;
  for (const auto& r : manifest.rows) {
    if (r.split != Split::kTrain || keep.contains(r.subject_id)) out.rows.push_back(r);
  }
  return out;
}

std::vector<VolumeSample> load_split(const Manifest& manifest, Split split) {
  std::vector<VolumeSample> out;
  for (const auto& r : manifest.rows) {
    if (r.split != split) continue;
    VolumeSample s;
    s.volume = read_volume(manifest.resolve(r));
    if (s.volume.rank() != 4 || s.volume.dim(0) != 1) {
      throw DataError(DataErrorKind::kBadRank, "volume for " + r.subject_id + " is not [1,D,H,W]");
    }
    for (float v : s.volume.data()) {
      if (!std::isfinite(v)) {
        throw DataError(DataErrorKind::kBadValue, "volume for " + r.subject_id + " has non-finite values");
      }
    }
    s.label = r.label;
    s.age = r.age;
    s.subject_id = r.subject_id;
    s.split = r.split;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic volumes
// ---------------------------------------------------------------------------

namespace {

// Mean and standard deviation of age per class.
constexpr std::array<std::pair<double, double>, kNumClasses> kAgeDistribution = {
    {{77.0, 5.4}, {75.9, 7.3}, {76.7, 7.4}}};

Tensor<float> synth_volume(int extent, int label, double noise, Rng& rng) {
  const auto e = static_cast<std::size_t>(extent);
  const double c = (extent - 1) / 2.0;
  const double brain[3] = {0.40 * extent, 0.44 * extent, 0.40 * extent};
  const double r0 = kCavityRadius[static_cast<std::size_t>(label)] * extent;
  double cavity[3];
  for (int a = 0; a < 3; ++a) cavity[a] = r0 * (a == 1 ? 1.2 : 1.0) * rng.uniform(0.95, 1.05);
  Tensor<float> v({1, e, e, e});
  std::size_t i = 0;
  for (std::size_t z = 0; z < e; ++z) {
    for (std::size_t y = 0; y < e; ++y) {
      for (std::size_t x = 0; x < e; ++x, ++i) {
        const double p[3] = {z - c, y - c, x - c};
        double qb = 0, qc = 0;
        for (int a = 0; a < 3; ++a) {
          qb += p[a] * p[a] / (brain[a] * brain[a]);
          qc += p[a] * p[a] / (cavity[a] * cavity[a]);
        }
        const double base = (qb <= 1.0 && qc > 1.0) ? 1.0 : 0.0;
        v[i] = static_cast<float>(base + noise * rng.normal());
      }
    }
  }
  return v;
}

}  // namespace

std::vector<VolumeSample> generate_synthetic(const SyntheticOptions& options, Rng& rng) {
  if (options.extent < 16) throw ConfigError("synthetic extent must be >= 16");
  if (options.n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  if (options.noise < 0) throw ConfigError("noise must be >= 0");
  std::vector<VolumeSample> out;
  const auto n = static_cast<std::size_t>(options.n_per_class);
  const double val = options.val_fraction, test = options.test_fraction;
  if (!(val >= 0 && test >= 0 && val + test < 1)) {
    throw ConfigError("synthetic val/test fractions must be >= 0 and sum to < 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround((1.0 - val - test) * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(val * static_cast<double>(n))));
  for (int label = 0; label < kNumClasses; ++label) {
    Rng split_rng = rng.split(1000 + static_cast<std::uint64_t>(label));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    split_rng.shuffle(std::span<std::size_t>(order));
    std::vector<Split> split_of(n);
    for (std::size_t k = 0; k < n; ++k) {
      split_of[order[k]] = k < n_train ? Split::kTrain : k < n_train + n_val ? Split::kVal : Split::kTest;
    }
    for (std::size_t i = 0; i < n; ++i) {
      Rng srng = rng.split((static_cast<std::uint64_t>(label) << 32) | i);
      VolumeSample s;
      s.label = label;
      const auto [mean, sd] = kAgeDistribution[static_cast<std::size_t>(label)];
      s.age = std::round(std::clamp(srng.normal(mean, sd), 50.0, 100.0) * 2.0) / 2.0;
      s.volume = synth_volume(options.extent, label, options.noise, srng);
      char id[32];
      std::snprintf(id, sizeof id, "syn-%s-%03zu", kClassNames[static_cast<std::size_t>(label)].data(), i);
      s.subject_id = id;
      s.split = split_of[i];
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace volcnn
