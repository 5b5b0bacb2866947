// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unistd.h>

#include "run_cli.hpp"
#include "support.hpp"
#include "volcnn/checkpoint.hpp"
#include "volcnn/gradcheck.hpp"
#include "volcnn/metrics.hpp"
#include "volcnn/model.hpp"
#include "volcnn/optim.hpp"
#include "volcnn/saliency.hpp"

using namespace volcnn;
using test::random_tensor;
using test::run_cli;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kShapeBudgetSeconds = 60.0;
constexpr double kGradOpTol = 1e-4;
constexpr double kGradModelTol = 1e-3;
constexpr double kInMeanTol = 1e-5;
constexpr double kInVarTol = 1e-4;
constexpr int kOverfitEpochs = 200;
constexpr double kOverfitBudgetSeconds = 15 * 60.0;
constexpr double kAucTol = 1e-12;
constexpr double kBlurTol = 1e-5;
constexpr double kAgeCircleTol = 1e-12;
constexpr double kSaliencyFdTol = 1e-3;

struct Outcome {
  bool pass = true;
  std::ostringstream note;
  std::string failures;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      failures += (failures.empty() ? "" : "; ") + what;
      pass = false;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path g_root;

// ---------------------------------------------------------------------------

void shapes(Outcome& o) {
  const std::vector<std::pair<std::string, std::size_t>> table = {
      {"block1.conv", 96}, {"block1.pool", 47}, {"block2.conv", 43}, {"block2.pool", 21},
      {"block3.conv", 17}, {"block3.pool", 8},  {"block4.conv", 6}};
  std::ostringstream times;
  for (int f : {1, 2, 4, 8}) {
    ModelConfig c;
    c.widening_factor = f;
    const auto inferred = infer_shapes(c);
    Rng rng(f);
    const auto net = build<float>(c, rng);
    const auto x = random_tensor<float>({1, 1, 96, 96, 96}, rng);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = forward(net, x);
    const double secs = seconds_since(t0);
    times << (f > 1 ? ", " : "") << "f=" << f << " " << fmt("%.1fs", secs);
    o.check(r.tape.observed == inferred, "f=" + std::to_string(f) + " forward shapes differ from inference");
    for (const auto& [name, extent] : table) {
      for (const auto* layers : {&inferred, &r.tape.observed}) {
        auto it = std::find_if(layers->begin(), layers->end(), [&](const LayerShape& l) { return l.name == name; });
        const bool ok = it != layers->end() && it->shape.size() == 5 && it->shape[2] == extent &&
                        it->shape[3] == extent && it->shape[4] == extent;
        o.check(ok, "f=" + std::to_string(f) + " " + name + " != " + std::to_string(extent));
      }
    }
    auto last = std::find_if(inferred.begin(), inferred.end(), [](const LayerShape& l) { return l.name == "block4.pool"; });
    o.check(last != inferred.end() && last->shape[2] == 1, "final pool is not 1^3");
    o.check(r.logits.shape() == Shape({1, 3}), "logits shape");
    if (f == 1) o.check(secs < kShapeBudgetSeconds, "f=1 forward over budget");
  }
  o.note << "96-96-47-43-21-17-8-6 (final pool 1^3) for f=1,2,4,8; forward " << times.str();
}

void gradients(Outcome& o) {
  GradcheckOptions opt;
  opt.scope = GradcheckScope::kAll;
  const auto entries = run_gradcheck(opt);
  double worst_op = 0, worst_model = 0;
  for (const auto& e : entries) {
    const bool model = e.op.starts_with("model");
    o.check(e.passed, e.op + " failed (" + fmt("%.2e", e.max_rel_error) + ")");
    const int needed = !model ? 5 : e.op == "model.input" ? 10 : 20;
    o.check(e.instances >= needed, e.op + " has too few instances");
    o.check(e.max_rel_error <= (model ? kGradModelTol : kGradOpTol), e.op + " over pinned tolerance");
    (model ? worst_model : worst_op) = std::max(model ? worst_model : worst_op, e.max_rel_error);
  }
  const auto cli = run_cli({"gradcheck"});
  o.check(cli.code == 0, "gradcheck exit " + std::to_string(cli.code));
  o.note << entries.size() << " entries, worst op " << fmt("%.1e", worst_op) << ", worst model "
         << fmt("%.1e", worst_model) << ", gradcheck exit " << cli.code;
}

void normalization(Outcome& o) {
  Rng rng(31);
  double worst_mean = 0, worst_var = 0;
  for (int t = 0; t < 10; ++t) {
    const auto x = random_tensor<float>({2, 3, 7, 6, 5}, rng, -4.0 + t, 2.0 + 3 * t);
    const auto out = instance_norm_forward(x, Tensor<float>({3}, 1.f), Tensor<float>({3}, 0.f));
    const std::size_t per = 7 * 6 * 5;
    for (std::size_t g = 0; g < 6; ++g) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < per; ++i) m += out.state.xhat[g * per + i];
      m /= per;
      for (std::size_t i = 0; i < per; ++i) v += std::pow(out.state.xhat[g * per + i] - m, 2);
      v /= per;
      worst_mean = std::max(worst_mean, std::abs(m));
      worst_var = std::max(worst_var, std::abs(v - 1));
    }
  }
  o.check(worst_mean < kInMeanTol, "IN mean");
  o.check(worst_var < kInVarTol, "IN variance");

  ModelConfig c;
  c.crop_extent = 32;
  Rng r1(1);
  auto in_net = build<float>(c, r1);
  const auto x = random_tensor<float>({3, 1, 32, 32, 32}, r1);
  const auto eval_out = forward(in_net, x).logits;
  const auto train_out = forward_train(in_net, x).logits;
  o.check(std::memcmp(eval_out.ptr(), train_out.ptr(), eval_out.size() * sizeof(float)) == 0,
          "IN train/eval outputs differ");

  c.norm = NormKind::kBatch;
  Rng r2(1);
  auto bn_net = build<float>(c, r2);
  const auto bn_train = forward_train(bn_net, x).logits;
  const auto bn_eval = forward(bn_net, x).logits;
  o.check(bn_train != bn_eval, "BN train/eval outputs identical");
  o.note << "IN max |mean| " << fmt("%.1e", worst_mean) << ", max |var-1| " << fmt("%.1e", worst_var)
         << "; IN train==eval bitwise; BN train!=eval";
}

void overfit(Outcome& o) {
  const fs::path dir = g_root / "overfit";
  auto r = run_cli({"synth", "--run_dir", (dir / "data").string(), "--n_per_class", "10", "--extent", "32",
                    "--val_fraction", "0.2", "--test_fraction", "0", "--seed", "1"});
  o.check(r.code == 0, "synth failed: " + r.err);
  const std::string manifest = (dir / "data" / "manifest.csv").string();
  const auto counts = count_splits(load_manifest(manifest));
  std::size_t n_train = 0;
  for (auto n : counts.scans[0]) n_train += n;
  o.check(n_train == 24, "train split has " + std::to_string(n_train) + " volumes");

  const auto t0 = std::chrono::steady_clock::now();
  r = run_cli({"train", "--manifest", manifest, "--crop_extent", "32", "--widening_factor", "1", "--learning_rate",
               "0.01", "--momentum", "0.9", "--max_epochs", std::to_string(kOverfitEpochs), "--seed", "1",
               "--run_dir", (dir / "train").string()});
  const double secs = seconds_since(t0);
  o.check(r.code == 0, "train failed: " + r.err);
  o.check(secs < kOverfitBudgetSeconds, "training over budget");

  r = run_cli({"eval", "--checkpoint", (dir / "train" / "best.ckpt").string(), "--manifest", manifest, "--split",
               "train", "--n_resamples", "200", "--run_dir", (dir / "eval").string()});
  o.check(r.code == 0, "eval failed: " + r.err);
  double acc = 0;
  if (r.code == 0) {
    const auto j = nlohmann::json::parse(test::read_file(dir / "eval" / "report.json"));
    acc = j["accuracy"].get<double>();
  }
  o.check(acc == 1.0, "checkpoint train accuracy " + fmt("%.4f", acc));
  o.note << "24 volumes, " << kOverfitEpochs << " epochs in " << fmt("%.0fs", secs) << ", eval train accuracy "
         << fmt("%.4f", acc);
}

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) den += 1, num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
  return num / den;
}

std::vector<SampleRecord> records(std::size_t n, std::uint64_t seed, double skill) {
  Rng rng(seed);
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord s;
    s.subject_id = "r" + std::to_string(i);
    s.label = static_cast<int>(i % 3);
    std::array<double, 3> e{};
    double z = 0;
    for (int c = 0; c < 3; ++c) z += e[c] = std::exp(rng.normal() + (c == s.label ? skill : 0));
    for (int c = 0; c < 3; ++c) s.probs[c] = e[c] / z;
    s.pred = static_cast<int>(std::max_element(s.probs.begin(), s.probs.end()) - s.probs.begin());
    out.push_back(s);
  }
  return out;
}

void metrics(Outcome& o) {
  Rng rng(5);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 4 + rng.below(100);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = t % 2 ? rng.uniform() : std::round(rng.uniform() * 8) / 8;
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 1, y[1] = 0;
    worst = std::max(worst, std::abs(roc_auc(s, y).auc - brute_auc(s, y)));
  }
  o.check(worst <= kAucTol, "AUC differs from pairwise count by " + fmt("%.1e", worst));

  bool bal_exact = true, macro_exact = true, boot_ok = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto recs = records(45 + 10 * seed, seed, 1.0);
    std::vector<int> preds, labels;
    std::vector<std::array<double, 3>> probs;
    for (const auto& r : recs) preds.push_back(r.pred), labels.push_back(r.label), probs.push_back(r.probs);
    const auto cm = confusion_matrix(preds, labels);
    double hand = 0;
    for (int c = 0; c < 3; ++c) hand += double(cm[c][c]) / double(cm[c][0] + cm[c][1] + cm[c][2]);
    bal_exact &= balanced_accuracy(preds, labels) == hand / 3;
    const auto m = multiclass_auc(probs, labels);
    macro_exact &= m.macro == (m.per_class[0] + m.per_class[1] + m.per_class[2]) / 3;

    BootstrapOptions bo;
    bo.n_resamples = 500;
    const auto a = make_report(recs, "test", bo, Rng(seed));
    const auto b = make_report(recs, "test", bo, Rng(seed));
    for (std::size_t k = 0; k < 4; ++k) {
      boot_ok &= a.ci[k].lo == b.ci[k].lo && a.ci[k].hi == b.ci[k].hi;
      const double p = a.headline(kHeadlines[k]);
      boot_ok &= a.ci[k].lo <= p && p <= a.ci[k].hi;
    }
  }
  o.check(bal_exact, "balanced accuracy differs from confusion matrix");
  o.check(macro_exact, "macro AUC is not the per-class mean");
  o.check(boot_ok, "bootstrap interval not deterministic or misses the point estimate");
  o.note << "200 AUC fixtures max diff " << fmt("%.1e", worst) << "; balanced/macro exact; bootstrap reproducible";
}

void ablation(Outcome& o) {
  const fs::path dir = g_root / "ablate";
  auto r = run_cli({"synth", "--run_dir", (dir / "data").string(), "--n_per_class", "8", "--seed", "2"});
  o.check(r.code == 0, "synth failed");
  r = run_cli({"ablate", "--axis", "norm", "--values", "instance,batch", "--manifest",
               (dir / "data" / "manifest.csv").string(), "--crop_extent", "32", "--max_epochs", "3", "--split", "test",
               "--n_resamples", "100", "--run_dir", (dir / "run").string()});
  o.check(r.code == 0, "ablate exit " + std::to_string(r.code) + ": " + r.err);
  const std::string csv = test::read_file(dir / "run" / "ablation_norm.csv");
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  const auto columns = std::count(line.begin(), line.end(), ',') + 1;
  std::map<std::string, std::string> batch;
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    o.check(static_cast<long>(cells.size()) == columns, "incomplete row: " + line);
    for (const auto& c : cells) o.check(!c.empty(), "empty cell: " + line);
    if (cells.size() >= 2) batch[cells[0]] = cells[1];
    o.check(!cells.empty() && cells.back() == "ok", "run not ok: " + line);
  }
  o.check(rows == 2, "expected 2 rows");
  o.check(batch["instance"] == "4", "instance batch size " + batch["instance"]);
  o.check(batch["batch"] == "16", "batch-norm batch size " + batch["batch"]);
  o.note << rows << " runs x " << columns << " columns; batch size instance " << batch["instance"] << ", batch "
         << batch["batch"];
}

void data_integrity(Outcome& o) {
  const std::string leaking =
      "subject_id,path,label,age,split\ns1,a.vol,CN,70,train\ns1,b.vol,CN,71,val\ns2,c.vol,AD,75,test\n";
  bool rejected = false;
  try {
    parse_manifest(leaking);
  } catch (const DataError& e) {
    rejected = e.kind() == DataErrorKind::kLeakage;
  }
  o.check(rejected, "leaking manifest accepted");

  const fs::path dir = g_root / "data";
  fs::create_directories(dir);
  Rng rng(7);
  auto v = random_tensor<float>({1, 9, 10, 11}, rng, -500, 500);
  v[0] = -0.0f;
  v[1] = std::numeric_limits<float>::min();
  write_nifti1(dir / "v.nii", v);
  write_native(dir / "v.vol", v);
  const auto a = read_volume(dir / "v.nii");
  const auto b = read_volume(dir / "v.vol");
  o.check(a.shape() == v.shape() && std::memcmp(a.ptr(), v.ptr(), v.size() * 4) == 0, "NIfTI round trip");
  o.check(b.shape() == v.shape() && std::memcmp(b.ptr(), v.ptr(), v.size() * 4) == 0, "native round trip");

  o.check(gaussian_blur(v, 0.0) == v, "blur sigma 0 is not the identity");
  double worst = 0;
  const auto vd = random_tensor<double>({1, 8, 9, 10}, rng);
  for (double sigma : {0.5, 1.0, 1.5}) {
    const auto fast = gaussian_blur(vd, sigma);
    const long rad = static_cast<long>(std::ceil(3 * sigma));
    for (long z = 0; z < 8; ++z)
      for (long y = 0; y < 9; ++y)
        for (long x = 0; x < 10; ++x) {
          double acc = 0, norm = 0;
          for (long dz = -rad; dz <= rad; ++dz)
            for (long dy = -rad; dy <= rad; ++dy)
              for (long dx = -rad; dx <= rad; ++dx) {
                const long zz = z + dz, yy = y + dy, xx = x + dx;
                if (zz < 0 || yy < 0 || xx < 0 || zz >= 8 || yy >= 9 || xx >= 10) continue;
                const double k = std::exp(-double(dz * dz + dy * dy + dx * dx) / (2 * sigma * sigma));
                acc += k * vd[std::size_t((zz * 9 + yy) * 10 + xx)];
                norm += k;
              }
          worst = std::max(worst, std::abs(fast[std::size_t((z * 9 + y) * 10 + x)] - acc / norm));
        }
  }
  o.check(worst <= kBlurTol, "separable blur differs from direct convolution by " + fmt("%.1e", worst));

  Manifest m;
  for (int label = 0; label < 3; ++label)
    for (int s = 0; s < 12; ++s) {
      const std::string id = std::to_string(label) + "-" + std::to_string(s);
      const Split split = s < 8 ? Split::kTrain : s < 10 ? Split::kVal : Split::kTest;
      m.rows.push_back({id, id + "a", label, 70, split});
      m.rows.push_back({id, id + "b", label, 72, split});
    }
  bool disjoint = true;
  for (double rate : {0.25, 0.5, 0.75}) {
    Rng sr(3);
    const auto s = subsample(m, rate, sr);
    disjoint &= check_leakage(s).empty();
    const auto c = count_splits(s);
    for (int label = 0; label < 3; ++label) disjoint &= c.scans[0][label] == 2 * c.subjects[0][label];
  }
  o.check(disjoint, "subsampling broke split disjointness");
  o.note << "leak rejected; NIfTI/native bit-exact; blur sigma 0 identity; separable vs direct "
         << fmt("%.1e", worst) << "; subsampled splits disjoint";
}

void age_encoding(Outcome& o) {
  double worst = 0;
  for (double age = 0; age <= 120; age += 0.5) {
    const auto e = age_encode<double>(age, 128);
    for (std::size_t i = 0; i < 64; ++i)
      worst = std::max(worst, std::abs(e[2 * i] * e[2 * i] + e[2 * i + 1] * e[2 * i + 1] - 1));
  }
  o.check(worst <= kAgeCircleTol, "unit circle " + fmt("%.1e", worst));
  const std::vector<std::pair<double, double>> rounding = {
      {70.0, 70.0}, {70.24, 70.0}, {70.25, 70.5}, {70.5, 70.5}, {70.74, 70.5}, {70.75, 71.0}, {0.1, 0.0}, {119.9, 120.0}};
  for (auto [in, out] : rounding) o.check(round_age(in) == out, "round_age(" + fmt("%g", in) + ")");

  ModelConfig c;
  c.crop_extent = 32;
  Rng rng(11);
  const auto x = random_tensor<float>({1, 1, 32, 32, 32}, rng);
  const std::vector<double> a1{62.0}, a2{84.5};

  c.age_mode = AgeMode::kEncoded;
  Rng r1(1);
  const auto enc = build<float>(c, r1);
  o.check(forward(enc, x, a1).logits != forward(enc, x, a2).logits, "encoded logits ignore age");

  c.age_mode = AgeMode::kNone;
  Rng r2(1);
  const auto none = build<float>(c, r2);
  o.check(forward(none, x, a1).logits == forward(none, x, a2).logits, "None mode depends on age");

  // Concat and None must not contain or depend on the encoder: no age.* parameters, and d_model is inert.
  bool isolated = true;
  for (auto mode : {AgeMode::kNone, AgeMode::kConcatBaseline}) {
    c.age_mode = mode;
    c.d_model = 16;
    Rng ra(3);
    const auto n16 = build<float>(c, ra);
    c.d_model = 256;
    Rng rb(3);
    const auto n256 = build<float>(c, rb);
    isolated &= n16.params() == n256.params();
    for (const auto& [k, v] : n16.params()) isolated &= !k.starts_with("age.");
    isolated &= forward(n16, x, a1).logits == forward(n256, x, a1).logits;
    if (mode == AgeMode::kConcatBaseline) {
      // Age enters only as the appended scalar round(age)/120.
      const auto f1 = forward(n16, x, a1).tape.fc1_pre, f2 = forward(n16, x, a2).tape.fc1_pre;
      const auto& w = n16.param("fc1.weight");
      const std::size_t cols = w.dim(1);
      double dev = 0;
      for (std::size_t j = 0; j < f1.size(); ++j) {
        const double expect = w[j * cols + cols - 1] * (a1[0] - a2[0]) / kMaxAge;
        dev = std::max(dev, std::abs((f1[j] - f2[j]) - expect));
      }
      isolated &= dev < 1e-5;
    }
  }
  o.check(isolated, "concat/none modes touch the encoding path");
  o.note << "unit circle " << fmt("%.1e", worst)
         << "; half-year rounding at boundaries; encoded depends on age; none/concat isolated";
}

void saliency_suite(Outcome& o) {
  ModelConfig c;
  c.crop_extent = 32;
  Rng rng(21);
  const auto net = build<float>(c, rng);
  const auto x = random_tensor<float>({1, 32, 32, 32}, rng);
  const auto map = saliency(net, x, 1);
  o.check(map.values.shape() == Shape({32, 32, 32}), "map extents");

  auto zero = net;
  for (auto& [k, v] : zero.mutable_params()) v.fill(0.f);
  const auto zmap = saliency(zero, x, 1);
  o.check(std::all_of(zmap.values.data().begin(), zmap.values.data().end(), [](float v) { return v == 0.f; }),
          "zero network gives a nonzero map");

  Rng rd(22);
  const auto netd = build<double>(c, rd);
  const auto xd = random_tensor<double>({1, 32, 32, 32}, rd);
  const auto g = saliency_gradient(netd, xd, 2);
  auto logit = [&](const Tensor<double>& v) { return forward(netd, v.reshaped({1, 1, 32, 32, 32})).logits[2]; };
  // Central differences of an O(|L|) logit cannot resolve gradients far below
  // sqrt(eps) * |L|; those are compared on that absolute scale.
  const double floor = std::sqrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::abs(logit(xd)));
  std::vector<std::size_t> strong;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g[i] > 1e3 * floor) strong.push_back(i);
  int skipped = 0;
  // Returns the error at voxel i, or a negative value when the probe crosses a ReLU or pooling switch.
  auto probe = [&](std::size_t i) {
    const double h = 1e-3;
    auto xp = xd, xm = xd;
    xp[i] += h;
    xm[i] -= h;
    const double lp = logit(xp), l0 = logit(xd), lm = logit(xm);
    const double right = (lp - l0) / h, left = (l0 - lm) / h;
    if (std::abs(right - left) > 1e-2 * std::max({std::abs(right), std::abs(left), floor})) return -1.0;
    const double fd = std::abs((lp - lm) / (2 * h));
    return std::abs(fd - g[i]) / std::max({fd, g[i], floor});
  };
  double worst_any = 0, worst_strong = 0;
  int checked_any = 0, checked_strong = 0;
  for (int draw = 0; draw < 200 && (checked_any < 10 || checked_strong < 10); ++draw) {
    const bool any = checked_any < 10;
    const std::size_t i = any ? rd.below(xd.size()) : strong[rd.below(strong.size())];
    const double err = probe(i);
    if (err < 0) {
      ++skipped;
      continue;
    }
    (any ? worst_any : worst_strong) = std::max(any ? worst_any : worst_strong, err);
    ++(any ? checked_any : checked_strong);
  }
  o.check(!strong.empty() && checked_any == 10 && checked_strong == 10, "too few differentiable probes");
  o.check(worst_any <= kSaliencyFdTol, "finite-difference mismatch at random voxels " + fmt("%.1e", worst_any));
  o.check(worst_strong <= kSaliencyFdTol, "finite-difference mismatch on pooled paths " + fmt("%.1e", worst_strong));

  SaliencyMap noisy{random_tensor<float>({16, 16, 16}, rng, 0, 1), 0, 0};
  const auto sm = smooth(noisy, 0.8);
  o.check(std::all_of(sm.values.data().begin(), sm.values.data().end(), [](float v) { return v >= 0.f; }),
          "smoothing produced negatives");

  ModelConfig c96;
  Rng r96(23);
  const auto net96 = build<float>(c96, r96);
  const auto map96 = smooth(saliency(net96, random_tensor<float>({1, 96, 96, 96}, r96), 0));
  const fs::path dir = g_root / "saliency";
  fs::create_directories(dir);
  const auto paths = export_slices(map96, default_views(), (dir / "s").string());
  o.check(paths.size() == 4, "expected 4 view files");
  for (const auto& p : paths) {
    const std::string bytes = test::read_file(p);
    const std::string header = "P5\n96 96\n255\n";
    o.check(bytes.size() == header.size() + 96 * 96 && bytes.substr(0, header.size()) == header,
            "invalid PGM " + p.filename().string());
  }
  o.note << "extents ok; zero net -> zero map; FD max " << fmt("%.1e", worst_any) << " at 10 random voxels, "
         << fmt("%.1e", worst_strong) << " at 10 pooled-path voxels (" << skipped
         << " kinked probes redrawn); smoothing non-negative; 4 default PGM views";
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string bytes = test::read_file(e.path());
    if (e.path().filename() == "config.cfg") {
      // configs name their own run's directories
      for (std::size_t p; (p = bytes.find(dir.string())) != std::string::npos;) bytes.replace(p, dir.string().size(), "<run>");
    }
    files[fs::relative(e.path(), dir).string()] = bytes;
  }
  return files;
}

void determinism(Outcome& o) {
  const fs::path base = g_root / "determinism";
  std::array<std::map<std::string, std::string>, 2> runs;
  std::array<std::string, 2> stdout_text;
  for (int k = 0; k < 2; ++k) {
    const fs::path d = base / std::to_string(k);
    const std::string manifest = (d / "data" / "manifest.csv").string();
    const std::vector<std::vector<std::string>> commands = {
        {"synth", "--run_dir", (d / "data").string(), "--n_per_class", "6", "--seed", "9", "--threads", "1"},
        {"train", "--manifest", manifest, "--crop_extent", "32", "--max_epochs", "4", "--seed", "9", "--run_dir",
         (d / "train").string(), "--threads", "1"},
        {"eval", "--checkpoint", (d / "train" / "best.ckpt").string(), "--manifest", manifest, "--seed", "9",
         "--run_dir", (d / "eval").string(), "--threads", "1"},
        {"saliency", "--checkpoint", (d / "train" / "best.ckpt").string(), "--manifest", manifest, "--run_dir",
         (d / "saliency").string(), "--threads", "1"},
        {"ablate", "--axis", "width", "--values", "1,2", "--manifest", manifest, "--crop_extent", "32",
         "--max_epochs", "2", "--seed", "9", "--n_resamples", "100", "--run_dir", (d / "ablate").string(),
         "--threads", "1"},
        {"gradcheck", "--scope", "ops", "--seed", "9", "--threads", "1"},
    };
    for (const auto& cmd : commands) {
      const auto r = run_cli(cmd);
      o.check(r.code == 0, cmd[0] + " exit " + std::to_string(r.code) + ": " + r.err);
      std::string text = r.out;
      for (std::size_t p; (p = text.find(d.string())) != std::string::npos;) text.replace(p, d.string().size(), "<run>");
      stdout_text[k] += text;
    }
    runs[k] = snapshot(d);
  }
  o.check(runs[0].size() == runs[1].size(), "different file sets");
  std::size_t same = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it != runs[1].end() && it->second == bytes) {
      ++same;
    } else {
      o.check(false, name + " differs");
    }
  }
  o.check(stdout_text[0] == stdout_text[1], "console logs differ");
  const std::set<std::string> required = {"train/best.ckpt", "train/train_log.csv", "eval/report.json",
                                          "eval/logits.csv", "ablate/ablation_width.csv"};
  for (const auto& r : required) o.check(runs[0].count(r) == 1, "missing " + r);
  o.note << same << "/" << runs[0].size() << " files byte-identical across reruns (logs, checkpoints, reports)";
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number.
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  g_root = fs::temp_directory_path() / ("volcnn-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(g_root);
  fs::create_directories(g_root);
  set_warnings_enabled(false);

  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria = {
      {"shape suite", shapes},
      {"gradient suite", gradients},
      {"normalization statistics", normalization},
      {"overfit oracle", overfit},
      {"metrics oracle", metrics},
      {"ablation harness", ablation},
      {"data integrity", data_integrity},
      {"age encoding", age_encoding},
      {"saliency", saliency_suite},
      {"determinism", determinism},
  };
  std::size_t failed = 0;
  std::size_t ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    ++ran;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].first << " ("
              << fmt("%.1fs", seconds_since(t0)) << "): " << o.note.str();
    if (!o.pass) std::cout << " | failed: " << o.failures;
    std::cout << std::endl;
  }
  std::error_code ec;
  fs::remove_all(g_root, ec);
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
