#include "volcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>

#include "volcnn/model.hpp"

namespace volcnn {

GradcheckScope parse_gradcheck_scope(std::string_view text) {
  if (text == "ops") return GradcheckScope::kOps;
  if (text == "model") return GradcheckScope::kModel;
  if (text == "all") return GradcheckScope::kAll;
  throw ConfigError("unknown gradcheck scope '" + std::string(text) + "' (ops|model|all)");
}

namespace {

using TD = Tensor<double>;
constexpr double kH = kGradcheckStep;

TD random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  TD t(shape);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Values bounded away from zero so ReLU kinks stay outside +-h.
TD away_from_zero(const Shape& shape, Rng& rng) {
  TD t(shape);
  for (double& v : t.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

// Distinct values spaced 0.01 apart so no max-pool window changes its argmax under +-h.
TD distinct_values(const Shape& shape, Rng& rng) {
  TD t(shape);
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(perm[i]);
  return t;
}

double dot(const TD& a, const TD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

TD numeric_grad(TD& x, const std::function<double()>& loss) {
  TD g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + kH;
    const double lp = loss();
    x[i] = v - kH;
    const double lm = loss();
    x[i] = v;
    g[i] = (lp - lm) / (2 * kH);
  }
  return g;
}

double rel_error(const TD& analytic, const TD& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    na = std::max(na, std::abs(analytic[i]));
    nn = std::max(nn, std::abs(numeric[i]));
  }
  const double denom = std::max(na, nn);
  return denom > 0.0 ? diff / denom : diff;
}

struct Check {
  std::string name;
  std::function<double(Rng&, int)> instance;  // returns the instance's relative error
};

double conv_instance(Rng& rng, int i, bool corrupt) {
  static const ConvSpec specs[] = {{3, 3, 0, 1, 1}, {3, 3, 1, 2, 1}, {2, 3, 0, 1, 2},
                                   {1, 3, 0, 1, 1}, {3, 3, 1, 1, 2}, {3, 3, 2, 3, 1}};
  const ConvSpec spec = specs[static_cast<std::size_t>(i) % std::size(specs)];
  const auto k = static_cast<std::size_t>(spec.kernel);
  TD x = random_tensor({2, 2, 5, 5, 5}, rng);
  TD w = random_tensor({3, 2, k, k, k}, rng, 0.5);
  TD b = random_tensor({3}, rng);
  const TD y0 = conv3d_forward(x, w, b, spec);
  const TD r = random_tensor(y0.shape(), rng);
  auto loss = [&] { return dot(conv3d_forward(x, w, b, spec), r); };
  ConvGrads<double> g = conv3d_backward(r, x, w, spec);
  if (corrupt) {
    for (double& v : g.w.data()) v *= 1.01;
    for (double& v : g.x.data()) v *= 1.01;
  }
  return std::max({rel_error(g.x, numeric_grad(x, loss)), rel_error(g.w, numeric_grad(w, loss)),
                   rel_error(g.b, numeric_grad(b, loss))});
}

double pool_instance(Rng& rng, int i) {
  static const PoolSpec specs[] = {{3, 2}, {2, 2}, {3, 1}, {2, 1}, {4, 3}};
  const PoolSpec spec = specs[static_cast<std::size_t>(i) % std::size(specs)];
  TD x = distinct_values({2, 2, 6, 6, 6}, rng);
  const PoolResult<double> p0 = maxpool3d_forward(x, spec);
  const TD r = random_tensor(p0.out.shape(), rng);
  auto loss = [&] { return dot(maxpool3d_forward(x, spec).out, r); };
  const TD gx = maxpool3d_backward(r, p0.argmax, x.shape());
  return rel_error(gx, numeric_grad(x, loss));
}

double norm_instance(Rng& rng, NormKind kind) {
  const Shape shape = kind == NormKind::kInstance ? Shape{2, 3, 4, 4, 4}
                      : kind == NormKind::kBatch  ? Shape{3, 2, 3, 3, 3}
                                                  : Shape{4, 6};
  const std::size_t c = shape[1];
  TD x = random_tensor(shape, rng, 2.0);
  for (double& v : x.data()) v += 0.5;
  TD gamma = random_tensor({c}, rng);
  TD beta = random_tensor({c}, rng);
  auto run = [&]() -> NormOutput<double> {
    if (kind == NormKind::kInstance) return instance_norm_forward(x, gamma, beta);
    if (kind == NormKind::kLayer) return layer_norm_forward(x, gamma, beta);
    RunningStats<double> stats{TD({c}), TD({c}, 1.0)};
    return batch_norm_forward(x, gamma, beta, stats, NormMode::kTrain);
  };
  const NormOutput<double> out = run();
  const TD r = random_tensor(out.y.shape(), rng);
  auto loss = [&] { return dot(run().y, r); };
  const NormGrads<double> g = norm_backward(kind, r, out.state);
  return std::max({rel_error(g.x, numeric_grad(x, loss)), rel_error(g.gamma, numeric_grad(gamma, loss)),
                   rel_error(g.beta, numeric_grad(beta, loss))});
}

double relu_instance(Rng& rng) {
  TD x = away_from_zero({4, 7}, rng);
  const TD r = random_tensor(x.shape(), rng);
  auto loss = [&] { return dot(relu(x), r); };
  return rel_error(relu_backward(r, x), numeric_grad(x, loss));
}

double linear_instance(Rng& rng) {
  TD x = random_tensor({3, 5}, rng);
  TD w = random_tensor({4, 5}, rng);
  TD b = random_tensor({4}, rng);
  const TD r = random_tensor({3, 4}, rng);
  auto loss = [&] { return dot(linear_forward(x, w, b), r); };
  const LinearGrads<double> g = linear_backward(r, x, w);
  return std::max({rel_error(g.x, numeric_grad(x, loss)), rel_error(g.w, numeric_grad(w, loss)),
                   rel_error(g.b, numeric_grad(b, loss))});
}

double xent_instance(Rng& rng, int i) {
  TD s = random_tensor({4, 3}, rng, 2.0);
  std::vector<int> labels(4);
  for (int& l : labels) l = static_cast<int>(rng.below(3));
  std::vector<double> weights;
  if (i % 2 == 1) weights = {0.5, 1.0, 2.0};
  auto loss = [&] { return softmax_xent(s, labels, weights).loss; };
  const SoftmaxXent<double> out = softmax_xent(s, labels, weights);
  return rel_error(out.grad, numeric_grad(s, loss));
}

// Which side of every ReLU kink and which max-pool winner a forward pass took.
// Central differences are only meaningful when both probes share the pattern
// of the unperturbed point.
std::vector<std::size_t> kink_pattern(const Tape<double>& tape) {
  std::vector<std::size_t> out;
  for (const auto& st : tape.stages) {
    for (double v : st.norm_out.data()) out.push_back(v > 0.0);
    out.insert(out.end(), st.pool_argmax.begin(), st.pool_argmax.end());
  }
  for (double v : tape.fc1_pre.data()) out.push_back(v > 0.0);
  return out;
}

struct SpotResult {
  double error = 0.0;
  int skipped = 0;
};

// End-to-end spot check on a tiny network: n_samples random scalar
// parameters (or input voxels), each compared by |a - n| / max(|a|, |n|, floor).
// Samples whose +-h probes cross a ReLU kink or change a max-pool winner are
// redrawn and counted as skipped.
SpotResult model_instance(Rng& rng, const ModelConfig& config, int n_samples, bool input_voxels) {
  Rng init = rng.split(Stream::kInit);
  Network<double> net = build<double>(config, init);
  // Nonzero biases and betas so no stage sits at an exactly symmetric point.
  for (auto& [name, t] : net.mutable_params()) {
    if (name.ends_with(".bias") || name.ends_with(".beta")) {
      for (double& v : t.data()) v = 0.1 * rng.normal();
    }
  }
  const auto c = static_cast<std::size_t>(config.crop_extent);
  const std::size_t batch = config.norm == NormKind::kBatch ? 2 : 1;
  TD x = random_tensor({batch, 1, c, c, c}, rng);
  std::vector<double> ages;
  if (config.age_mode != AgeMode::kNone) {
    for (std::size_t i = 0; i < batch; ++i) ages.push_back(rng.uniform(60.0, 90.0));
  }
  const TD r = random_tensor({batch, static_cast<std::size_t>(config.num_classes)}, rng);

  // Batch norm is checked in training mode, where batch statistics depend on x.
  auto run = [&](const Network<double>& n) {
    Network<double> copy = n;
    return config.norm == NormKind::kBatch ? forward_train(copy, x, ages) : forward(copy, x, ages);
  };
  Network<double> work = net;
  ForwardResult<double> fr =
      config.norm == NormKind::kBatch ? forward_train(work, x, ages) : forward(work, x, ages);
  const Gradients<double> g = backward(work, fr.tape, r, input_voxels);
  const std::vector<std::size_t> base = kink_pattern(fr.tape);
  // Differences of an O(|L|) loss at h = 1e-3 cannot resolve gradients much
  // below sqrt(eps) * |L|; smaller ones are compared on that absolute scale.
  const double floor = std::sqrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::abs(dot(fr.logits, r)));

  std::vector<std::string> names;
  for (const auto& [name, t] : net.params()) names.push_back(name);

  SpotResult res;
  const int max_draws = 50 * n_samples;
  int accepted = 0;
  for (int draw = 0; accepted < n_samples; ++draw) {
    if (draw >= max_draws) {
      throw NumericError("gradient spot check: only " + std::to_string(accepted) + " of " +
                         std::to_string(n_samples) + " samples were away from kinks");
    }
    double analytic = 0.0;
    std::function<void(double)> shift;
    Network<double> probe = net;
    if (input_voxels) {
      const auto i = static_cast<std::size_t>(rng.below(x.size()));
      analytic = g.input[i];
      shift = [&x, i](double d) { x[i] += d; };
    } else {
      const std::string& name = names[static_cast<std::size_t>(rng.below(names.size()))];
      const auto i = static_cast<std::size_t>(rng.below(net.param(name).size()));
      analytic = g.params.at(name)[i];
      shift = [&probe, name, i](double d) { probe.mutable_params().at(name)[i] += d; };
    }
    shift(kH);
    const ForwardResult<double> plus = run(probe);
    shift(-2 * kH);
    const ForwardResult<double> minus = run(probe);
    shift(kH);
    if (kink_pattern(plus.tape) != base || kink_pattern(minus.tape) != base) {
      ++res.skipped;
      continue;
    }
    const double numeric = (dot(plus.logits, r) - dot(minus.logits, r)) / (2 * kH);
    res.error = std::max(res.error, std::abs(analytic - numeric) /
                                        std::max({std::abs(analytic), std::abs(numeric), floor}));
    ++accepted;
  }
  return res;
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options) {
  if (options.instances < 1) throw ConfigError("gradcheck needs at least one instance per op");
  const Rng root(options.seed, static_cast<std::uint64_t>(Stream::kGradcheck));
  std::vector<GradcheckEntry> out;
  auto run = [&](const std::string& op, int instances, double tol, const std::function<double(Rng&, int)>& f) {
    GradcheckEntry e{op, instances, 0.0, tol, true, 0};
    Rng op_rng = root.split(out.size() + 1);
    for (int i = 0; i < instances; ++i) {
      Rng rng = op_rng.split(static_cast<std::uint64_t>(i));
      e.max_rel_error = std::max(e.max_rel_error, f(rng, i));
    }
    e.passed = std::isfinite(e.max_rel_error) && e.max_rel_error <= tol;
    out.push_back(e);
  };
  auto run_model = [&](const std::string& op, const ModelConfig& config, int samples, bool input) {
    GradcheckEntry e{op, samples, 0.0, kModelTolerance, true, 0};
    Rng rng = root.split(out.size() + 1);
    try {
      const SpotResult r = model_instance(rng, config, samples, input);
      e.max_rel_error = r.error;
      e.skipped = r.skipped;
      e.passed = std::isfinite(r.error) && r.error <= kModelTolerance;
    } catch (const NumericError& err) {
      e.max_rel_error = std::numeric_limits<double>::infinity();
      e.passed = false;
      warn(err.what());
    }
    out.push_back(e);
  };

  const bool ops = options.scope != GradcheckScope::kModel;
  const bool model = options.scope != GradcheckScope::kOps;
  const int n = options.instances;
  if (ops) {
    run("conv3d", n, kOpTolerance, [&](Rng& r, int i) { return conv_instance(r, i, options.corrupt_conv_backward); });
    run("maxpool3d", n, kOpTolerance, pool_instance);
    run("instance_norm", n, kOpTolerance, [](Rng& r, int) { return norm_instance(r, NormKind::kInstance); });
    run("batch_norm", n, kOpTolerance, [](Rng& r, int) { return norm_instance(r, NormKind::kBatch); });
    run("layer_norm", n, kOpTolerance, [](Rng& r, int) { return norm_instance(r, NormKind::kLayer); });
    run("relu", n, kOpTolerance, [](Rng& r, int) { return relu_instance(r); });
    run("linear", n, kOpTolerance, [](Rng& r, int) { return linear_instance(r); });
    run("softmax_xent", n, kOpTolerance, xent_instance);
  }
  if (model) {
    ModelConfig base;
    base.crop_extent = 32;
    base.widening_factor = 1;
    const int p = options.model_parameters;
    run_model("model", base, p, false);
    ModelConfig age = base;
    age.age_mode = AgeMode::kEncoded;
    age.norm = NormKind::kBatch;
    run_model("model[batch,encoded-age]", age, p, false);
    ModelConfig concat = base;
    concat.age_mode = AgeMode::kConcatBaseline;
    concat.extra_blocks = 1;
    run_model("model[concat-age,extra1]", concat, p, false);
    run_model("model.input", base, 10, true);
  }
  return out;
}

std::string format_gradcheck(const std::vector<GradcheckEntry>& entries) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %9s %14s %10s %7s %s\n", "op", "instances", "max_rel_error", "tolerance",
                "skipped", "result");
  out += line;
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-26s %9d %14.3e %10.0e %7d %s\n", e.op.c_str(), e.instances, e.max_rel_error,
                  e.tolerance, e.skipped, e.passed ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace volcnn
