#include "volcnn/model.hpp"

#include <atomic>
#include <cctype>
#include <charconv>
#include <sstream>

namespace volcnn {

namespace {

std::atomic<std::uint64_t> g_next_network_id{1};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::kInstance: return "Instance";
    case NormKind::kBatch: return "Batch";
    case NormKind::kLayer: return "Layer";
  }
  return "?";
}

std::string_view to_string(FirstLayer layer) {
  switch (layer) {
    case FirstLayer::kK1S1: return "K1S1";
    case FirstLayer::kK3S2: return "K3S2";
    case FirstLayer::kK7S4: return "K7S4";
  }
  return "?";
}

std::string_view to_string(AgeMode mode) {
  switch (mode) {
    case AgeMode::kNone: return "None";
    case AgeMode::kEncoded: return "Encoded";
    case AgeMode::kConcatBaseline: return "ConcatBaseline";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view text) {
  const std::string t = lower(text);
  if (t == "instance" || t == "in") return NormKind::kInstance;
  if (t == "batch" || t == "bn") return NormKind::kBatch;
  if (t == "layer" || t == "ln") return NormKind::kLayer;
  throw ConfigError("unknown normalization '" + std::string(text) + "' (Instance|Batch)");
}

FirstLayer parse_first_layer(std::string_view text) {
  const std::string t = lower(text);
  if (t == "k1s1") return FirstLayer::kK1S1;
  if (t == "k3s2") return FirstLayer::kK3S2;
  if (t == "k7s4") return FirstLayer::kK7S4;
  throw ConfigError("unknown first layer '" + std::string(text) + "' (K1S1|K3S2|K7S4)");
}

AgeMode parse_age_mode(std::string_view text) {
  const std::string t = lower(text);
  if (t == "none") return AgeMode::kNone;
  if (t == "encoded") return AgeMode::kEncoded;
  if (t == "concatbaseline" || t == "concat") return AgeMode::kConcatBaseline;
  throw ConfigError("unknown age mode '" + std::string(text) + "' (None|Encoded|ConcatBaseline)");
}

void ModelConfig::validate() const {
  if (widening_factor < 1) throw ConfigError("widening_factor must be >= 1");
  if (extra_blocks < 0) throw ConfigError("extra_blocks must be >= 0");
  if (crop_extent < 1) throw ConfigError("crop_extent must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (d_model < 2 || d_model % 2 != 0) throw ConfigError("d_model must be a positive even number");
  if (norm == NormKind::kLayer) throw ConfigError("backbone normalization must be Instance or Batch");
}

std::string model_config_to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "widening_factor = " << c.widening_factor << '\n'
     << "norm = " << to_string(c.norm) << '\n'
     << "first_layer = " << to_string(c.first_layer) << '\n'
     << "extra_blocks = " << c.extra_blocks << '\n'
     << "age_mode = " << to_string(c.age_mode) << '\n'
     << "crop_extent = " << c.crop_extent << '\n'
     << "num_classes = " << c.num_classes << '\n'
     << "d_model = " << c.d_model << '\n'
     << "adapt_small_inputs = " << (c.adapt_small_inputs ? "true" : "false") << '\n';
  return os.str();
}

namespace {

int parse_int(std::string_view key, std::string_view v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("invalid integer for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

ModelConfig model_config_from_text(std::string_view text) {
  ModelConfig c;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("malformed config line '" + std::string(line) + "'");
    const std::string_view key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "widening_factor") c.widening_factor = parse_int(key, value);
    else if (key == "norm") c.norm = parse_norm_kind(value);
    else if (key == "first_layer") c.first_layer = parse_first_layer(value);
    else if (key == "extra_blocks") c.extra_blocks = parse_int(key, value);
    else if (key == "age_mode") c.age_mode = parse_age_mode(value);
    else if (key == "crop_extent") c.crop_extent = parse_int(key, value);
    else if (key == "num_classes") c.num_classes = parse_int(key, value);
    else if (key == "d_model") c.d_model = parse_int(key, value);
    else if (key == "adapt_small_inputs") c.adapt_small_inputs = (value == "true" || value == "1");
    else throw ConfigError("unknown model config key '" + std::string(key) + "'");
  }
  c.validate();
  return c;
}

std::string describe(const ConvSpec& s) {
  return "k" + std::to_string(s.kernel) + "-c" + std::to_string(s.out_channels) + "-p" +
         std::to_string(s.padding) + "-s" + std::to_string(s.stride) + "-d" +
         std::to_string(s.dilation);
}

std::string describe(const PoolSpec& s) {
  return "k" + std::to_string(s.kernel) + "-s" + std::to_string(s.stride);
}

namespace {

ConvSpec first_layer_spec(FirstLayer layer, int channels) {
  switch (layer) {
    case FirstLayer::kK1S1: return {1, channels, 0, 1, 1};
    case FirstLayer::kK3S2: return {3, channels, 0, 2, 1};
    case FirstLayer::kK7S4: return {7, channels, 3, 4, 1};
  }
  return {1, channels, 0, 1, 1};
}

[[noreturn]] void cannot_fit(const std::string& layer, const std::string& spec, std::size_t in,
                             int crop) {
  throw ShapeError("crop_extent " + std::to_string(crop) + " too small: layer " + layer + " (" +
                   spec + ") does not fit its " + std::to_string(in) + "-voxel input");
}

ConvSpec fit_conv(const ConvSpec& nominal, std::size_t in, bool adapt, const std::string& name,
                  int crop) {
  const auto out = conv_output_extent(in, nominal);
  if (!adapt || (out && *out >= 2)) {
    if (!out) cannot_fit(name, describe(nominal), in, crop);
    return nominal;
  }
  std::optional<ConvSpec> fallback;
  for (int d = nominal.dilation; d >= 1; --d) {
    ConvSpec s = nominal;
    s.dilation = d;
    const auto o = conv_output_extent(in, s);
    if (o && *o >= 2) return s;
    if (o && !fallback) fallback = s;
  }
  // dilation alone is not enough: pad to "same" at dilation 1
  ConvSpec same = nominal;
  same.dilation = 1;
  same.padding = std::max(nominal.padding, (nominal.kernel - 1) / 2);
  const auto o = conv_output_extent(in, same);
  if (o && *o >= 2) return same;
  if (!fallback && o) fallback = same;
  if (!fallback) cannot_fit(name, describe(nominal), in, crop);
  return *fallback;
}

PoolSpec fit_pool(const PoolSpec& nominal, std::size_t in, std::size_t min_out, bool adapt,
                  const std::string& name, int crop) {
  const auto out = pool_output_extent(in, nominal);
  if (!adapt || (out && *out >= min_out)) {
    if (!out) cannot_fit(name, describe(nominal), in, crop);
    return nominal;
  }
  std::optional<PoolSpec> fallback;
  const int kmax = std::min<int>(nominal.kernel, static_cast<int>(in));
  for (int k = kmax; k >= 1; --k) {
    for (int s = nominal.stride; s >= 1; --s) {
      const PoolSpec p{k, s};
      const auto o = pool_output_extent(in, p);
      if (o && *o >= min_out) return p;
      if (o && !fallback) fallback = p;
    }
  }
  if (!fallback) cannot_fit(name, describe(nominal), in, crop);
  return *fallback;
}

Shape volume_shape(std::size_t batch, std::size_t channels, std::size_t extent) {
  return {batch, channels, extent, extent, extent};
}

}  // namespace

Architecture plan_architecture(const ModelConfig& config) {
  config.validate();
  const int f = config.widening_factor;
  Architecture arch;

  const ConvSpec block_convs[4] = {first_layer_spec(config.first_layer, 4 * f),
                                   {3, 32 * f, 0, 1, 2},
                                   {5, 64 * f, 2, 1, 2},
                                   {3, 64 * f, 1, 1, 2}};
  const PoolSpec inner_pool{3, 2};
  const PoolSpec final_pool{5, 2};

  std::size_t channels = 1;
  for (int b = 0; b < 4; ++b) {
    StagePlan st;
    st.name = "block" + std::to_string(b + 1);
    st.in_channels = channels;
    st.nominal_conv = block_convs[b];
    st.norm = config.norm;
    if (b < 3) {
      st.nominal_pool = inner_pool;
      st.pool_name = st.name + ".pool";
    }
    channels = static_cast<std::size_t>(block_convs[b].out_channels);
    arch.stages.push_back(st);
  }
  for (int e = 0; e < config.extra_blocks; ++e) {
    StagePlan st;
    st.name = "extra" + std::to_string(e + 1);
    st.in_channels = channels;
    st.nominal_conv = {3, 64 * f, 1, 1, 1};
    st.norm = NormKind::kInstance;
    arch.stages.push_back(st);
  }
  arch.stages.back().nominal_pool = final_pool;
  arch.stages.back().pool_name = "block4.pool";

  std::size_t extent = static_cast<std::size_t>(config.crop_extent);
  arch.layers.push_back({"input", volume_shape(1, 1, extent)});
  for (std::size_t i = 0; i < arch.stages.size(); ++i) {
    StagePlan& st = arch.stages[i];
    const bool last = i + 1 == arch.stages.size();
    st.conv = fit_conv(st.nominal_conv, extent, config.adapt_small_inputs, st.name + ".conv",
                       config.crop_extent);
    extent = *conv_output_extent(extent, st.conv);
    const auto c = static_cast<std::size_t>(st.conv.out_channels);
    arch.layers.push_back({st.name + ".conv", volume_shape(1, c, extent)});
    arch.layers.push_back({st.name + ".norm", volume_shape(1, c, extent)});
    arch.layers.push_back({st.name + ".relu", volume_shape(1, c, extent)});
    if (st.nominal_pool) {
      st.pool = fit_pool(*st.nominal_pool, extent, last ? 1 : 2, config.adapt_small_inputs,
                         st.pool_name, config.crop_extent);
      extent = *pool_output_extent(extent, *st.pool);
      arch.layers.push_back({st.pool_name, volume_shape(1, c, extent)});
    }
    if (last) arch.conv_features = c * extent * extent * extent;
  }

  arch.fc1_in = arch.conv_features + (config.age_mode == AgeMode::kConcatBaseline ? 1 : 0);
  arch.layers.push_back({"flatten", {1, arch.conv_features}});
  if (config.age_mode == AgeMode::kConcatBaseline) {
    arch.layers.push_back({"age.concat", {1, arch.fc1_in}});
  }
  arch.layers.push_back({"fc1", {1, kFc1Width}});
  if (config.age_mode == AgeMode::kEncoded) {
    arch.layers.push_back({"age.encode", {1, static_cast<std::size_t>(config.d_model)}});
    arch.layers.push_back({"age.fc1", {1, kAgeHidden}});
    arch.layers.push_back({"age.norm", {1, kAgeHidden}});
    arch.layers.push_back({"age.fc2", {1, kFc1Width}});
    arch.layers.push_back({"age.add", {1, kFc1Width}});
  }
  arch.layers.push_back({"fc1.relu", {1, kFc1Width}});
  arch.layers.push_back({"fc2", {1, static_cast<std::size_t>(config.num_classes)}});
  return arch;
}

std::vector<LayerShape> infer_shapes(const ModelConfig& config, std::size_t batch) {
  std::vector<LayerShape> layers = plan_architecture(config).layers;
  for (auto& l : layers) l.shape[0] = batch;
  return layers;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
Network<T>::Network(ModelConfig config, Architecture arch, ParamMap<T> params, ParamMap<T> buffers)
    : config_(std::move(config)),
      arch_(std::move(arch)),
      params_(std::move(params)),
      buffers_(std::move(buffers)),
      id_(g_next_network_id.fetch_add(1)) {}

template <typename T>
Network<T>::Network(const Network& other)
    : config_(other.config_),
      arch_(other.arch_),
      params_(other.params_),
      buffers_(other.buffers_),
      id_(g_next_network_id.fetch_add(1)) {}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
  if (this != &other) {
    config_ = other.config_;
    arch_ = other.arch_;
    params_ = other.params_;
    buffers_ = other.buffers_;
    ++version_;
  }
  return *this;
}

template <typename T>
const Tensor<T>& Network<T>::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("network has no parameter '" + name + "'");
  return it->second;
}

template <typename T>
ParamMap<T>& Network<T>::mutable_params() {
  ++version_;
  return params_;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : params_) n += v.size();
  return n;
}

template <typename T>
Network<T> build(const ModelConfig& config, Rng& rng) {
  Architecture arch = plan_architecture(config);
  ParamMap<T> params, buffers;
  auto add_linear = [&](const std::string& name, std::size_t out, std::size_t in) {
    params.emplace(name + ".weight", init<T>(InitKind::kKaimingUniform, {out, in}, rng));
    params.emplace(name + ".bias", Tensor<T>(Shape{out}));
  };
  auto add_norm = [&](const std::string& name, std::size_t n) {
    params.emplace(name + ".gamma", Tensor<T>(Shape{n}, T{1}));
    params.emplace(name + ".beta", Tensor<T>(Shape{n}));
  };
  for (const StagePlan& st : arch.stages) {
    const auto c = static_cast<std::size_t>(st.conv.out_channels);
    const auto k = static_cast<std::size_t>(st.conv.kernel);
    params.emplace(st.name + ".conv.weight",
                   init<T>(InitKind::kKaimingUniform, {c, st.in_channels, k, k, k}, rng));
    params.emplace(st.name + ".conv.bias", Tensor<T>(Shape{c}));
    add_norm(st.name + ".norm", c);
    if (st.norm == NormKind::kBatch) {
      buffers.emplace(st.name + ".norm.running_mean", Tensor<T>(Shape{c}));
      buffers.emplace(st.name + ".norm.running_var", Tensor<T>(Shape{c}, T{1}));
    }
  }
  add_linear("fc1", kFc1Width, arch.fc1_in);
  if (config.age_mode == AgeMode::kEncoded) {
    add_linear("age.fc1", kAgeHidden, static_cast<std::size_t>(config.d_model));
    add_norm("age.norm", kAgeHidden);
    add_linear("age.fc2", kFc1Width, kAgeHidden);
  }
  add_linear("fc2", static_cast<std::size_t>(config.num_classes), kFc1Width);
  return Network<T>(config, std::move(arch), std::move(params), std::move(buffers));
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
ForwardResult<T> forward_impl(const Network<T>& net, const Tensor<T>& volumes,
                              std::span<const double> ages, NormMode mode,
                              ParamMap<T>* buffers) {
  const ModelConfig& cfg = net.config();
  const Architecture& arch = net.architecture();
  const auto crop = static_cast<std::size_t>(cfg.crop_extent);
  if (volumes.rank() != 5 || volumes.dim(1) != 1 || volumes.dim(2) != crop ||
      volumes.dim(3) != crop || volumes.dim(4) != crop) {
    throw ShapeError("network expects volumes [N,1," + std::to_string(crop) + "," +
                     std::to_string(crop) + "," + std::to_string(crop) + "], got " +
                     shape_to_string(volumes.shape()));
  }
  const std::size_t n = volumes.dim(0);
  if (cfg.age_mode != AgeMode::kNone && ages.size() != n) {
    throw ConfigError("age mode " + std::string(to_string(cfg.age_mode)) + " needs " +
                      std::to_string(n) + " ages, got " + std::to_string(ages.size()));
  }

  ForwardResult<T> r;
  Tape<T>& tape = r.tape;
  tape.network_id = net.id();
  tape.network_version = net.version();
  tape.input_shape = volumes.shape();
  tape.observed.push_back({"input", volumes.shape()});

  Tensor<T> h = volumes;
  for (const StagePlan& st : arch.stages) {
    typename Tape<T>::Stage s;
    Tensor<T> conv = conv3d_forward(h, net.param(st.name + ".conv.weight"),
                                    net.param(st.name + ".conv.bias"), st.conv);
    tape.observed.push_back({st.name + ".conv", conv.shape()});
    s.input = std::move(h);
    const Tensor<T>& gamma = net.param(st.name + ".norm.gamma");
    const Tensor<T>& beta = net.param(st.name + ".norm.beta");
    NormOutput<T> normed;
    if (st.norm == NormKind::kBatch) {
      RunningStats<T> stats;
      const std::string mean_key = st.name + ".norm.running_mean";
      const std::string var_key = st.name + ".norm.running_var";
      const ParamMap<T>& src = buffers ? *buffers : net.buffers();
      stats.mean = src.at(mean_key);
      stats.var = src.at(var_key);
      normed = batch_norm_forward(conv, gamma, beta, stats, mode);
      if (buffers && mode == NormMode::kTrain) {
        buffers->at(mean_key) = std::move(stats.mean);
        buffers->at(var_key) = std::move(stats.var);
      }
    } else {
      normed = instance_norm_forward(conv, gamma, beta);
    }
    tape.observed.push_back({st.name + ".norm", normed.y.shape()});
    s.norm = std::move(normed.state);
    h = relu(normed.y);
    s.norm_out = std::move(normed.y);
    tape.observed.push_back({st.name + ".relu", h.shape()});
    if (st.pool) {
      PoolResult<T> pooled = maxpool3d_forward(h, *st.pool);
      s.pool_input_shape = h.shape();
      s.pool_argmax = std::move(pooled.argmax);
      h = std::move(pooled.out);
      tape.observed.push_back({st.pool_name, h.shape()});
    }
    tape.stages.push_back(std::move(s));
  }

  tape.conv_out_shape = h.shape();
  const std::size_t flat = h.size() / n;
  h.reshape({n, flat});
  tape.observed.push_back({"flatten", h.shape()});
  if (cfg.age_mode == AgeMode::kConcatBaseline) {
    Tensor<T> cat({n, flat + 1});
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(h.ptr() + i * flat, flat, cat.ptr() + i * (flat + 1));
      cat[i * (flat + 1) + flat] = static_cast<T>(round_age(ages[i]) / kMaxAge);
    }
    h = std::move(cat);
    tape.observed.push_back({"age.concat", h.shape()});
  }
  tape.features = h;
  Tensor<T> z = linear_forward(h, net.param("fc1.weight"), net.param("fc1.bias"));
  tape.observed.push_back({"fc1", z.shape()});
  if (cfg.age_mode == AgeMode::kEncoded) {
    const auto d = static_cast<std::size_t>(cfg.d_model);
    Tensor<T> code({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor<T> e = age_encode<T>(ages[i], cfg.d_model);
      std::copy_n(e.ptr(), d, code.ptr() + i * d);
    }
    tape.observed.push_back({"age.encode", code.shape()});
    tape.age_h1 = linear_forward(code, net.param("age.fc1.weight"), net.param("age.fc1.bias"));
    tape.observed.push_back({"age.fc1", tape.age_h1.shape()});
    NormOutput<T> ln =
        layer_norm_forward(tape.age_h1, net.param("age.norm.gamma"), net.param("age.norm.beta"));
    tape.age_norm = std::move(ln.state);
    tape.age_h2 = std::move(ln.y);
    tape.observed.push_back({"age.norm", tape.age_h2.shape()});
    const Tensor<T> a =
        linear_forward(tape.age_h2, net.param("age.fc2.weight"), net.param("age.fc2.bias"));
    tape.observed.push_back({"age.fc2", a.shape()});
    z = add(z, a);
    tape.observed.push_back({"age.add", z.shape()});
    tape.age_code = std::move(code);
  }
  tape.fc1_pre = z;
  tape.hidden = relu(z);
  tape.observed.push_back({"fc1.relu", tape.hidden.shape()});
  r.logits = linear_forward(tape.hidden, net.param("fc2.weight"), net.param("fc2.bias"));
  tape.observed.push_back({"fc2", r.logits.shape()});
  return r;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& volumes,
                         std::span<const double> ages) {
  return forward_impl<T>(net, volumes, ages, NormMode::kEval, nullptr);
}

template <typename T>
ForwardResult<T> forward_train(Network<T>& net, const Tensor<T>& volumes,
                               std::span<const double> ages) {
  return forward_impl(net, volumes, ages, NormMode::kTrain, &net.mutable_buffers());
}

template <typename T>
Gradients<T> backward(const Network<T>& net, const Tape<T>& tape, const Tensor<T>& grad_logits,
                      bool input_grad) {
  if (tape.network_id != net.id() || tape.network_version != net.version()) {
    throw Error("stale tape: the network changed since this forward pass was recorded");
  }
  const ModelConfig& cfg = net.config();
  const Architecture& arch = net.architecture();
  const std::size_t n = tape.input_shape[0];
  if (grad_logits.shape() != Shape{n, static_cast<std::size_t>(cfg.num_classes)}) {
    throw ShapeError("backward: grad_logits " + shape_to_string(grad_logits.shape()) +
                     " does not match logits [" + std::to_string(n) + "," +
                     std::to_string(cfg.num_classes) + "]");
  }
  Gradients<T> g;
  auto& gp = g.params;

  LinearGrads<T> fc2 = linear_backward(grad_logits, tape.hidden, net.param("fc2.weight"));
  gp["fc2.weight"] = std::move(fc2.w);
  gp["fc2.bias"] = std::move(fc2.b);
  const Tensor<T> gz = relu_backward(fc2.x, tape.fc1_pre);

  if (cfg.age_mode == AgeMode::kEncoded) {
    LinearGrads<T> a2 = linear_backward(gz, tape.age_h2, net.param("age.fc2.weight"));
    gp["age.fc2.weight"] = std::move(a2.w);
    gp["age.fc2.bias"] = std::move(a2.b);
    NormGrads<T> ln = norm_backward(NormKind::kLayer, a2.x, tape.age_norm);
    gp["age.norm.gamma"] = std::move(ln.gamma);
    gp["age.norm.beta"] = std::move(ln.beta);
    LinearGrads<T> a1 = linear_backward(ln.x, tape.age_code, net.param("age.fc1.weight"));
    gp["age.fc1.weight"] = std::move(a1.w);
    gp["age.fc1.bias"] = std::move(a1.b);
  }

  LinearGrads<T> fc1 = linear_backward(gz, tape.features, net.param("fc1.weight"));
  gp["fc1.weight"] = std::move(fc1.w);
  gp["fc1.bias"] = std::move(fc1.b);

  Tensor<T> gh;
  if (cfg.age_mode == AgeMode::kConcatBaseline) {
    const std::size_t flat = arch.conv_features;
    gh = Tensor<T>({n, flat});
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(fc1.x.ptr() + i * (flat + 1), flat, gh.ptr() + i * flat);
    }
  } else {
    gh = std::move(fc1.x);
  }
  gh.reshape(tape.conv_out_shape);

  for (std::size_t i = arch.stages.size(); i-- > 0;) {
    const StagePlan& st = arch.stages[i];
    const typename Tape<T>::Stage& s = tape.stages[i];
    if (st.pool) gh = maxpool3d_backward(gh, s.pool_argmax, s.pool_input_shape);
    gh = relu_backward(gh, s.norm_out);
    NormGrads<T> ng = norm_backward(st.norm, gh, s.norm);
    gp[st.name + ".norm.gamma"] = std::move(ng.gamma);
    gp[st.name + ".norm.beta"] = std::move(ng.beta);
    const bool need_x = i > 0 || input_grad;
    ConvGrads<T> cg =
        conv3d_backward(ng.x, s.input, net.param(st.name + ".conv.weight"), st.conv, need_x);
    gp[st.name + ".conv.weight"] = std::move(cg.w);
    gp[st.name + ".conv.bias"] = std::move(cg.b);
    gh = std::move(cg.x);
  }
  if (input_grad) g.input = std::move(gh);
  return g;
}

#define VOLCNN_INSTANTIATE(T)                                                                  \
  template class Network<T>;                                                                  \
  template Network<T> build<T>(const ModelConfig&, Rng&);                                     \
  template ForwardResult<T> forward(const Network<T>&, const Tensor<T>&,                      \
                                    std::span<const double>);                                 \
  template ForwardResult<T> forward_train(Network<T>&, const Tensor<T>&,                      \
                                          std::span<const double>);                           \
  template Gradients<T> backward(const Network<T>&, const Tape<T>&, const Tensor<T>&, bool);

VOLCNN_INSTANTIATE(float)
VOLCNN_INSTANTIATE(double)

#undef VOLCNN_INSTANTIATE

}  // namespace volcnn
