#include "volcnn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "binary_io.hpp"

namespace volcnn {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kBufferPrefix = "buffer/";
constexpr std::string_view kVelocityPrefix = "velocity/";

void write_tensor(detail::LeWriter& w, const std::string& name, const Tensor<float>& t) {
  w.str(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) w.u64(e);
  w.f32s(t.data());
}

// The tensor names the config implies, in file order. Used to name what is
// missing from a truncated file.
std::vector<std::string> expected_names(const Network<float>& net) {
  std::vector<std::string> names;
  for (const auto& [k, v] : net.params()) names.push_back(k);
  for (const auto& [k, v] : net.buffers()) names.push_back(std::string(kBufferPrefix) + k);
  return names;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Network<float>& net,
                     const ParamMap<float>& velocity, double val_loss) {
  for (const auto& [k, v] : velocity) {
    auto it = net.params().find(k);
    if (it == net.params().end() || it->second.shape() != v.shape()) {
      throw ShapeError("velocity entry '" + k + "' does not match a parameter");
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError(DataErrorKind::kIo, "cannot write " + tmp.string());
    detail::LeWriter w(os);
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.str(model_config_to_text(net.config()));
    w.f64(val_loss);
    w.u64(net.params().size() + net.buffers().size() + velocity.size());
    for (const auto& [k, v] : net.params()) write_tensor(w, k, v);
    for (const auto& [k, v] : net.buffers()) write_tensor(w, std::string(kBufferPrefix) + k, v);
    for (const auto& [k, v] : velocity) write_tensor(w, std::string(kVelocityPrefix) + k, v);
    os.flush();
    if (!w.ok()) throw DataError(DataErrorKind::kIo, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, const ModelConfig* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataErrorKind::kIo, "cannot open checkpoint " + path.string());
  detail::LeReader r(is);
  char magic[8];
  r.bytes(magic, sizeof magic, "checkpoint header");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError(DataErrorKind::kBadMagic, path.string() + " is not a checkpoint file");
  }
  const std::uint32_t version = r.u32("checkpoint header");
  if (version != kCheckpointVersion) {
    throw DataError(DataErrorKind::kBadVersion,
                    "checkpoint version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));
  }
  const ModelConfig config = model_config_from_text(r.str("model config"));
  if (expected && !(*expected == config)) {
    throw ConfigError("checkpoint was saved for a different model:\n" +
                      model_config_to_text(config) + "requested:\n" +
                      model_config_to_text(*expected));
  }
  const double val_loss = r.f64("checkpoint header");
  const std::uint64_t count = r.u64("checkpoint header");

  // A freshly built network provides the expected names and shapes.
  Rng rng(0, 0);
  Network<float> templ = build<float>(config, rng);
  const std::vector<std::string> names = expected_names(templ);
  ParamMap<float> params, buffers, velocity;

  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string next = i < names.size() ? names[i] : "tensor #" + std::to_string(i);
    const std::string name = r.str("tensor '" + next + "'");
    const std::uint8_t rank = r.u8("tensor '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = r.u64("tensor '" + name + "'");
    if (shape_numel(shape) == 0 || shape_numel(shape) > (std::uint64_t{1} << 34)) {
      throw DataError(DataErrorKind::kBadValue, "tensor '" + name + "' has an invalid shape");
    }
    Tensor<float> t(shape);
    r.f32s(t.data(), "tensor '" + name + "'");

    ParamMap<float>* dest = &params;
    std::string key = name;
    const ParamMap<float>* ref = &templ.params();
    if (name.starts_with(kBufferPrefix)) {
      dest = &buffers;
      key = name.substr(kBufferPrefix.size());
      ref = &templ.buffers();
    } else if (name.starts_with(kVelocityPrefix)) {
      dest = &velocity;
      key = name.substr(kVelocityPrefix.size());
    }
    auto it = ref->find(key);
    if (it == ref->end()) {
      throw DataError(DataErrorKind::kSizeMismatch, "unexpected tensor '" + name + "'");
    }
    if (it->second.shape() != shape) {
      throw DataError(DataErrorKind::kSizeMismatch,
                      "tensor '" + name + "' has shape " + shape_to_string(shape) +
                          ", config requires " + shape_to_string(it->second.shape()));
    }
    dest->insert_or_assign(key, std::move(t));
  }
  for (const std::string& n : names) {
    const bool is_buffer = n.starts_with(kBufferPrefix);
    const auto& got = is_buffer ? buffers : params;
    if (!got.contains(is_buffer ? n.substr(kBufferPrefix.size()) : n)) {
      throw DataError(DataErrorKind::kTruncated, "checkpoint is missing tensor '" + n + "'");
    }
  }
  if (!r.at_end()) throw DataError(DataErrorKind::kSizeMismatch, "trailing bytes after checkpoint");

  Architecture arch = templ.architecture();
  return {Network<float>(config, std::move(arch), std::move(params), std::move(buffers)),
          std::move(velocity), val_loss};
}

}  // namespace volcnn
