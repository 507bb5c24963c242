#include "cram/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cram/config.hpp"
#include "cram/errors.hpp"

namespace cram {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'R', 'A', 'M'};

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - pos_) throw FormatError(std::string("truncated ") + what, pos_);
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const std::string& name, const Shape& shape, std::span<const double> values,
                bool as_f32) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, as_f32 ? 1 : 0);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) put<std::uint64_t>(out, d);
  for (double v : values) {
    if (as_f32) {
      put<float>(out, static_cast<float>(v));
    } else {
      put<double>(out, v);
    }
  }
}

std::string bn_name(std::size_t layer, const char* which) {
  return "bn" + std::to_string(layer) + "." + which;
}

}  // namespace

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  return a.model_config == b.model_config && a.params.same_layout(b.params) && a.params.same_values(b.params) &&
         a.bn == b.bn && a.optimizer == b.optimizer && a.seed == b.seed && a.step == b.step &&
         a.dataset_fingerprint == b.dataset_fingerprint && a.library_version == b.library_version &&
         a.extra == b.extra;
}

std::string serialize_checkpoint(const Checkpoint& c, bool as_f32) {
  const nlohmann::json meta{{"model", config::to_json(c.model_config)},
                            {"optimizer", config::to_json(c.optimizer)},
                            {"bn_mode", std::string(nn::bn_mode_name(c.bn.mode))},
                            {"seed", c.seed},
                            {"step", c.step},
                            {"dataset_fingerprint", c.dataset_fingerprint},
                            {"library_version", c.library_version},
                            {"extra", c.extra}};
  const std::string meta_text = meta.dump();
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.params.size() + 2 * c.bn.layers.size()));
  for (const auto& e : c.params) put_tensor(out, e.name, e.tensor.shape, e.tensor.data, as_f32);
  for (std::size_t l = 0; l < c.bn.layers.size(); ++l) {
    const auto& s = c.bn.layers[l];
    put_tensor(out, bn_name(l, "running_mean"), {s.running_mean.size()}, s.running_mean, as_f32);
    put_tensor(out, bn_name(l, "running_var"), {s.running_var.size()}, s.running_var, as_f32);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string(kMagic, 4)) throw FormatError("bad checkpoint magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  const std::size_t meta_at = r.pos();
  if (meta_len > bytes.size()) throw FormatError("truncated metadata", meta_at);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.take(static_cast<std::size_t>(meta_len), "metadata"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what(), meta_at);
  }

  Checkpoint c;
  try {
    c.model_config = config::model_from_json(meta.at("model"), "metadata.model");
    c.optimizer = config::optimizer_from_json(meta.at("optimizer"), "metadata.optimizer");
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.step = meta.at("step").get<std::size_t>();
    c.dataset_fingerprint = meta.at("dataset_fingerprint").get<std::uint64_t>();
    c.library_version = meta.at("library_version").get<std::string>();
    c.extra = meta.at("extra");
    nn::Model layout = nn::init_model(c.model_config, 0);
    c.params = std::move(layout.params);
    c.bn = std::move(layout.bn);
    c.bn.mode = nn::parse_bn_mode(meta.at("bn_mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("incomplete metadata: ") + e.what(), meta_at);
  } catch (const InputError& e) {
    throw FormatError(std::string("invalid metadata: ") + e.what(), meta_at);
  }

  const std::size_t expected = c.params.size() + 2 * c.bn.layers.size();
  const std::size_t count_at = r.pos();
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != expected) {
    throw FormatError("expected " + std::to_string(expected) + " tensors, found " + std::to_string(count), count_at);
  }
  std::vector<std::uint8_t> filled(expected, 0);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t at = r.pos();
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    const std::string name = r.take(name_len, "tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype > 1) throw FormatError("unknown dtype code " + std::to_string(dtype) + " for " + name, r.pos() - 1);
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>("dims"));

    std::span<double> dest;
    Shape want;
    std::size_t slot = 0;
    if (auto i = c.params.find(name)) {
      dest = c.params[*i].tensor.data;
      want = c.params[*i].tensor.shape;
      slot = *i;
    } else {
      bool found = false;
      for (std::size_t l = 0; l < c.bn.layers.size() && !found; ++l) {
        if (name == bn_name(l, "running_mean")) {
          dest = c.bn.layers[l].running_mean;
          slot = c.params.size() + 2 * l;
          found = true;
        } else if (name == bn_name(l, "running_var")) {
          dest = c.bn.layers[l].running_var;
          slot = c.params.size() + 2 * l + 1;
          found = true;
        }
      }
      if (!found) throw FormatError("unexpected tensor '" + name + "'", at);
      want = {dest.size()};
    }
    if (filled[slot]) throw FormatError("duplicate tensor '" + name + "'", at);
    filled[slot] = 1;
    if (shape != want) {
      throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " + shape_string(want),
                        at);
    }
    const std::size_t width = dtype == 0 ? 8 : 4;
    r.need(dest.size() * width, "tensor values");
    for (double& v : dest) v = dtype == 0 ? r.get<double>("value") : static_cast<double>(r.get<float>("value"));
  }
  if (!r.done()) throw FormatError("trailing bytes after last tensor", r.pos());
  return c;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string());
  }
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path, bool as_f32) {
  write_file_atomic(path, serialize_checkpoint(c, as_f32));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace cram
