#include "darht/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "darht/errors.hpp"

namespace darht {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'R', 'H', 'T', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dropout: return "dropout";
  }
  return "?";
}

LayerKind parse_kind(const std::string& s) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "conv") return LayerKind::Conv;
  if (s == "relu") return LayerKind::Relu;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "dropout") return LayerKind::Dropout;
  throw FormatError("unknown layer kind '" + s + "'");
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CorruptionError("checkpoint is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["input_shape"] = spec.input_shape;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json lj{{"kind", kind_name(l.kind)}};
    if (l.kind == LayerKind::Dense || l.kind == LayerKind::Conv) lj["units"] = l.units;
    if (l.kind == LayerKind::Conv) {
      lj["kernel"] = l.kernel;
      lj["stride"] = l.stride;
    }
    if (l.kind == LayerKind::Dropout) lj["rate"] = l.rate;
    j["layers"].push_back(lj);
  }
  if (spec.head)
    j["head"] = {{"classes", spec.head->classes}, {"teachers", spec.head->teachers},
                 {"dropout_rate", spec.head->dropout_rate}};
  return j;
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_kind(lj.at("kind").get<std::string>());
      l.units = lj.value("units", std::size_t{0});
      l.kernel = lj.value("kernel", std::size_t{0});
      l.stride = lj.value("stride", std::size_t{1});
      l.rate = lj.value("rate", 0.0f);
      spec.layers.push_back(l);
    }
    if (j.contains("head")) {
      const auto& h = j["head"];
      spec.head = StudentHeadSpec{h.at("classes").get<std::size_t>(), h.at("teachers").get<std::size_t>(),
                                  h.at("dropout_rate").get<float>()};
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model spec: ") + e.what());
  }
}

std::string encode_checkpoint(const Model& model) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string spec = spec_to_json(model.spec()).dump();
  put<std::uint64_t>(out, spec.size());
  out += spec;
  put<std::uint64_t>(out, model.param_count());
  for (const Tensor& p : model.parameters())
    out.append(reinterpret_cast<const char*>(p.data().data()), p.size() * sizeof(float));
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

Model decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic || std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0)
    throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < r.pos() + 4) throw CorruptionError("checkpoint is truncated");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc_of(bytes.data(), body) != stored) throw CorruptionError("checkpoint checksum mismatch");

  const auto spec_len = r.get<std::uint64_t>();
  const char* spec_text = r.take(spec_len);
  nlohmann::json sj = nlohmann::json::parse(spec_text, spec_text + spec_len, nullptr, false);
  if (sj.is_discarded()) throw FormatError("checkpoint spec is not valid JSON");
  ModelSpec spec = spec_from_json(sj);
  Model model = [&] {
    try {
      return Model::build(spec, 0);
    } catch (const ConstructionError& e) {
      throw FormatError(std::string("checkpoint spec does not build: ") + e.what());
    }
  }();
  const auto count = r.get<std::uint64_t>();
  if (count != model.param_count() || r.pos() + count * sizeof(float) != body)
    throw CorruptionError("parameter blob length disagrees with the spec");
  for (Tensor& p : model.parameters()) {
    const char* src = r.take(p.size() * sizeof(float));
    std::memcpy(p.data().data(), src, p.size() * sizeof(float));
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace darht
