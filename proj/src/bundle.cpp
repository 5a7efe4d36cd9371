#include "subprune/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "subprune/zip_archive.hpp"

namespace subprune {

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are copied as little-endian host memory");

namespace {

constexpr char kMagic[4] = {'P', 'N', 'T', '1'};
constexpr std::size_t kFixedHeader = 12;
const std::string kManifestName = "manifest.json";
const std::string kTensorPrefix = "tensors/";
const std::string kTensorSuffix = ".pnt";

using Kind = BundleError::Kind;

std::string shape_str(const std::vector<std::uint64_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void check_payload(const TensorRecord& rec) {
  const std::uint64_t expected = rec.element_count() * element_size(rec.dtype);
  if (rec.payload.size() != expected) {
    throw BundleError(Kind::PayloadMismatch, "tensor '" + rec.name + "': payload has " +
                                                 std::to_string(rec.payload.size()) +
                                                 " bytes, shape " + shape_str(rec.shape) +
                                                 " needs " + std::to_string(expected));
  }
  for (auto d : rec.shape)
    if (d == 0) throw BundleError(Kind::PayloadMismatch, "tensor '" + rec.name + "' has a zero dimension");
}

DType dtype_from_code(std::uint8_t code) {
  if (code > 2) throw BundleError(Kind::UnknownDtype, "unknown dtype code " + std::to_string(code));
  return static_cast<DType>(code);
}

}  // namespace

std::size_t element_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I64: return 8;
  }
  return 0;
}

std::uint64_t TensorRecord::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

std::vector<std::uint8_t> encode_tensor(const TensorRecord& rec) {
  check_payload(rec);
  if (rec.shape.size() > 255) throw BundleError(Kind::PayloadMismatch, "too many dimensions");
  std::vector<std::uint8_t> out(kFixedHeader + 8 * rec.shape.size());
  std::memcpy(out.data(), kMagic, 4);
  out[4] = static_cast<std::uint8_t>(rec.dtype);
  out[5] = static_cast<std::uint8_t>(rec.shape.size());
  for (std::size_t i = 0; i < rec.shape.size(); ++i) {
    for (int b = 0; b < 8; ++b)
      out[kFixedHeader + 8 * i + b] = static_cast<std::uint8_t>(rec.shape[i] >> (8 * b));
  }
  out.insert(out.end(), rec.payload.begin(), rec.payload.end());
  return out;
}

void write_tensor(const TensorRecord& rec, std::ostream& sink) {
  const auto bytes = encode_tensor(rec);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TensorRecord read_tensor(std::istream& source) {
  std::uint8_t header[kFixedHeader];
  source.read(reinterpret_cast<char*>(header), kFixedHeader);
  if (source.gcount() < 4 || std::memcmp(header, kMagic, 4) != 0) {
    throw BundleError(Kind::BadMagic, "tensor stream does not start with PNT1");
  }
  if (source.gcount() != static_cast<std::streamsize>(kFixedHeader)) {
    throw BundleError(Kind::Truncated, "truncated tensor header");
  }
  TensorRecord rec;
  rec.dtype = dtype_from_code(header[4]);
  const std::size_t ndim = header[5];
  rec.shape.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    std::uint8_t dim[8];
    source.read(reinterpret_cast<char*>(dim), 8);
    if (source.gcount() != 8) throw BundleError(Kind::Truncated, "truncated tensor dims");
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(dim[b]) << (8 * b);
    rec.shape[i] = v;
  }
  const std::uint64_t bytes = rec.element_count() * element_size(rec.dtype);
  rec.payload.resize(bytes);
  source.read(reinterpret_cast<char*>(rec.payload.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::uint64_t>(source.gcount()) != bytes) {
    throw BundleError(Kind::Truncated, "truncated tensor payload: expected " + std::to_string(bytes) +
                                           " bytes, got " + std::to_string(source.gcount()));
  }
  return rec;
}

TensorRecord decode_tensor(const std::vector<std::uint8_t>& bytes) {
  std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_tensor(in);
}

TensorRecord make_tensor(std::string name, DType dtype, std::vector<std::uint64_t> shape,
                         const std::vector<double>& values) {
  TensorRecord rec{std::move(name), dtype, std::move(shape), {}};
  if (rec.element_count() != values.size()) {
    throw BundleError(Kind::PayloadMismatch, "tensor '" + rec.name + "': " +
                                                 std::to_string(values.size()) +
                                                 " values for shape " + shape_str(rec.shape));
  }
  rec.payload.resize(values.size() * element_size(dtype));
  if (dtype == DType::F64) {
    std::memcpy(rec.payload.data(), values.data(), rec.payload.size());
  } else if (dtype == DType::F32) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float f = static_cast<float>(values[i]);
      std::memcpy(rec.payload.data() + 4 * i, &f, 4);
    }
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto v = static_cast<std::int64_t>(values[i]);
      std::memcpy(rec.payload.data() + 8 * i, &v, 8);
    }
  }
  return rec;
}

TensorRecord make_index_tensor(std::string name, const std::vector<std::int64_t>& values) {
  TensorRecord rec{std::move(name), DType::I64, {values.size()}, {}};
  rec.payload.resize(values.size() * 8);
  std::memcpy(rec.payload.data(), values.data(), rec.payload.size());
  return rec;
}

std::vector<double> tensor_values(const TensorRecord& rec) {
  check_payload(rec);
  const std::size_t n = rec.element_count();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (rec.dtype) {
      case DType::F32: {
        float f;
        std::memcpy(&f, rec.payload.data() + 4 * i, 4);
        out[i] = f;
        break;
      }
      case DType::F64: std::memcpy(&out[i], rec.payload.data() + 8 * i, 8); break;
      case DType::I64: {
        std::int64_t v;
        std::memcpy(&v, rec.payload.data() + 8 * i, 8);
        out[i] = static_cast<double>(v);
        break;
      }
    }
  }
  return out;
}

std::vector<std::int64_t> tensor_indices(const TensorRecord& rec) {
  check_payload(rec);
  if (rec.dtype != DType::I64) {
    throw BundleError(Kind::Manifest, "tensor '" + rec.name + "' must be i64");
  }
  std::vector<std::int64_t> out(rec.element_count());
  std::memcpy(out.data(), rec.payload.data(), rec.payload.size());
  return out;
}

Matrix tensor_matrix(const TensorRecord& rec) {
  auto values = tensor_values(rec);
  const std::size_t rows = rec.shape.empty() ? 1 : rec.shape[0];
  const std::size_t cols = rows == 0 ? 0 : values.size() / rows;
  return Matrix(rows, cols, std::move(values));
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2: return "maxpool2";
  }
  return "?";
}

std::string to_string(Nonlinearity n) { return n == Nonlinearity::Relu ? "relu" : "none"; }

nlohmann::json manifest_to_json(const BundleManifest& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.model) {
    nlohmann::json j;
    j["name"] = l.name;
    j["kind"] = to_string(l.kind);
    j["weight"] = l.weight;
    j["bias"] = l.bias ? nlohmann::json(*l.bias) : nlohmann::json(nullptr);
    j["nonlinearity"] = to_string(l.nonlinearity);
    j["stride"] = l.stride;
    j["padding"] = l.padding;
    j["prunable"] = l.prunable;
    j["capture"] = l.capture ? nlohmann::json(*l.capture) : nlohmann::json(nullptr);
    j["patches"] = l.patches ? nlohmann::json(*l.patches) : nlohmann::json(nullptr);
    if (l.mask) j["mask"] = *l.mask;
    layers.push_back(std::move(j));
  }
  nlohmann::json out;
  out["format_version"] = m.format_version;
  out["model"] = std::move(layers);
  out["data"] = {{"inputs", m.data.inputs},
                 {"labels", m.data.labels},
                 {"verification", m.data.verification}};
  return out;
}

BundleManifest manifest_from_json(const nlohmann::json& j) {
  try {
    BundleManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kBundleFormatVersion) {
      throw BundleError(Kind::VersionMismatch, "bundle format_version " +
                                                   std::to_string(m.format_version) +
                                                   " is not supported (expected " +
                                                   std::to_string(kBundleFormatVersion) + ")");
    }
    auto opt_string = [](const nlohmann::json& o, const char* key) -> std::optional<std::string> {
      if (!o.contains(key) || o.at(key).is_null()) return std::nullopt;
      return o.at(key).get<std::string>();
    };
    for (const auto& lj : j.at("model")) {
      LayerDescriptor l;
      l.name = lj.at("name").get<std::string>();
      const auto kind = lj.at("kind").get<std::string>();
      if (kind == "dense") l.kind = LayerKind::Dense;
      else if (kind == "conv2d") l.kind = LayerKind::Conv2d;
      else if (kind == "maxpool2") l.kind = LayerKind::MaxPool2;
      else throw BundleError(Kind::Manifest, "layer '" + l.name + "': unknown kind '" + kind + "'");
      l.weight = lj.value("weight", std::string());
      l.bias = opt_string(lj, "bias");
      const auto nl = lj.value("nonlinearity", std::string("none"));
      if (nl == "relu") l.nonlinearity = Nonlinearity::Relu;
      else if (nl == "none") l.nonlinearity = Nonlinearity::None;
      else throw BundleError(Kind::Manifest, "layer '" + l.name + "': unknown nonlinearity '" + nl + "'");
      l.stride = lj.value("stride", std::size_t{1});
      l.padding = lj.value("padding", std::size_t{0});
      l.prunable = lj.value("prunable", false);
      l.capture = opt_string(lj, "capture");
      l.patches = opt_string(lj, "patches");
      l.mask = opt_string(lj, "mask");
      m.model.push_back(std::move(l));
    }
    const auto& d = j.at("data");
    m.data.inputs = d.at("inputs").get<std::string>();
    m.data.labels = d.at("labels").get<std::string>();
    m.data.verification = d.at("verification").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(Kind::Manifest, std::string("malformed manifest: ") + e.what());
  }
}

void validate_bundle(const BundleManifest& manifest, const TensorTable& tensors) {
  auto resolve = [&](const std::string& ref, const std::string& owner) -> const TensorRecord& {
    auto it = tensors.find(ref);
    if (it == tensors.end()) {
      throw BundleError(Kind::MissingTensor, "missing tensor '" + ref + "' referenced by " + owner);
    }
    return it->second;
  };
  auto chain_error = [](const std::string& layer, const std::string& msg) {
    return BundleError(Kind::ShapeChain, "layer '" + layer + "': " + msg);
  };

  const auto& inputs = resolve(manifest.data.inputs, "data.inputs");
  if (inputs.shape.size() != 2 && inputs.shape.size() != 4) {
    throw chain_error("<input>", "inputs must be [n, d] or [n, c, h, w], got " + shape_str(inputs.shape));
  }
  const std::uint64_t batch = inputs.shape[0];
  std::vector<std::uint64_t> dims(inputs.shape.begin() + 1, inputs.shape.end());

  const auto& labels = resolve(manifest.data.labels, "data.labels");
  if (labels.dtype != DType::I64 || labels.shape != std::vector<std::uint64_t>{batch}) {
    throw BundleError(Kind::ShapeChain, "labels must be i64 of shape [" + std::to_string(batch) + "]");
  }
  const auto& verify = resolve(manifest.data.verification, "data.verification");
  for (auto idx : tensor_indices(verify)) {
    if (idx < 0 || static_cast<std::uint64_t>(idx) >= batch) {
      throw BundleError(Kind::ShapeChain, "verification index " + std::to_string(idx) + " out of range");
    }
  }

  if (manifest.model.empty()) throw BundleError(Kind::Manifest, "model has no layers");
  for (std::size_t li = 0; li < manifest.model.size(); ++li) {
    const auto& l = manifest.model[li];
    const std::string owner = "layer '" + l.name + "'";
    const std::uint64_t features =
        std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
    std::uint64_t out_units = 0;
    switch (l.kind) {
      case LayerKind::Dense: {
        const auto& w = resolve(l.weight, owner);
        if (w.shape.size() != 2) throw chain_error(l.name, "dense weight must be [n_in, n_out]");
        if (w.shape[0] != features) {
          throw chain_error(l.name, "dense weight " + shape_str(w.shape) + " expects " +
                                        std::to_string(w.shape[0]) + " inputs, previous layer gives " +
                                        std::to_string(features));
        }
        out_units = w.shape[1];
        dims = {out_units};
        break;
      }
      case LayerKind::Conv2d: {
        const auto& w = resolve(l.weight, owner);
        if (w.shape.size() != 4) throw chain_error(l.name, "conv weight must be [out_c, in_c, k_h, k_w]");
        if (dims.size() != 3 || dims[0] != w.shape[1]) {
          throw chain_error(l.name, "conv weight " + shape_str(w.shape) + " does not match input " +
                                        shape_str(dims));
        }
        if (l.stride == 0) throw chain_error(l.name, "stride must be positive");
        std::vector<std::uint64_t> next{w.shape[0], 0, 0};
        for (int a = 0; a < 2; ++a) {
          const std::uint64_t span = dims[1 + a] + 2 * l.padding;
          const std::uint64_t k = w.shape[2 + a];
          if (span < k || (span - k) % l.stride != 0) {
            throw chain_error(l.name, "non-integral conv output for input " + shape_str(dims));
          }
          next[1 + a] = (span - k) / l.stride + 1;
        }
        out_units = w.shape[0];
        dims = next;
        break;
      }
      case LayerKind::MaxPool2:
        if (dims.size() != 3 || dims[1] < 2 || dims[2] < 2) {
          throw chain_error(l.name, "maxpool2 needs a [c, h, w] input with h, w >= 2");
        }
        dims = {dims[0], dims[1] / 2, dims[2] / 2};
        if (l.prunable) throw chain_error(l.name, "maxpool2 layers cannot be prunable");
        break;
    }
    if (l.bias) {
      const auto& b = resolve(*l.bias, owner);
      if (b.element_count() != out_units) {
        throw chain_error(l.name, "bias has " + std::to_string(b.element_count()) + " entries, expected " +
                                      std::to_string(out_units));
      }
    }
    if (l.capture) resolve(*l.capture, owner);
    if (l.patches) resolve(*l.patches, owner);
    if (l.mask) {
      const auto& mk = resolve(*l.mask, owner);
      if (mk.dtype != DType::I64 || mk.element_count() != out_units) {
        throw chain_error(l.name, "mask must be i64 with " + std::to_string(out_units) + " entries");
      }
    }
    if (l.prunable) {
      bool has_successor = false;
      for (std::size_t s = li + 1; s < manifest.model.size(); ++s) {
        if (manifest.model[s].kind == LayerKind::MaxPool2) continue;
        has_successor = true;
        break;
      }
      if (!has_successor) throw chain_error(l.name, "prunable layer has no weighted successor");
    }
  }
}

std::vector<std::uint8_t> encode_bundle(const BundleManifest& manifest, const TensorTable& tensors) {
  std::vector<zip::Entry> entries;
  const auto text = manifest_to_json(manifest).dump(2);
  entries.push_back({kManifestName, std::vector<std::uint8_t>(text.begin(), text.end())});
  // std::map iterates in name order
  for (const auto& [name, rec] : tensors) {
    if (name != rec.name) {
      throw BundleError(Kind::Manifest, "tensor table key '" + name + "' differs from record name '" +
                                            rec.name + "'");
    }
    entries.push_back({kTensorPrefix + name + kTensorSuffix, encode_tensor(rec)});
  }
  return zip::write_archive(entries);
}

Bundle decode_bundle(const std::vector<std::uint8_t>& bytes) {
  std::vector<zip::Entry> entries;
  try {
    entries = zip::read_archive(bytes);
  } catch (const zip::ArchiveError& e) {
    throw BundleError(Kind::Archive, e.what());
  }
  Bundle b;
  bool have_manifest = false;
  for (auto& e : entries) {
    if (e.name == kManifestName) {
      try {
        b.manifest = manifest_from_json(nlohmann::json::parse(e.data.begin(), e.data.end()));
      } catch (const nlohmann::json::parse_error& pe) {
        throw BundleError(Kind::Manifest, std::string("manifest.json is not valid JSON: ") + pe.what());
      }
      have_manifest = true;
    } else if (e.name.starts_with(kTensorPrefix) && e.name.ends_with(kTensorSuffix)) {
      const std::string name = e.name.substr(
          kTensorPrefix.size(), e.name.size() - kTensorPrefix.size() - kTensorSuffix.size());
      auto rec = decode_tensor(e.data);
      rec.name = name;
      b.tensors.emplace(name, std::move(rec));
    }
  }
  if (!have_manifest) throw BundleError(Kind::Manifest, "archive has no manifest.json");
  validate_bundle(b.manifest, b.tensors);
  return b;
}

void save_bundle(const BundleManifest& manifest, const TensorTable& tensors,
                 const std::filesystem::path& path) {
  validate_bundle(manifest, tensors);
  const auto bytes = encode_bundle(manifest, tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw BundleError(Kind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw BundleError(Kind::Io, "write failed for '" + path.string() + "'");
}

Bundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(Kind::Io, "cannot open bundle '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_bundle(bytes);
}

}  // namespace subprune
