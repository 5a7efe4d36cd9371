#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "subprune/matrix.hpp"

namespace subprune {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2 };

std::size_t element_size(DType t);

/// Named n-d array with a raw little-endian payload. Empty shape means scalar.
struct TensorRecord {
  std::string name;
  DType dtype = DType::F64;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> payload;

  std::uint64_t element_count() const;
  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

class BundleError : public std::runtime_error {
 public:
  enum class Kind {
    BadMagic,
    Truncated,
    UnknownDtype,
    PayloadMismatch,
    MissingTensor,
    ShapeChain,
    VersionMismatch,
    Manifest,
    Archive,
    Io,
  };
  BundleError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Serialized layout: "PNT1" | dtype u8 | ndim u8 | 6 zero bytes |
/// ndim x u64 LE dims | row-major LE payload.
void write_tensor(const TensorRecord& rec, std::ostream& sink);
std::vector<std::uint8_t> encode_tensor(const TensorRecord& rec);
TensorRecord read_tensor(std::istream& source);
TensorRecord decode_tensor(const std::vector<std::uint8_t>& bytes);

TensorRecord make_tensor(std::string name, DType dtype, std::vector<std::uint64_t> shape,
                         const std::vector<double>& values);
TensorRecord make_index_tensor(std::string name, const std::vector<std::int64_t>& values);
/// Any float dtype promoted to double; integers converted.
std::vector<double> tensor_values(const TensorRecord& rec);
std::vector<std::int64_t> tensor_indices(const TensorRecord& rec);
/// 2-d tensor as a Matrix; higher rank tensors are viewed as [shape0, prod(rest)].
Matrix tensor_matrix(const TensorRecord& rec);

enum class LayerKind { Dense, Conv2d, MaxPool2 };
enum class Nonlinearity { None, Relu };

std::string to_string(LayerKind k);
std::string to_string(Nonlinearity n);

struct LayerDescriptor {
  std::string name;
  LayerKind kind = LayerKind::Dense;
  std::string weight;  // empty for maxpool2
  std::optional<std::string> bias;
  Nonlinearity nonlinearity = Nonlinearity::None;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool prunable = false;
  /// Raw post-nonlinearity activations of this layer.
  std::optional<std::string> capture;
  /// Activations arranged for the successor (patch matrix or flattened map).
  std::optional<std::string> patches;
  /// i64 0/1 vector over output units; absent means every unit is kept.
  std::optional<std::string> mask;
};

struct DataRefs {
  std::string inputs;
  std::string labels;
  std::string verification;
};

inline constexpr int kBundleFormatVersion = 1;

struct BundleManifest {
  int format_version = kBundleFormatVersion;
  std::vector<LayerDescriptor> model;
  DataRefs data;
};

using TensorTable = std::map<std::string, TensorRecord>;

struct Bundle {
  BundleManifest manifest;
  TensorTable tensors;
};

nlohmann::json manifest_to_json(const BundleManifest& m);
BundleManifest manifest_from_json(const nlohmann::json& j);

/// Checks ref resolution and the layer shape chain; throws BundleError.
void validate_bundle(const BundleManifest& manifest, const TensorTable& tensors);

/// Archive layout: manifest.json first, then tensors/<name>.pnt sorted by name.
std::vector<std::uint8_t> encode_bundle(const BundleManifest& manifest, const TensorTable& tensors);
Bundle decode_bundle(const std::vector<std::uint8_t>& bytes);

void save_bundle(const BundleManifest& manifest, const TensorTable& tensors,
                 const std::filesystem::path& path);
Bundle load_bundle(const std::filesystem::path& path);

}  // namespace subprune
