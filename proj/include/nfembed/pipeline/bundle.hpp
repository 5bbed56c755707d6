#pragma once

// Model bundle, little-endian:
//
//   offset  size  field
//   0       4     magic "NFB1"
//   4       4     u32 format version (1)
//   8       4     u32 n_tensors
//   12      ...   per tensor:
//                   u16 name length, UTF-8 name
//                   u8 rank, u32 x rank dims
//                   f64 x prod(dims) values, row-major
//   ...     4     u32 metadata length
//   ...     n     UTF-8 JSON metadata ({"kind": ..., hyperparameters, seeds, loss curves})

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nfembed/numerics/tape.hpp"

namespace nfembed {

inline constexpr std::string_view kBundleMagic = "NFB1";
inline constexpr std::uint32_t kBundleVersion = 1;

struct ModelBundle {
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json meta = nlohmann::json::object();

  void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
  bool has(std::string_view name) const;
  /// Throws FormatError naming the missing tensor.
  const Tensor& tensor(std::string_view name) const;
  /// Metadata "kind" field; empty if absent.
  std::string kind() const;
};

std::string encode_bundle(const ModelBundle& b);
ModelBundle decode_bundle(std::string_view bytes);
void save_bundle(const ModelBundle& b, const std::string& path);
ModelBundle load_bundle(const std::string& path);

/// Copies every parameter value into the bundle under its own name.
void add_parameters(ModelBundle& b, std::span<Parameter* const> params);
/// Restores every parameter from the bundle; shapes must match exactly.
void load_parameters(const ModelBundle& b, std::span<Parameter* const> params);

/// Stable digest of parameter names, shapes and bit patterns.
std::uint64_t parameter_checksum(std::span<const Parameter* const> params);

/// Loss curve rows "epoch,<col>,<col>..." for CSV export.
std::string curves_csv(const std::vector<std::string>& names, const std::vector<std::vector<double>>& columns);

}  // namespace nfembed
