#pragma once

// Dataset container, little-endian:
//
//   offset  size  field
//   0       4     magic "NFE1"
//   4       4     u32 format version (1)
//   8       4     u32 n_subjects
//   12      2x6   u16 H, W, D, T, T_active, M
//   24      1     u8 cohort (0 ptsd, 1 fibromyalgia, 2 control, 3 synthetic)
//   25      ...   per subject:
//                   u16 id length, UTF-8 id
//                   f32 x M*T*H*W*D         passive frames, (run, time, h, w, d)
//                   f32 x M*T_active*H*W*D  active frames,  (run, time, h, w, d)
//   ...     rest  UTF-8 JSON trailer to end of file:
//                 {"format": "nfembed-dataset",
//                  "subjects": [{"id", "cohort", "traits": {...}}, ...],
//                  "provenance": {...}}

#include <string>
#include <string_view>

#include "nfembed/datamodel/dataset.hpp"

namespace nfembed {

inline constexpr std::string_view kDatasetMagic = "NFE1";
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string encode_dataset(const Dataset& ds);
/// Throws FormatError (with byte offset) on bad magic, version, truncation or
/// a malformed trailer, and DataError if the decoded dataset is invalid.
Dataset decode_dataset(std::string_view bytes);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace nfembed
