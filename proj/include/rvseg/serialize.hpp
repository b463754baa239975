#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "rvseg/tensor.hpp"

namespace rvseg {

// Binary tensor blob, little-endian throughout:
//
//   "ITSE" | version u32 | dtype u8 (0 = f32, 1 = f64) | rank u32 |
//   extents u64 x rank | payload (numel raw scalars)
//
// Round-trips are bit-exact: the payload is the in-memory representation of
// the buffer, so NaN patterns and signed zeros survive.
inline constexpr uint32_t kBlobVersion = 1;

template <typename T>
void write_blob(std::ostream& os, const Tensor<T>& t);

// Reads one blob. Throws IoError on bad magic, unknown version/dtype,
// truncation, or if the stored dtype is not T.
template <typename T>
Tensor<T> read_blob(std::istream& is);

// Peeks the dtype byte of the next blob without consuming the stream.
Dtype peek_blob_dtype(std::istream& is);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load_tensor(const std::string& path);

// Checkpoint container: a JSON config header followed by named blobs.
//
//   u32 header_len | header (UTF-8 JSON) | repeat: u32 name_len | name | blob
//
// The header is stored verbatim; interpreting it is the caller's business
// (the model layer compares it against its own config before accepting
// the tensors).
template <typename T>
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor<T>>>& tensors);

template <typename T>
struct Checkpoint {
    std::string config_json;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

// Reads only the JSON header of a checkpoint, so callers can learn the
// stored config (notably its dtype) before committing to a scalar type.
std::string read_checkpoint_header(const std::string& path);

extern template void write_blob<float>(std::ostream&, const Tensor<float>&);
extern template void write_blob<double>(std::ostream&, const Tensor<double>&);
extern template Tensor<float> read_blob<float>(std::istream&);
extern template Tensor<double> read_blob<double>(std::istream&);
extern template void save_tensor<float>(const std::string&, const Tensor<float>&);
extern template void save_tensor<double>(const std::string&, const Tensor<double>&);
extern template Tensor<float> load_tensor<float>(const std::string&);
extern template Tensor<double> load_tensor<double>(const std::string&);
extern template void save_checkpoint<float>(
    const std::string&, const std::string&,
    const std::vector<std::pair<std::string, Tensor<float>>>&);
extern template void save_checkpoint<double>(
    const std::string&, const std::string&,
    const std::vector<std::pair<std::string, Tensor<double>>>&);
extern template Checkpoint<float> load_checkpoint<float>(const std::string&);
extern template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace rvseg
