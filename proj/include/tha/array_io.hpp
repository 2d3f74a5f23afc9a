#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace tha {

// N-dimensional array file: one text header line
//   arrf <version> <rank> <dim0> ... <dimN-1> <dtype>
// followed by a little-endian binary payload of exactly prod(dims) values.
// Embeddings are stored as f32; checkpoints use f64 so training can resume
// bit-exactly.
enum class Dtype { f32, f64 };

struct Array {
    std::vector<std::int64_t> dims;
    std::vector<double> data;  // row-major
    Dtype dtype = Dtype::f32;

    std::int64_t count() const;
    std::int64_t rows() const { return dims.empty() ? 0 : dims[0]; }
    std::int64_t cols() const { return dims.size() < 2 ? 1 : dims[1]; }
};

void write_array(std::ostream& out, const Array& a);
Array read_array(std::istream& in, const std::string& context);

void save_array(const std::string& path, const Array& a);
Array load_array(const std::string& path);

}  // namespace tha
