#include "tha/array_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "tha/errors.hpp"

namespace tha {

static_assert(std::endian::native == std::endian::little,
              "array payloads are little-endian; big-endian hosts are unsupported");

std::int64_t Array::count() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

void write_array(std::ostream& out, const Array& a) {
    if (a.count() != static_cast<std::int64_t>(a.data.size()))
        throw ValidationError("array dims/payload size mismatch");
    out << "arrf 1 " << a.dims.size();
    for (std::int64_t d : a.dims) out << ' ' << d;
    out << ' ' << (a.dtype == Dtype::f32 ? "f32" : "f64") << '\n';
    if (a.dtype == Dtype::f32) {
        std::vector<float> buf(a.data.begin(), a.data.end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    } else {
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("array write failed");
}

Array read_array(std::istream& in, const std::string& context) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(context + ": missing array header");
    std::istringstream hdr(line);
    std::string magic, dtype;
    int version = 0;
    std::size_t rank = 0;
    if (!(hdr >> magic >> version >> rank) || magic != "arrf")
        throw ParseError(context + ": bad array magic, expected 'arrf'");
    if (version != 1) throw ParseError(context + ": unsupported array version");
    if (rank > 8) throw ParseError(context + ": implausible rank in header");

    Array a;
    a.dims.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (!(hdr >> a.dims[i]) || a.dims[i] <= 0)
            throw ParseError(context + ": bad dim in array header");
    }
    if (!(hdr >> dtype)) throw ParseError(context + ": missing dtype in array header");
    if (dtype == "f32")
        a.dtype = Dtype::f32;
    else if (dtype == "f64")
        a.dtype = Dtype::f64;
    else
        throw ParseError(context + ": unknown dtype '" + dtype + "'");

    const std::int64_t n = a.count();
    a.data.resize(static_cast<std::size_t>(n));
    if (a.dtype == Dtype::f32) {
        std::vector<float> buf(static_cast<std::size_t>(n));
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw ParseError(context + ": truncated f32 payload");
        for (std::size_t i = 0; i < buf.size(); ++i) a.data[i] = buf[i];
    } else {
        in.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        if (!in) throw ParseError(context + ": truncated f64 payload");
    }
    for (double v : a.data) {
        if (!std::isfinite(v)) throw ParseError(context + ": non-finite value in payload");
    }
    return a;
}

void save_array(const std::string& path, const Array& a) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    write_array(out, a);
}

Array load_array(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return read_array(in, path);
}

}  // namespace tha
