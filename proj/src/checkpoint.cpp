#include "tha/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "tha/array_io.hpp"
#include "tha/errors.hpp"

namespace tha {

namespace {

Array to_array(const Eigen::MatrixXd& m) {
    Array a;
    a.dtype = Dtype::f64;
    a.dims = {m.rows(), m.cols()};
    a.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) a.data.push_back(m(r, c));
    }
    return a;
}

Eigen::MatrixXd from_array(const Array& a, const std::string& name) {
    if (a.dims.size() != 2) {
        throw ParseError("checkpoint array '" + name + "' must be rank 2, got rank " +
                         std::to_string(a.dims.size()));
    }
    Eigen::MatrixXd m(a.dims[0], a.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a.data[k++];
    }
    return m;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Eigen::MatrixXd& value) {
    if (name.empty() || name.find_first_of(" \n\r\t") != std::string::npos) {
        throw ValidationError("checkpoint array name '" + name + "' must be non-empty and "
                              "free of whitespace");
    }
    for (auto& entry : arrays) {
        if (entry.first == name) {
            entry.second = value;
            return;
        }
    }
    arrays.emplace_back(name, value);
}

const Eigen::MatrixXd& Checkpoint::get(const std::string& name) const {
    for (const auto& entry : arrays) {
        if (entry.first == name) return entry.second;
    }
    throw ParseError("checkpoint has no array named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& entry : arrays) {
        if (entry.first == name) return true;
    }
    return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open checkpoint file for writing: " + path);
    }
    const std::string manifest = ckpt.manifest.dump();
    out << "ckpt 1 " << ckpt.arrays.size() << "\n";
    out << "manifest " << manifest.size() << "\n" << manifest << "\n";
    for (const auto& entry : ckpt.arrays) {
        out << "array " << entry.first << "\n";
        write_array(out, to_array(entry.second));
    }
    if (!out) {
        throw IoError("failed while writing checkpoint file: " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint file: " + path);
    }
    std::string magic;
    int version = 0;
    std::size_t n_arrays = 0;
    in >> magic >> version >> n_arrays;
    if (!in || magic != "ckpt") {
        throw ParseError("not a checkpoint file: " + path);
    }
    if (version != 1) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version) + " in " +
                         path);
    }
    std::string tag;
    std::size_t manifest_size = 0;
    in >> tag >> manifest_size;
    if (!in || tag != "manifest") {
        throw ParseError("checkpoint missing manifest section: " + path);
    }
    in.get();  // newline after the size
    std::string manifest(manifest_size, '\0');
    in.read(manifest.data(), static_cast<std::streamsize>(manifest_size));
    if (!in) {
        throw ParseError("checkpoint manifest truncated: " + path);
    }

    Checkpoint ckpt;
    try {
        ckpt.manifest = nlohmann::json::parse(manifest);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint manifest is not valid JSON (" + std::string(e.what()) +
                         "): " + path);
    }
    for (std::size_t i = 0; i < n_arrays; ++i) {
        std::string name;
        in >> tag >> name;
        if (!in || tag != "array") {
            throw ParseError("checkpoint array section " + std::to_string(i) + " malformed: " +
                             path);
        }
        in.get();
        const Array a = read_array(in, "checkpoint array '" + name + "' in " + path);
        ckpt.put(name, from_array(a, name));
    }
    return ckpt;
}

void store_params(Checkpoint& ckpt, const std::vector<Tensor*>& params) {
    for (const Tensor* t : params) ckpt.put(t->name, t->value);
}

void load_params(const Checkpoint& ckpt, const std::vector<Tensor*>& params) {
    for (Tensor* t : params) {
        const Eigen::MatrixXd& stored = ckpt.get(t->name);
        if (stored.rows() != t->value.rows() || stored.cols() != t->value.cols()) {
            throw ParseError("checkpoint array '" + t->name + "' has shape " +
                             std::to_string(stored.rows()) + "x" + std::to_string(stored.cols()) +
                             ", expected " + std::to_string(t->value.rows()) + "x" +
                             std::to_string(t->value.cols()));
        }
        t->value = stored;
        t->grad.setZero();
    }
}

void store_adam(Checkpoint& ckpt, Adam& opt, const std::string& prefix) {
    ckpt.manifest[prefix + "_steps"] = opt.step_count();
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const std::string& name = opt.params()[i]->name;
        ckpt.put(prefix + "/m1/" + name, opt.moment1(i));
        ckpt.put(prefix + "/m2/" + name, opt.moment2(i));
    }
}

void restore_adam(const Checkpoint& ckpt, Adam& opt, const std::string& prefix) {
    if (!ckpt.manifest.contains(prefix + "_steps")) {
        throw ParseError("checkpoint manifest lacks '" + prefix + "_steps'");
    }
    opt.set_step_count(ckpt.manifest[prefix + "_steps"].get<long>());
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const std::string& name = opt.params()[i]->name;
        opt.moment1(i) = ckpt.get(prefix + "/m1/" + name);
        opt.moment2(i) = ckpt.get(prefix + "/m2/" + name);
    }
}

}  // namespace tha
