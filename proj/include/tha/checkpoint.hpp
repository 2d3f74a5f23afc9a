#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "tha/nn.hpp"

namespace tha {

// Training artifact: a JSON manifest (config, step counter, corpus
// fingerprint) plus named double-precision arrays for parameters and
// optimizer state. Serialization is canonical, so save -> load -> save
// produces byte-identical files.
struct Checkpoint {
    nlohmann::json manifest = nlohmann::json::object();
    std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;

    void put(const std::string& name, const Eigen::MatrixXd& value);
    const Eigen::MatrixXd& get(const std::string& name) const;  // missing -> ParseError
    bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Stores every tensor under its own name.
void store_params(Checkpoint& ckpt, const std::vector<Tensor*>& params);
// Restores by name; missing entries or shape mismatches raise ParseError.
void load_params(const Checkpoint& ckpt, const std::vector<Tensor*>& params);

// Optimizer moments are stored as "<prefix>/m1/<param>" and
// "<prefix>/m2/<param>"; the step counter goes into the manifest.
void store_adam(Checkpoint& ckpt, Adam& opt, const std::string& prefix);
void restore_adam(const Checkpoint& ckpt, Adam& opt, const std::string& prefix);

}  // namespace tha
