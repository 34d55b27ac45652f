#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "polyapx/errors.hpp"

namespace polyapx {

// One named f64 tensor, row-major.
struct Tensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    std::int64_t element_count() const;
};

using TensorBundle = std::vector<Tensor>;

// On-disk layout: 8-byte magic "PLYAPX01", 4-byte little-endian manifest
// length, UTF-8 JSON manifest [{name, dtype, shape, offset}, ...], raw
// little-endian blob. Offsets are relative to the blob start. Round-trips are
// bit-exact; files are identical regardless of host endianness.
inline constexpr char kBundleMagic[8] = {'P', 'L', 'Y', 'A', 'P', 'X', '0', '1'};

void bundle_write(const std::string& path, const TensorBundle& tensors);

// Reads f64 tensors; f32 payloads are upconverted. Malformed files raise
// format_error with byte offsets.
TensorBundle bundle_read(const std::string& path);

const Tensor& find_tensor(const TensorBundle& bundle, const std::string& name);
bool has_tensor(const TensorBundle& bundle, const std::string& name);

Tensor tensor_from_matrix(const std::string& name, const Eigen::MatrixXd& m);
Tensor tensor_from_vector(const std::string& name, const Eigen::VectorXd& v);
Tensor tensor_scalar(const std::string& name, double value);

Eigen::MatrixXd matrix_from_tensor(const Tensor& t);
Eigen::VectorXd vector_from_tensor(const Tensor& t);
double scalar_from_tensor(const Tensor& t);

}  // namespace polyapx
