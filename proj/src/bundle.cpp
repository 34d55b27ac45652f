#include "polyapx/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace polyapx {

std::int64_t Tensor::element_count() const {
    std::int64_t n = 1;
    for (std::int64_t s : shape) {
        if (s < 0) throw invalid_input_error("tensor " + name + ": negative shape entry");
        n *= s;
    }
    return n;
}

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64_le(std::string& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

float get_f32_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace

void bundle_write(const std::string& path, const TensorBundle& tensors) {
    {
        std::set<std::string> names;
        for (const Tensor& t : tensors) {
            if (!names.insert(t.name).second) {
                throw invalid_input_error("bundle_write: duplicate tensor name " + t.name);
            }
            if (t.element_count() != static_cast<std::int64_t>(t.data.size())) {
                throw invalid_input_error("bundle_write: tensor " + t.name +
                                          " data size does not match its shape");
            }
        }
    }

    nlohmann::json manifest = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const Tensor& t : tensors) {
        nlohmann::json entry;
        entry["name"] = t.name;
        entry["dtype"] = "f64";
        entry["shape"] = t.shape;
        entry["offset"] = offset;
        manifest.push_back(entry);
        offset += static_cast<std::int64_t>(t.data.size()) * 8;
    }
    const std::string manifest_text = manifest.dump();

    std::string out;
    out.reserve(12 + manifest_text.size() + static_cast<std::size_t>(offset));
    out.append(kBundleMagic, sizeof(kBundleMagic));
    put_u32_le(out, static_cast<std::uint32_t>(manifest_text.size()));
    out.append(manifest_text);
    for (const Tensor& t : tensors) {
        for (double v : t.data) put_f64_le(out, v);
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw format_error("bundle_write: cannot open " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw format_error("bundle_write: short write to " + path);
}

TensorBundle bundle_read(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw format_error("bundle_read: cannot open " + path);
    std::string raw((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());

    if (raw.size() < 12) {
        throw format_error("bundle_read: " + path + " has " + std::to_string(raw.size()) +
                           " bytes, need at least 12 for magic and manifest length");
    }
    if (std::memcmp(raw.data(), kBundleMagic, sizeof(kBundleMagic)) != 0) {
        throw format_error("bundle_read: bad magic in " + path);
    }
    const std::uint32_t manifest_len = get_u32_le(bytes + 8);
    if (raw.size() < 12 + static_cast<std::size_t>(manifest_len)) {
        throw format_error("bundle_read: truncated manifest in " + path + ": expected " +
                           std::to_string(12 + manifest_len) + " bytes, file has " +
                           std::to_string(raw.size()));
    }

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(raw.substr(8 + 4, manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw format_error("bundle_read: manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!manifest.is_array()) throw format_error("bundle_read: manifest must be a JSON array");

    const std::size_t blob_start = 12 + manifest_len;
    const std::int64_t blob_size = static_cast<std::int64_t>(raw.size() - blob_start);

    struct Entry {
        std::string name;
        std::string dtype;
        std::vector<std::int64_t> shape;
        std::int64_t offset;
        std::int64_t byte_size;
    };
    std::vector<Entry> entries;
    std::set<std::string> names;
    for (const nlohmann::json& j : manifest) {
        Entry e;
        try {
            e.name = j.at("name").get<std::string>();
            e.dtype = j.at("dtype").get<std::string>();
            e.shape = j.at("shape").get<std::vector<std::int64_t>>();
            e.offset = j.at("offset").get<std::int64_t>();
        } catch (const nlohmann::json::exception& ex) {
            throw format_error("bundle_read: bad manifest entry: " + std::string(ex.what()));
        }
        if (!names.insert(e.name).second) {
            throw format_error("bundle_read: duplicate tensor name " + e.name);
        }
        int esize = 0;
        if (e.dtype == "f64") {
            esize = 8;
        } else if (e.dtype == "f32") {
            esize = 4;
        } else {
            throw format_error("bundle_read: unsupported dtype " + e.dtype + " for " + e.name);
        }
        std::int64_t count = 1;
        for (std::int64_t s : e.shape) {
            if (s < 0) throw format_error("bundle_read: negative shape entry in " + e.name);
            count *= s;
        }
        e.byte_size = count * esize;
        if (e.offset < 0 || e.offset + e.byte_size > blob_size) {
            throw format_error("bundle_read: tensor " + e.name + " spans bytes [" +
                               std::to_string(e.offset) + ", " +
                               std::to_string(e.offset + e.byte_size) + ") but the blob has " +
                               std::to_string(blob_size) + " bytes");
        }
        entries.push_back(std::move(e));
    }

    // Offsets must tile the blob exactly: nonoverlapping and accounting for
    // every byte.
    std::vector<const Entry*> by_offset;
    std::int64_t total = 0;
    for (const Entry& e : entries) {
        by_offset.push_back(&e);
        total += e.byte_size;
    }
    std::sort(by_offset.begin(), by_offset.end(),
              [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
    for (std::size_t i = 1; i < by_offset.size(); ++i) {
        if (by_offset[i]->offset < by_offset[i - 1]->offset + by_offset[i - 1]->byte_size) {
            throw format_error("bundle_read: tensors " + by_offset[i - 1]->name + " and " +
                               by_offset[i]->name + " overlap at byte offset " +
                               std::to_string(by_offset[i]->offset));
        }
    }
    if (total != blob_size) {
        throw format_error("bundle_read: blob has " + std::to_string(blob_size) +
                           " bytes but the manifest accounts for " + std::to_string(total));
    }

    TensorBundle out;
    out.reserve(entries.size());
    for (const Entry& e : entries) {
        Tensor t;
        t.name = e.name;
        t.shape = e.shape;
        const int esize = e.dtype == "f64" ? 8 : 4;
        const std::int64_t count = e.byte_size / esize;
        t.data.resize(static_cast<std::size_t>(count));
        const unsigned char* p = bytes + blob_start + e.offset;
        for (std::int64_t i = 0; i < count; ++i, p += esize) {
            t.data[static_cast<std::size_t>(i)] =
                esize == 8 ? get_f64_le(p) : static_cast<double>(get_f32_le(p));
        }
        out.push_back(std::move(t));
    }
    return out;
}

bool has_tensor(const TensorBundle& bundle, const std::string& name) {
    for (const Tensor& t : bundle) {
        if (t.name == name) return true;
    }
    return false;
}

const Tensor& find_tensor(const TensorBundle& bundle, const std::string& name) {
    for (const Tensor& t : bundle) {
        if (t.name == name) return t;
    }
    throw format_error("bundle: missing tensor " + name);
}

Tensor tensor_from_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    Tensor t;
    t.name = name;
    t.shape = {m.rows(), m.cols()};
    t.data.resize(static_cast<std::size_t>(m.size()));
    std::size_t idx = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.data[idx++] = m(r, c);
    }
    return t;
}

Tensor tensor_from_vector(const std::string& name, const Eigen::VectorXd& v) {
    Tensor t;
    t.name = name;
    t.shape = {v.size()};
    t.data.assign(v.data(), v.data() + v.size());
    return t;
}

Tensor tensor_scalar(const std::string& name, double value) {
    Tensor t;
    t.name = name;
    t.shape = {};
    t.data = {value};
    return t;
}

Eigen::MatrixXd matrix_from_tensor(const Tensor& t) {
    if (t.shape.size() != 2) {
        throw format_error("tensor " + t.name + ": expected rank 2, got rank " +
                           std::to_string(t.shape.size()));
    }
    Eigen::MatrixXd m(t.shape[0], t.shape[1]);
    std::size_t idx = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[idx++];
    }
    return m;
}

Eigen::VectorXd vector_from_tensor(const Tensor& t) {
    if (t.shape.size() != 1) {
        throw format_error("tensor " + t.name + ": expected rank 1, got rank " +
                           std::to_string(t.shape.size()));
    }
    return Eigen::Map<const Eigen::VectorXd>(t.data.data(),
                                             static_cast<Eigen::Index>(t.data.size()));
}

double scalar_from_tensor(const Tensor& t) {
    if (t.element_count() != 1) {
        throw format_error("tensor " + t.name + ": expected a scalar");
    }
    return t.data[0];
}

}  // namespace polyapx
