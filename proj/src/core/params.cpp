#include "core/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "core/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight files assume a little-endian host");

namespace oseg {

using json = nlohmann::json;

Tensor& ParamStore::add(const std::string& name, Tensor t, bool trainable) {
    if (name.empty()) {
        throw_invalid("param store: empty name");
    }
    if (entries_.count(name)) {
        throw_invalid("param store: duplicate name '" + name + "'");
    }
    if (!t.defined()) {
        throw_invalid("param store: undefined tensor for '" + name + "'");
    }
    t.set_requires_grad(trainable);
    auto [it, ok] = entries_.emplace(name, ParamEntry{std::move(t), trainable});
    (void)ok;
    return it->second.tensor;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw_invalid("param store: unknown name '" + name + "'");
    }
    return it->second.tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw_invalid("param store: unknown name '" + name + "'");
    }
    return it->second.tensor;
}

bool ParamStore::contains(const std::string& name) const {
    return entries_.count(name) != 0;
}

void ParamStore::zero_grads() {
    for (auto& [name, entry] : entries_) {
        entry.tensor.zero_grad();
    }
}

std::int64_t ParamStore::total_numel() const {
    std::int64_t total = 0;
    for (const auto& [name, entry] : entries_) {
        total += entry.tensor.numel();
    }
    return total;
}

namespace {

constexpr char kMagic[8] = {'O', 'S', 'E', 'G', 'W', '0', '0', '1'};

void write_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) {
        throw_io("weight file: truncated header");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return v;
}

struct TableEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
};

} // namespace

void save_weights(const std::string& path, const ParamStore& store,
                  const std::map<std::string, double>& config) {
    for (const auto& [name, entry] : store.entries()) {
        if (name.rfind("config.", 0) == 0) {
            throw_invalid("save_weights: parameter name '" + name +
                          "' collides with the config namespace");
        }
    }

    // Config scalars ride along as ordinary one-element tensors.
    std::map<std::string, const Tensor*> flat;
    std::vector<Tensor> config_tensors;
    config_tensors.reserve(config.size());
    for (const auto& [key, value] : config) {
        config_tensors.push_back(Tensor::scalar(value));
    }
    std::size_t ci = 0;
    for (const auto& [key, value] : config) {
        flat.emplace("config." + key, &config_tensors[ci++]);
    }
    for (const auto& [name, entry] : store.entries()) {
        flat.emplace(name, &entry.tensor);
    }

    json table = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : flat) {
        const Shape& s = tensor->shape();
        json row;
        row["name"] = name;
        row["shape"] = {s.n, s.c, s.h, s.w};
        row["offset"] = offset;
        table.push_back(std::move(row));
        offset += static_cast<std::uint64_t>(tensor->numel()) * 8;
    }
    const std::string table_str = table.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw_io("save_weights: cannot open '" + path + "' for writing");
    }
    os.write(kMagic, 8);
    write_u64_le(os, table_str.size());
    os.write(table_str.data(), static_cast<std::streamsize>(table_str.size()));
    for (const auto& [name, tensor] : flat) {
        const auto& d = tensor->data();
        os.write(reinterpret_cast<const char*>(d.data()),
                 static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    os.flush();
    if (!os) {
        throw_io("save_weights: write failed for '" + path + "'");
    }
}

WeightFile load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw_io("load_weights: cannot open '" + path + "'");
    }
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw_io("load_weights: '" + path + "' is not a weight file");
    }
    const std::uint64_t table_len = read_u64_le(is);
    if (table_len > (1ull << 30)) {
        throw_io("load_weights: implausible table length");
    }
    std::string table_str(table_len, '\0');
    is.read(table_str.data(), static_cast<std::streamsize>(table_len));
    if (!is) {
        throw_io("load_weights: truncated table");
    }
    std::vector<char> payload(std::istreambuf_iterator<char>(is), {});

    json table;
    try {
        table = json::parse(table_str);
    } catch (const json::exception& e) {
        throw_io(std::string("load_weights: bad table: ") + e.what());
    }
    if (!table.is_array()) {
        throw_io("load_weights: table is not an array");
    }

    std::vector<TableEntry> entries;
    for (const auto& row : table) {
        if (!row.is_object() || row.size() != 3 || !row.contains("name") ||
            !row.contains("shape") || !row.contains("offset")) {
            throw_io("load_weights: malformed table row");
        }
        TableEntry e;
        e.name = row["name"].get<std::string>();
        const auto& sh = row["shape"];
        if (!sh.is_array() || sh.size() != 4) {
            throw_io("load_weights: bad shape for '" + e.name + "'");
        }
        e.shape = Shape{sh[0].get<std::int64_t>(), sh[1].get<std::int64_t>(),
                        sh[2].get<std::int64_t>(), sh[3].get<std::int64_t>()};
        if (e.shape.n < 0 || e.shape.c < 0 || e.shape.h < 0 || e.shape.w < 0) {
            throw_io("load_weights: negative extent for '" + e.name + "'");
        }
        e.offset = row["offset"].get<std::uint64_t>();
        entries.push_back(std::move(e));
    }

    WeightFile out;
    for (const auto& e : entries) {
        const std::uint64_t bytes =
            static_cast<std::uint64_t>(e.shape.numel()) * 8;
        if (e.offset + bytes > payload.size()) {
            throw_io("load_weights: entry '" + e.name +
                     "' reaches past end of payload");
        }
        std::vector<double> data(static_cast<std::size_t>(e.shape.numel()));
        std::memcpy(data.data(), payload.data() + e.offset,
                    static_cast<std::size_t>(bytes));
        if (e.name.rfind("config.", 0) == 0) {
            if (e.shape.numel() != 1) {
                throw_io("load_weights: config entry '" + e.name +
                         "' is not a scalar");
            }
            out.config[e.name.substr(7)] = data[0];
        } else {
            if (out.tensors.count(e.name)) {
                throw_io("load_weights: duplicate entry '" + e.name + "'");
            }
            out.tensors.emplace(e.name,
                                Tensor::from_data(e.shape, std::move(data)));
        }
    }
    return out;
}

void fill_params(ParamStore& store, const WeightFile& file) {
    for (const auto& [name, tensor] : file.tensors) {
        if (!store.contains(name)) {
            throw_invalid("weights: file entry '" + name +
                          "' has no matching parameter");
        }
    }
    for (auto& [name, entry] : store.entries()) {
        auto it = file.tensors.find(name);
        if (it == file.tensors.end()) {
            throw_invalid("weights: parameter '" + name + "' missing from file");
        }
        if (it->second.shape() != entry.tensor.shape()) {
            throw_invalid("weights: shape mismatch for '" + name + "': file " +
                          it->second.shape().str() + " vs model " +
                          entry.tensor.shape().str());
        }
        entry.tensor.data() = it->second.data();
    }
}

} // namespace oseg
