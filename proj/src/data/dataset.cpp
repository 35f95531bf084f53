#include "data/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "core/error.hpp"

namespace oseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string DatasetManifest::image_path(const ManifestItem& item) const {
    return (fs::path(root) / item.image).string();
}

std::string DatasetManifest::mask_path(const ManifestItem& item) const {
    return (fs::path(root) / item.mask).string();
}

std::vector<std::size_t> DatasetManifest::split_indices(
    const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].split == split) {
            out.push_back(i);
        }
    }
    if (out.empty()) {
        throw_invalid("manifest: split '" + split + "' has no items");
    }
    return out;
}

const std::vector<ManifestClass>& default_classes() {
    static const std::vector<ManifestClass> k = {
        {"background", 0, {150, 140, 125}},
        {"building", 1, {180, 80, 70}},
        {"road", 2, {70, 70, 75}},
        {"vehicle", 3, {230, 230, 240}},
        {"low_vegetation", 4, {110, 180, 90}},
        {"high_vegetation", 5, {40, 110, 50}},
    };
    return k;
}

DatasetManifest load_manifest(const std::string& path, bool validate_data) {
    std::ifstream is(path);
    if (!is) {
        throw_io("manifest: cannot open '" + path + "'");
    }
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw_io("manifest: bad JSON in '" + path + "': " + e.what());
    }

    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    if (m.root.empty()) {
        m.root = ".";
    }
    try {
        m.version = j.at("version").get<int>();
        for (const auto& jc : j.at("classes")) {
            ManifestClass c;
            c.name = jc.at("name").get<std::string>();
            c.index = jc.at("index").get<int>();
            const auto& col = jc.at("color");
            if (!col.is_array() || col.size() != 3) {
                throw_io("manifest: class color must be [r,g,b]");
            }
            for (int i = 0; i < 3; ++i) {
                c.color[static_cast<std::size_t>(i)] =
                    static_cast<std::uint8_t>(col[static_cast<std::size_t>(i)]
                                                  .get<int>());
            }
            m.classes.push_back(std::move(c));
        }
        for (const auto& ji : j.at("items")) {
            ManifestItem it;
            it.image = ji.at("image").get<std::string>();
            it.mask = ji.at("mask").get<std::string>();
            it.split = ji.at("split").get<std::string>();
            m.items.push_back(std::move(it));
        }
    } catch (const json::exception& e) {
        throw_io("manifest: missing or mistyped field in '" + path +
                 "': " + e.what());
    }

    std::sort(m.classes.begin(), m.classes.end(),
              [](const ManifestClass& a, const ManifestClass& b) {
                  return a.index < b.index;
              });
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        if (m.classes[i].index != static_cast<int>(i)) {
            throw_invalid("manifest: class indices must be dense from 0; saw " +
                          std::to_string(m.classes[i].index) + " at position " +
                          std::to_string(i));
        }
    }
    if (m.classes.empty()) {
        throw_invalid("manifest: no classes defined");
    }
    if (m.items.empty()) {
        throw_invalid("manifest: no items");
    }
    for (const auto& it : m.items) {
        if (it.split != "train" && it.split != "test") {
            throw_invalid("manifest: unknown split '" + it.split + "'");
        }
        if (!fs::exists(m.image_path(it))) {
            throw_io("manifest: missing image '" + m.image_path(it) + "'");
        }
        if (!fs::exists(m.mask_path(it))) {
            throw_io("manifest: missing mask '" + m.mask_path(it) + "'");
        }
    }

    if (validate_data) {
        const int k = m.class_count();
        for (const auto& it : m.items) {
            MaskImage mask = load_mask(m.mask_path(it));
            for (std::uint8_t v : mask.values) {
                if (v != kMaskIgnore && v >= k) {
                    throw_invalid("manifest: mask '" + m.mask_path(it) +
                                  "' contains class " + std::to_string(v) +
                                  " but only " + std::to_string(k) +
                                  " classes are defined");
                }
            }
        }
    }
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    json j;
    j["version"] = m.version;
    j["classes"] = json::array();
    for (const auto& c : m.classes) {
        j["classes"].push_back({{"name", c.name},
                                {"index", c.index},
                                {"color", {c.color[0], c.color[1], c.color[2]}}});
    }
    j["items"] = json::array();
    for (const auto& it : m.items) {
        j["items"].push_back(
            {{"image", it.image}, {"mask", it.mask}, {"split", it.split}});
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw_io("manifest: cannot open '" + path + "' for writing");
    }
    os << j.dump(2) << "\n";
    if (!os) {
        throw_io("manifest: write failed for '" + path + "'");
    }
}

} // namespace oseg
