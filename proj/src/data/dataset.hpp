#pragma once

#include <array>
#include <string>
#include <vector>

#include "image/image.hpp"

namespace oseg {

struct ManifestClass {
    std::string name;
    int index = 0;
    std::array<std::uint8_t, 3> color{0, 0, 0};
};

struct ManifestItem {
    std::string image; // relative to the manifest directory
    std::string mask;
    std::string split; // "train" or "test"
};

struct DatasetManifest {
    int version = 1;
    std::vector<ManifestClass> classes; // sorted by index, dense from 0
    std::vector<ManifestItem> items;
    std::string root; // directory the relative paths resolve against

    int class_count() const { return static_cast<int>(classes.size()); }
    std::string image_path(const ManifestItem& item) const;
    std::string mask_path(const ManifestItem& item) const;
    // Indices into items for a split; errors if the split has no items.
    std::vector<std::size_t> split_indices(const std::string& split) const;
};

// The six-class palette used by the synthetic scenes.
const std::vector<ManifestClass>& default_classes();

// validate_data also opens every mask and checks values < K (or 255).
DatasetManifest load_manifest(const std::string& path, bool validate_data = true);
void save_manifest(const std::string& path, const DatasetManifest& m);

} // namespace oseg
