#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace oseg {

struct ParamEntry {
    Tensor tensor;
    bool trainable = true;
};

// Named parameter registry. Iteration is always in name order, which keeps
// optimizer updates and serialization deterministic.
class ParamStore {
  public:
    Tensor& add(const std::string& name, Tensor t, bool trainable = true);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }

    const std::map<std::string, ParamEntry>& entries() const { return entries_; }
    std::map<std::string, ParamEntry>& entries() { return entries_; }

    void zero_grads();
    std::int64_t total_numel() const;

  private:
    std::map<std::string, ParamEntry> entries_;
};

// Binary weight container: magic "OSEGW001", little-endian u64 JSON table
// length, the JSON table, then a raw little-endian float64 payload.
struct WeightFile {
    std::map<std::string, double> config;
    std::map<std::string, Tensor> tensors;
};

void save_weights(const std::string& path, const ParamStore& store,
                  const std::map<std::string, double>& config);

WeightFile load_weights(const std::string& path);

// Copies every store entry from the file by name; shapes must match and the
// file must not contain tensors the store does not know about.
void fill_params(ParamStore& store, const WeightFile& file);

} // namespace oseg
