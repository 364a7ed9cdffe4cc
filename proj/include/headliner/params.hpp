#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "headliner/common.hpp"
#include "headliner/tensor.hpp"

namespace headliner {

/// Named trainable tensors in fixed insertion order. Tensor copies alias
/// their payload, so handles handed out here stay in sync with updates.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) {
      throw ConfigError("params: duplicate parameter " + name);
    }
    t.set_requires_grad(true);
    index_.emplace(name, items_.size());
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw ConfigError("params: unknown parameter " + name);
    }
    return items_[it->second].second;
  }
  const Tensor& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }

  std::size_t size() const { return items_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : items_) {
      if (!t.all_finite()) return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ConfigKv = std::vector<std::pair<std::string, std::string>>;

struct Checkpoint {
  ConfigKv config;
  ParamStore params;
};

/// `ut-ckpt-v1`: header, key=value config block, blank line, then named
/// tensors as a text shape line followed by raw little-endian doubles.
inline void save_checkpoint(const std::string& path, const ConfigKv& config,
                            const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("checkpoint: cannot open " + path +
                             " for writing");
  out << "ut-ckpt-v1\n";
  for (const auto& [k, v] : config) out << k << "=" << v << "\n";
  out << "\n";
  for (const auto& [name, t] : params.items()) {
    out << "tensor " << name << " " << t.rank();
    for (std::size_t d = 0; d < t.rank(); ++d) out << " " << t.dim(d);
    out << "\n";
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    out << "\n";
  }
  out << "end\n";
  if (!out) throw InputError("checkpoint: write to " + path + " failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "ut-ckpt-v1") {
    throw InputError("checkpoint: bad header in " + path);
  }
  Checkpoint ckpt;
  while (std::getline(in, line)) {
    if (line.empty()) break;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError("checkpoint: malformed config line '" + line + "'");
    }
    ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  while (std::getline(in, line)) {
    if (line == "end") return ckpt;
    std::istringstream hs(line);
    std::string tag, name;
    std::size_t rank = 0;
    if (!(hs >> tag >> name >> rank) || tag != "tensor") {
      throw InputError("checkpoint: malformed tensor line '" + line + "'");
    }
    Shape shape(rank);
    for (std::size_t d = 0; d < rank; ++d) {
      if (!(hs >> shape[d])) {
        throw InputError("checkpoint: missing dimension for " + name);
      }
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (in.gcount() !=
        static_cast<std::streamsize>(t.size() * sizeof(double))) {
      throw InputError("checkpoint: truncated payload for " + name);
    }
    in.ignore(1);  // newline after the blob
    ckpt.params.add(name, std::move(t));
  }
  throw InputError("checkpoint: missing end marker in " + path);
}

inline std::string config_value(const ConfigKv& kv, const std::string& key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return v;
  }
  throw ConfigError("checkpoint: config key '" + key + "' missing");
}

inline std::string config_value_or(const ConfigKv& kv, const std::string& key,
                                   const std::string& fallback) {
  for (const auto& [k, v] : kv) {
    if (k == key) return v;
  }
  return fallback;
}

}  // namespace headliner
