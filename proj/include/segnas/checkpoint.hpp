#pragma once

#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "segnas/params.hpp"

namespace segnas {

/// Round-trip-exact double formatting for manifest metadata.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat binary file of named arrays behind a text manifest:
///
///   segnas-container v1
///   meta <key> <value>
///   array <name> <dtype> <rank> <dims...> <offset> <nbytes>
///   end
///   <little-endian payload>
///
/// Offsets are relative to the first payload byte. Arrays keep insertion
/// order, so saves are byte-deterministic.
class Container {
 public:
  struct Entry {
    std::string name;
    std::string dtype;
    std::vector<long> shape;
    std::vector<unsigned char> bytes;
  };

  void set_meta(const std::string& key, const std::string& value);
  bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }
  const std::string& meta(const std::string& key) const;

  void put_raw(const std::string& name, const std::string& dtype,
               std::vector<long> shape, const void* data, std::size_t nbytes);

  template <typename T>
  void put(const std::string& name, std::vector<long> shape, const T* data,
           std::size_t count) {
    put_raw(name, dtype_of<T>(), std::move(shape), data, count * sizeof(T));
  }

  bool has(const std::string& name) const;
  const Entry& entry(const std::string& name) const;

  template <typename T>
  std::vector<T> get(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != dtype_of<T>())
      throw CheckpointError("array " + name + " has dtype " + e.dtype);
    std::vector<T> out(e.bytes.size() / sizeof(T));
    std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
    return out;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  const std::map<std::string, std::string>& metadata() const { return meta_; }

  void save(const std::string& path) const;
  static Container load(const std::string& path);

  template <typename T>
  static const char* dtype_of() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else if constexpr (std::is_same_v<T, double>) return "f64";
    else if constexpr (std::is_same_v<T, int>) return "i32";
    else if constexpr (std::is_same_v<T, std::int64_t>) return "i64";
    else if constexpr (std::is_same_v<T, unsigned char>) return "u8";
    else static_assert(sizeof(T) == 0, "unsupported dtype");
  }

 private:
  std::map<std::string, std::string> meta_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Writes every array of a store under `prefix`; optimizer moments included
/// when `with_opt_state` (needed for exact training resume).
template <typename Scalar>
void save_params(Container& c, const std::string& prefix,
                 const ParamStore<Scalar>& store, bool with_opt_state = false) {
  for (const auto& p : store) {
    std::vector<long> shape(p.shape.begin(), p.shape.end());
    c.put(prefix + p.name, shape, p.value.data(),
          static_cast<std::size_t>(p.value.size()));
    if (with_opt_state && p.trainable) {
      c.put(prefix + p.name + "#m", shape, p.opt_m.data(),
            static_cast<std::size_t>(p.opt_m.size()));
      c.put(prefix + p.name + "#v", shape, p.opt_v.data(),
            static_cast<std::size_t>(p.opt_v.size()));
      c.put(prefix + p.name + "#shadow", shape, p.shadow.data(),
            static_cast<std::size_t>(p.shadow.size()));
    }
  }
}

template <typename Scalar>
void load_params(const Container& c, const std::string& prefix,
                 ParamStore<Scalar>& store, bool with_opt_state = false) {
  for (auto& p : store) {
    auto v = c.get<Scalar>(prefix + p.name);
    if (static_cast<Eigen::Index>(v.size()) != p.value.size())
      throw CheckpointError("size mismatch for " + prefix + p.name);
    std::copy(v.begin(), v.end(), p.value.data());
    if (with_opt_state && p.trainable) {
      auto m = c.get<Scalar>(prefix + p.name + "#m");
      auto vv = c.get<Scalar>(prefix + p.name + "#v");
      auto sh = c.get<Scalar>(prefix + p.name + "#shadow");
      std::copy(m.begin(), m.end(), p.opt_m.data());
      std::copy(vv.begin(), vv.end(), p.opt_v.data());
      std::copy(sh.begin(), sh.end(), p.shadow.data());
    }
  }
}

/// FNV-1a over all value bytes; used to tie caches to the producing weights.
template <typename Scalar>
std::uint64_t params_fingerprint(const ParamStore<Scalar>& store) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : store) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (Eigen::Index i = 0; i < p.value.size() * static_cast<Eigen::Index>(sizeof(Scalar)); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace segnas
