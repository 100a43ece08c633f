#include "segnas/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace segnas {

namespace {
constexpr const char* kMagic = "segnas-container v1";

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32" || dtype == "i32") return 4;
  if (dtype == "f64" || dtype == "i64") return 8;
  if (dtype == "u8") return 1;
  throw CheckpointError("unknown dtype " + dtype);
}
}  // namespace

void Container::set_meta(const std::string& key, const std::string& value) {
  meta_[key] = value;
}

const std::string& Container::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw CheckpointError("missing meta key " + key);
  return it->second;
}

void Container::put_raw(const std::string& name, const std::string& dtype,
                        std::vector<long> shape, const void* data,
                        std::size_t nbytes) {
  long count = 1;
  for (long d : shape) count *= d;
  if (static_cast<std::size_t>(count) * dtype_size(dtype) != nbytes)
    throw CheckpointError("shape/byte mismatch for " + name);
  Entry e;
  e.name = name;
  e.dtype = dtype;
  e.shape = std::move(shape);
  e.bytes.resize(nbytes);
  std::memcpy(e.bytes.data(), data, nbytes);
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second] = std::move(e);
  } else {
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
  }
}

bool Container::has(const std::string& name) const {
  return index_.count(name) > 0;
}

const Container::Entry& Container::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw CheckpointError("missing array " + name);
  return entries_[it->second];
}

void Container::save(const std::string& path) const {
  std::ostringstream manifest;
  manifest << kMagic << "\n";
  for (const auto& [key, value] : meta_) manifest << "meta " << key << " " << value << "\n";
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    manifest << "array " << e.name << " " << e.dtype << " " << e.shape.size();
    for (long d : e.shape) manifest << " " << d;
    manifest << " " << offset << " " << e.bytes.size() << "\n";
    offset += e.bytes.size();
  }
  manifest << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  const std::string header = manifest.str();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& e : entries_)
    out.write(reinterpret_cast<const char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

Container Container::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);

  Container c;
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw CheckpointError(path + ": bad magic or version (want '" +
                          std::string(kMagic) + "')");

  struct Pending {
    std::string name, dtype;
    std::vector<long> shape;
    std::size_t offset = 0, nbytes = 0;
  };
  std::vector<Pending> pending;
  bool saw_end = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      saw_end = true;
      break;
    }
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "meta") {
      std::string key;
      is >> key;
      std::string value;
      std::getline(is, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      if (key.empty()) throw CheckpointError(path + ": malformed meta line");
      c.meta_[key] = value;
    } else if (kind == "array") {
      Pending p;
      std::size_t rank = 0;
      is >> p.name >> p.dtype >> rank;
      if (!is) throw CheckpointError(path + ": malformed array line");
      p.shape.resize(rank);
      for (auto& d : p.shape) is >> d;
      is >> p.offset >> p.nbytes;
      if (!is) throw CheckpointError(path + ": malformed array line");
      long count = 1;
      for (long d : p.shape) count *= d;
      if (static_cast<std::size_t>(count) * dtype_size(p.dtype) != p.nbytes)
        throw CheckpointError(path + ": inconsistent shape for " + p.name);
      pending.push_back(std::move(p));
    } else {
      throw CheckpointError(path + ": unexpected manifest line '" + line + "'");
    }
  }
  if (!saw_end) throw CheckpointError(path + ": manifest missing 'end'");

  const std::streampos payload_start = in.tellg();
  for (const auto& p : pending) {
    Entry e;
    e.name = p.name;
    e.dtype = p.dtype;
    e.shape = p.shape;
    e.bytes.resize(p.nbytes);
    in.seekg(payload_start + static_cast<std::streamoff>(p.offset));
    in.read(reinterpret_cast<char*>(e.bytes.data()),
            static_cast<std::streamsize>(p.nbytes));
    if (!in) throw CheckpointError(path + ": truncated payload for " + p.name);
    c.index_[e.name] = c.entries_.size();
    c.entries_.push_back(std::move(e));
  }
  return c;
}

}  // namespace segnas
