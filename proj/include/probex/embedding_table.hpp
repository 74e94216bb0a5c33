#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "probex/errors.hpp"
#include "probex/linalg.hpp"

namespace probex {

// Class-name -> unit embedding vector. Vectors are kept unit norm; the loader
// renormalizes file contents and warns when an input norm is off by > 1e-3.
struct EmbeddingTable {
  std::vector<std::string> names;
  std::vector<Vec> vectors;

  std::size_t size() const { return names.size(); }
  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }

  const Vec& vector_for(const std::string& name) const {
    const int idx = index_of(name);
    if (idx < 0) throw DataError("embedding table has no entry for '" + name + "'");
    return vectors[static_cast<std::size_t>(idx)];
  }

  EmbeddingTable restricted(const std::vector<std::string>& keep) const {
    EmbeddingTable out;
    for (const auto& name : keep) {
      out.names.push_back(name);
      out.vectors.push_back(vector_for(name));
    }
    return out;
  }
};

inline void save_embedding_table(const EmbeddingTable& table, const std::string& path) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < table.size(); ++i) j[table.names[i]] = table.vectors[i];
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write embedding table: " + path);
  os << j.dump(2) << "\n";
}

inline EmbeddingTable load_embedding_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open embedding table: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw FormatError("bad embedding table JSON in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError("embedding table must be a JSON object: " + path);
  EmbeddingTable table;
  for (auto it = j.begin(); it != j.end(); ++it) {
    Vec v = it.value().get<Vec>();
    const double n = norm2(v);
    if (n == 0.0) throw DataError("zero embedding for class '" + it.key() + "' in " + path);
    if (std::fabs(n - 1.0) > 1e-3) {
      std::fprintf(stderr, "warning: embedding for '%s' has norm %.6f, renormalizing\n",
                   it.key().c_str(), n);
    }
    for (double& x : v) x /= n;
    table.names.push_back(it.key());
    table.vectors.push_back(std::move(v));
  }
  return table;
}

}  // namespace probex
