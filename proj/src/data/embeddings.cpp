#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include "store/data.hpp"
#include "store/nn.hpp"
#include "store/serialize.hpp"

namespace store::data {

void EmbeddingTable::add(std::int64_t id, std::span<const double> vector) {
  if (vector.size() != dim_) {
    throw DataError("embedding for item " + std::to_string(id) + " has dim " + std::to_string(vector.size()) +
                    ", table dim is " + std::to_string(dim_));
  }
  if (!index_.emplace(id, ids_.size()).second) throw DataError("duplicate item id " + std::to_string(id));
  ids_.push_back(id);
  values_.insert(values_.end(), vector.begin(), vector.end());
}

std::optional<std::size_t> EmbeddingTable::find(std::int64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ":1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string prefix = "item_id,dim=";
  std::size_t dim = 0;
  if (line.rfind(prefix, 0) != 0) throw DataError(path.string() + ":1: header must be 'item_id,dim=<d>'");
  {
    const char* first = line.data() + prefix.size();
    const char* last = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(first, last, dim);
    if (ec != std::errc() || ptr != last || dim == 0) throw DataError(path.string() + ":1: bad dim in header");
  }
  EmbeddingTable table(dim);
  std::vector<double> row(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    std::int64_t id = 0;
    auto res = std::from_chars(p, end, id);
    if (res.ec != std::errc()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad item id");
    p = res.ptr;
    std::size_t k = 0;
    while (p < end) {
      if (*p != ',') throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected ','");
      ++p;
      if (k >= dim) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": more than " + std::to_string(dim) +
                        " values");
      }
      auto r = std::from_chars(p, end, row[k]);
      if (r.ec != std::errc()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad value");
      p = r.ptr;
      ++k;
    }
    if (k != dim) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                      " values, got " + std::to_string(k));
    }
    try {
      table.add(id, row);
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "item_id,dim=" << table.dim() << '\n';
  for (std::size_t r = 0; r < table.size(); ++r) {
    out << table.id(r);
    for (double v : table.row(r)) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

EmbeddingTable cooccurrence_embeddings(const Dataset& dataset, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw DataError("cooccurrence_embeddings: dim must be positive");
  // item -> (column, value) -> count; ordered so the output is deterministic.
  std::map<std::int64_t, std::map<std::pair<std::size_t, std::int32_t>, std::size_t>> profiles;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    auto& profile = profiles[dataset.item_ids[r]];
    for (std::size_t c = 0; c < dataset.num_static(); ++c) ++profile[{c, dataset.static_value(r, c)}];
  }
  std::map<std::pair<std::size_t, std::int32_t>, std::vector<double>> directions;
  auto direction = [&](const std::pair<std::size_t, std::int32_t>& key) -> const std::vector<double>& {
    auto it = directions.find(key);
    if (it != directions.end()) return it->second;
    Rng rng(derive_seed(seed, (static_cast<std::uint64_t>(key.first) << 32) ^ static_cast<std::uint32_t>(key.second)));
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    std::vector<double> v(dim);
    for (double& x : v) x = dist(rng);
    return directions.emplace(key, std::move(v)).first->second;
  };
  EmbeddingTable table(dim);
  std::vector<double> e(dim);
  for (const auto& [item, profile] : profiles) {
    std::fill(e.begin(), e.end(), 0.0);
    for (const auto& [key, count] : profile) {
      const std::vector<double>& g = direction(key);
      const double w = std::log1p(static_cast<double>(count));
      for (std::size_t k = 0; k < dim; ++k) e[k] += w * g[k];
    }
    double nrm = 0.0;
    for (double x : e) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm > 0.0)
      for (double& x : e) x /= nrm;
    table.add(item, e);
  }
  return table;
}

}  // namespace store::data
