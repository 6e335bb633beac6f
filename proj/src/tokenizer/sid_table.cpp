#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "store/tokenizer.hpp"

namespace store::tokenizer {

std::optional<std::span<const std::uint32_t>> SidTable::find(std::int64_t item_id) const {
  if (sorted_.size() != item_ids.size()) {
    sorted_.clear();
    sorted_.reserve(item_ids.size());
    for (std::size_t r = 0; r < item_ids.size(); ++r) sorted_.emplace_back(item_ids[r], r);
    std::sort(sorted_.begin(), sorted_.end());
  }
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), std::make_pair(item_id, std::size_t{0}));
  if (it == sorted_.end() || it->first != item_id) return std::nullopt;
  return row(it->second);
}

void SidTable::validate() const {
  if (num_codes == 0 || codebook_size == 0) throw std::invalid_argument("sid table: K and V must be positive");
  if (codes.size() != item_ids.size() * num_codes) throw std::invalid_argument("sid table: code count mismatch");
  for (std::uint32_t c : codes)
    if (c >= codebook_size) throw std::invalid_argument("sid table: code " + std::to_string(c) + " >= V");
}

bool operator==(const SidTable& a, const SidTable& b) {
  return a.num_codes == b.num_codes && a.codebook_size == b.codebook_size && a.item_ids == b.item_ids &&
         a.codes == b.codes;
}

void write_sid_table(const std::filesystem::path& path, const SidTable& table) {
  table.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "item_id,K=" << table.num_codes << ",V=" << table.codebook_size << '\n';
  for (std::size_t r = 0; r < table.size(); ++r) {
    out << table.item_ids[r];
    for (std::uint32_t c : table.row(r)) out << ',' << c;
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SidTable read_sid_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  SidTable t;
  {
    unsigned long k = 0, v = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "item_id,K=%lu,V=%lu%c", &k, &v, &tail) != 2 || k == 0 || v == 0) {
      throw std::runtime_error(path.string() + ":1: header must be 'item_id,K=<K>,V=<V>'");
    }
    t.num_codes = k;
    t.codebook_size = v;
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    std::int64_t id = 0;
    auto r = std::from_chars(p, end, id);
    if (r.ec != std::errc()) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad item id");
    p = r.ptr;
    std::size_t n = 0;
    while (p < end) {
      std::uint32_t code = 0;
      if (*p != ',') throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected ','");
      auto rc = std::from_chars(p + 1, end, code);
      if (rc.ec != std::errc() || code >= t.codebook_size) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad code");
      }
      t.codes.push_back(code);
      p = rc.ptr;
      ++n;
    }
    if (n != t.num_codes) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(t.num_codes) + " codes, got " + std::to_string(n));
    }
    t.item_ids.push_back(id);
  }
  return t;
}

}  // namespace store::tokenizer
