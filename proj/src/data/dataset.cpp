#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "store/data.hpp"
#include "store/nn.hpp"

namespace store::data {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

}  // namespace

// ---- schema ----------------------------------------------------------------

ColumnRole parse_role(const std::string& name) {
  if (name == "item") return ColumnRole::kItem;
  if (name == "static") return ColumnRole::kStatic;
  if (name == "group_key") return ColumnRole::kGroupKey;
  if (name == "label") return ColumnRole::kLabel;
  if (name == "ignore") return ColumnRole::kIgnore;
  throw DataError("unknown column role '" + name + "'");
}

std::string to_string(ColumnRole role) {
  switch (role) {
    case ColumnRole::kItem: return "item";
    case ColumnRole::kStatic: return "static";
    case ColumnRole::kGroupKey: return "group_key";
    case ColumnRole::kLabel: return "label";
    case ColumnRole::kIgnore: return "ignore";
  }
  return "ignore";
}

void DatasetSchema::validate() const {
  std::size_t labels = 0, items = 0, groups = 0;
  for (const ColumnSpec& c : columns) {
    labels += c.role == ColumnRole::kLabel;
    items += c.role == ColumnRole::kItem;
    groups += c.role == ColumnRole::kGroupKey;
  }
  if (labels != 1) throw DataError("schema: expected exactly one label column, found " + std::to_string(labels));
  if (items != 1) throw DataError("schema: expected exactly one item column, found " + std::to_string(items));
  if (groups != 1) throw DataError("schema: expected exactly one group-key column, found " + std::to_string(groups));
}

std::vector<std::string> DatasetSchema::static_columns() const {
  std::vector<std::string> out;
  for (const ColumnSpec& c : columns)
    if (c.role == ColumnRole::kStatic) out.push_back(c.name);
  return out;
}

const ColumnSpec& DatasetSchema::column(ColumnRole role) const {
  for (const ColumnSpec& c : columns)
    if (c.role == role) return c;
  throw DataError("schema: no column with role " + to_string(role));
}

DatasetSchema DatasetSchema::from_header(std::span<const std::string> header, const std::string& label,
                                         const std::string& item, const std::string& group_key,
                                         std::span<const std::string> ignored) {
  DatasetSchema s;
  for (const std::string& name : header) {
    ColumnRole role = ColumnRole::kStatic;
    if (name == label) role = ColumnRole::kLabel;
    else if (name == item) role = ColumnRole::kItem;
    else if (name == group_key) role = ColumnRole::kGroupKey;
    else if (std::find(ignored.begin(), ignored.end(), name) != ignored.end()) role = ColumnRole::kIgnore;
    s.columns.push_back({name, role, 0});
  }
  s.validate();
  return s;
}

DatasetSchema DatasetSchema::avazu() {
  const std::vector<std::string> header = {
      "id",         "click",         "hour",           "C1",           "banner_pos",     "site_id",
      "site_domain", "site_category", "app_id",         "app_domain",   "app_category",   "device_id",
      "device_ip",  "device_model",  "device_type",    "device_conn_type", "C14",        "C15",
      "C16",        "C17",           "C18",            "C19",          "C20",            "C21"};
  const std::vector<std::string> ignored = {"id", "hour", "device_id"};
  return from_header(header, "click", "site_id", "device_ip", ignored);
}

std::int32_t Vocabulary::lookup(const std::string& value) const {
  auto it = index_.find(value);
  return it == index_.end() ? 0 : it->second;
}

std::int32_t Vocabulary::insert(const std::string& value) {
  auto [it, inserted] = index_.emplace(value, static_cast<std::int32_t>(tokens_.size() + 1));
  if (inserted) tokens_.push_back(value);
  return it->second;
}

// ---- dataset ---------------------------------------------------------------

std::optional<std::size_t> Dataset::static_index(const std::string& name) const {
  auto it = std::find(static_names.begin(), static_names.end(), name);
  if (it == static_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - static_names.begin());
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.static_names = static_names;
  out.cardinalities = cardinalities;
  out.chronological = chronological;
  const std::size_t f = num_static();
  out.item_ids.reserve(rows.size());
  out.group_keys.reserve(rows.size());
  out.labels.reserve(rows.size());
  out.static_values.reserve(rows.size() * f);
  for (std::size_t r : rows) {
    if (r >= size()) throw DataError("subset: row " + std::to_string(r) + " out of range");
    out.item_ids.push_back(item_ids[r]);
    out.group_keys.push_back(group_keys[r]);
    out.labels.push_back(labels[r]);
    out.static_values.insert(out.static_values.end(), static_values.begin() + static_cast<std::ptrdiff_t>(r * f),
                             static_values.begin() + static_cast<std::ptrdiff_t>((r + 1) * f));
  }
  return out;
}

void Dataset::validate() const {
  const std::size_t n = size();
  if (item_ids.size() != n || group_keys.size() != n || static_values.size() != n * num_static() ||
      cardinalities.size() != num_static()) {
    throw DataError("dataset: inconsistent column lengths");
  }
  for (std::uint8_t y : labels)
    if (y > 1) throw DataError("dataset: label outside {0, 1}");
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < num_static(); ++c) {
      const std::int32_t v = static_value(r, c);
      if (v < 0 || static_cast<std::size_t>(v) >= cardinalities[c]) {
        throw DataError("dataset: value " + std::to_string(v) + " out of range for column " + static_names[c]);
      }
    }
}

std::int64_t parse_key(const std::string& text) {
  std::int64_t value = 0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec == std::errc() && ptr == last && !text.empty()) return value;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::int64_t>(h & 0x7FFFFFFFFFFFFFFFULL);
}

ReadResult read_avazu_csv(const std::filesystem::path& path, const DatasetSchema& schema, const ReadOptions& options) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError(where(path, 1) + "empty file, expected a header");
  const std::vector<std::string> header = split_csv(line);

  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("schema error: column '" + name + "' missing from " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t label_col = column_of(schema.column(ColumnRole::kLabel).name);
  const std::size_t item_col = column_of(schema.column(ColumnRole::kItem).name);
  const std::size_t group_col = column_of(schema.column(ColumnRole::kGroupKey).name);
  const std::vector<std::string> static_names = schema.static_columns();
  std::vector<std::size_t> static_cols;
  for (const std::string& name : static_names) static_cols.push_back(column_of(name));

  // First pass collects raw rows; vocabularies need the row count.
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  ReadResult result;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> fields = split_csv(line);
    std::string problem;
    if (fields.size() != header.size()) {
      problem = "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size());
    } else if (fields[label_col] != "0" && fields[label_col] != "1") {
      problem = "label '" + fields[label_col] + "' is not 0 or 1";
    }
    if (!problem.empty()) {
      if (options.skip_malformed) {
        ++result.skipped_rows;
        continue;
      }
      throw DataError(where(path, line_no) + problem);
    }
    rows.push_back(std::move(fields));
    line_numbers.push_back(line_no);
  }

  if (options.vocabularies) {
    if (options.vocabularies->size() != static_names.size()) {
      throw DataError("read_avazu_csv: supplied vocabularies do not match schema");
    }
    result.vocabularies = *options.vocabularies;
  } else {
    result.vocabularies.assign(static_names.size(), Vocabulary{});
    const auto vocab_rows = static_cast<std::size_t>(std::ceil(options.vocab_fraction * static_cast<double>(rows.size())));
    for (std::size_t r = 0; r < std::min(vocab_rows, rows.size()); ++r)
      for (std::size_t c = 0; c < static_cols.size(); ++c) result.vocabularies[c].insert(rows[r][static_cols[c]]);
  }

  Dataset& ds = result.dataset;
  ds.static_names = static_names;
  for (const Vocabulary& v : result.vocabularies) ds.cardinalities.push_back(v.size_with_oov());
  ds.chronological = true;
  ds.labels.reserve(rows.size());
  for (const auto& fields : rows) {
    ds.labels.push_back(fields[label_col] == "1" ? 1 : 0);
    ds.item_ids.push_back(parse_key(fields[item_col]));
    ds.group_keys.push_back(parse_key(fields[group_col]));
    for (std::size_t c = 0; c < static_cols.size(); ++c)
      ds.static_values.push_back(result.vocabularies[c].lookup(fields[static_cols[c]]));
  }
  return result;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "click,item_id,user_id";
  for (const std::string& name : dataset.static_names) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    out << static_cast<int>(dataset.labels[r]) << ',' << dataset.item_ids[r] << ',' << dataset.group_keys[r];
    for (std::size_t c = 0; c < dataset.num_static(); ++c) out << ',' << dataset.static_value(r, c);
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::pair<Dataset, Dataset> chronological_split(const Dataset& dataset, double valid_fraction) {
  if (valid_fraction < 0.0 || valid_fraction >= 1.0) throw DataError("split: fraction must be in [0, 1)");
  const std::size_t n = dataset.size();
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(n)));
  std::vector<std::size_t> train(n - n_valid), valid(n_valid);
  std::iota(train.begin(), train.end(), 0);
  std::iota(valid.begin(), valid.end(), n - n_valid);
  return {dataset.subset(train), dataset.subset(valid)};
}

std::pair<Dataset, Dataset> random_split(const Dataset& dataset, double valid_fraction, std::uint64_t seed) {
  if (valid_fraction < 0.0 || valid_fraction >= 1.0) throw DataError("split: fraction must be in [0, 1)");
  const std::size_t n = dataset.size();
  if (n == 0) return {dataset, dataset};
  std::vector<std::size_t> order = batch_iter(n, n, seed, 0, true).front();
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(n)));
  std::vector<std::size_t> valid(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_valid), order.end());
  std::sort(valid.begin(), valid.end());
  std::sort(train.begin(), train.end());
  auto parts = std::make_pair(dataset.subset(train), dataset.subset(valid));
  parts.first.chronological = parts.second.chronological = false;
  return parts;
}

// ---- binary cache ----------------------------------------------------------

namespace {

constexpr char kCacheMagic[] = "STRD1";

template <typename T>
void write_array(std::ofstream& out, const std::vector<T>& v) {
  const std::uint64_t n = v.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
}

template <typename T>
std::vector<T> read_array(std::ifstream& in, const std::filesystem::path& path) {
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || n > (1ULL << 40)) throw DataError(path.string() + ": truncated cache");
  std::vector<T> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw DataError(path.string() + ": truncated cache");
  return v;
}

}  // namespace

void write_dataset_cache(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const nlohmann::json schema = {{"static_names", dataset.static_names},
                                 {"cardinalities", dataset.cardinalities},
                                 {"rows", dataset.size()},
                                 {"chronological", dataset.chronological}};
  out << kCacheMagic << '\n' << schema.dump() << '\n';
  write_array(out, dataset.item_ids);
  write_array(out, dataset.group_keys);
  write_array(out, dataset.labels);
  write_array(out, dataset.static_values);
  if (!out) throw DataError("failed writing " + path.string());
}

Dataset read_dataset_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic, header;
  std::getline(in, magic);
  if (magic != kCacheMagic) throw DataError(path.string() + ": not a dataset cache (magic '" + magic + "')");
  std::getline(in, header);
  const nlohmann::json schema = nlohmann::json::parse(header);
  Dataset ds;
  ds.static_names = schema.at("static_names").get<std::vector<std::string>>();
  ds.cardinalities = schema.at("cardinalities").get<std::vector<std::size_t>>();
  ds.chronological = schema.at("chronological").get<bool>();
  ds.item_ids = read_array<std::int64_t>(in, path);
  ds.group_keys = read_array<std::int64_t>(in, path);
  ds.labels = read_array<std::uint8_t>(in, path);
  ds.static_values = read_array<std::int32_t>(in, path);
  if (ds.size() != schema.at("rows").get<std::size_t>()) throw DataError(path.string() + ": row count mismatch");
  ds.validate();
  return ds;
}

// ---- batching --------------------------------------------------------------

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::size_t epoch, bool shuffle) {
  if (batch_size == 0) throw DataError("batch_iter: batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle && n > 1) {
    Rng rng(derive_seed(seed, epoch));
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(order[i], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace store::data
