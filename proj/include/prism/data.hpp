#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prism/error.hpp"

namespace prism {

enum class CovariateKind { continuous, binary };
enum class OutcomeFamily { continuous, binary };

inline const char* to_string(CovariateKind k) { return k == CovariateKind::binary ? "binary" : "continuous"; }
inline const char* to_string(OutcomeFamily f) { return f == OutcomeFamily::binary ? "binary" : "continuous"; }

/// One row per patient: outcome, 0/1 treatment and covariates stored column-wise.
struct TrialDataset {
  std::vector<double> y;
  std::vector<int> a;
  std::vector<std::vector<double>> x;  // x[j][i]
  std::vector<CovariateKind> covariate_kinds;
  std::vector<std::string> covariate_names;

  std::size_t n() const { return y.size(); }
  std::size_t p() const { return x.size(); }
  double value(std::size_t row, std::size_t col) const { return x[col][row]; }

  std::optional<std::size_t> column_index(std::string_view name) const {
    for (std::size_t j = 0; j < covariate_names.size(); ++j)
      if (covariate_names[j] == name) return j;
    return std::nullopt;
  }

  std::size_t arm_size(int arm) const {
    return static_cast<std::size_t>(std::count(a.begin(), a.end(), arm));
  }

  /// True iff every outcome is exactly 0 or 1.
  bool outcome_is_binary() const {
    return std::all_of(y.begin(), y.end(), [](double v) { return v == 0.0 || v == 1.0; });
  }

  /// New dataset made of the given rows (repeats allowed).
  TrialDataset subset(const std::vector<std::size_t>& rows) const {
    TrialDataset out;
    out.covariate_kinds = covariate_kinds;
    out.covariate_names = covariate_names;
    out.y.reserve(rows.size());
    out.a.reserve(rows.size());
    out.x.assign(p(), {});
    for (auto& col : out.x) col.reserve(rows.size());
    for (std::size_t r : rows) {
      out.y.push_back(y[r]);
      out.a.push_back(a[r]);
      for (std::size_t j = 0; j < p(); ++j) out.x[j].push_back(x[j][r]);
    }
    return out;
  }

  bool operator==(const TrialDataset&) const = default;
};

/// Predicate over one row of a dataset (used for subgroup rules and oracles).
using RowPredicate = std::function<bool(const TrialDataset&, std::size_t)>;

/// The q retained covariates of a dataset after filtering.
struct FilteredView {
  std::reference_wrapper<const TrialDataset> base;
  std::vector<std::size_t> kept_columns;

  static FilteredView all(const TrialDataset& ds) {
    FilteredView fv{ds, {}};
    for (std::size_t j = 0; j < ds.p(); ++j) fv.kept_columns.push_back(j);
    return fv;
  }

  std::size_t q() const { return kept_columns.size(); }
  const std::vector<double>& column(std::size_t k) const { return base.get().x[kept_columns[k]]; }
  const std::string& name(std::size_t k) const { return base.get().covariate_names[kept_columns[k]]; }
  CovariateKind kind(std::size_t k) const { return base.get().covariate_kinds[kept_columns[k]]; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < q(); ++k) out.push_back(name(k));
    return out;
  }
};

enum class ValidationCode {
  too_few_rows,
  outcome_length,
  covariate_length,
  metadata_length,
  treatment_value,
  control_arm_empty,
  treatment_arm_empty,
  binary_column_value,
  missing_value,
};

struct ValidationError {
  ValidationCode code;
  std::string message;
};

/// Every violated dataset invariant, not just the first.
inline std::vector<ValidationError> validate(const TrialDataset& ds) {
  std::vector<ValidationError> errors;
  auto add = [&](ValidationCode c, std::string m) { errors.push_back({c, std::move(m)}); };

  const std::size_t n = ds.a.size();
  if (n < 2) add(ValidationCode::too_few_rows, "dataset needs at least 2 rows, has " + std::to_string(n));
  if (ds.y.size() != n)
    add(ValidationCode::outcome_length,
        "outcome has " + std::to_string(ds.y.size()) + " rows, treatment has " + std::to_string(n));
  for (std::size_t j = 0; j < ds.p(); ++j)
    if (ds.x[j].size() != n)
      add(ValidationCode::covariate_length, "covariate column " + std::to_string(j) + " has " +
                                                std::to_string(ds.x[j].size()) + " rows, expected " +
                                                std::to_string(n));
  if (ds.covariate_kinds.size() != ds.p() || ds.covariate_names.size() != ds.p())
    add(ValidationCode::metadata_length, "covariate kinds/names do not match the number of columns");

  bool bad_treatment = false;
  for (std::size_t i = 0; i < n; ++i)
    if (ds.a[i] != 0 && ds.a[i] != 1) bad_treatment = true;
  if (bad_treatment) add(ValidationCode::treatment_value, "treatment must be 0 or 1");
  if (n > 0 && ds.arm_size(0) == 0) add(ValidationCode::control_arm_empty, "treatment arm empty: no control (a=0) rows");
  if (n > 0 && ds.arm_size(1) == 0) add(ValidationCode::treatment_arm_empty, "treatment arm empty: no test (a=1) rows");

  std::size_t missing = 0;
  for (double v : ds.y)
    if (!std::isfinite(v)) ++missing;
  for (std::size_t j = 0; j < ds.p(); ++j) {
    bool bad_binary = false;
    for (double v : ds.x[j]) {
      if (!std::isfinite(v)) {
        ++missing;
      } else if (j < ds.covariate_kinds.size() && ds.covariate_kinds[j] == CovariateKind::binary && v != 0.0 &&
                 v != 1.0) {
        bad_binary = true;
      }
    }
    if (bad_binary) {
      const std::string name = j < ds.covariate_names.size() ? ds.covariate_names[j] : std::to_string(j);
      add(ValidationCode::binary_column_value, "binary column " + name + " has values outside {0,1}");
    }
  }
  if (missing > 0) add(ValidationCode::missing_value, std::to_string(missing) + " missing or non-finite value(s)");
  return errors;
}

/// Throws InputError listing every validation failure.
inline void require_valid(const TrialDataset& ds) {
  const auto errors = validate(ds);
  if (errors.empty()) return;
  std::string msg = "invalid dataset:";
  for (const auto& e : errors) msg += " [" + e.message + "]";
  throw InputError(msg);
}

enum class CsvErrorKind { missing_file, missing_column, non_numeric, missing_value, ragged_row, single_arm, invalid };

class CsvError : public InputError {
 public:
  CsvError(CsvErrorKind kind, const std::string& msg) : InputError(msg), kind_(kind) {}
  CsvErrorKind kind() const noexcept { return kind_; }

 private:
  CsvErrorKind kind_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return cells;
}

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Loads a header-row CSV. Non-outcome, non-treatment columns become covariates
/// in file order; a covariate is binary iff all its values are 0 or 1, unless
/// `kind_overrides` says otherwise.
inline TrialDataset load_csv(const std::filesystem::path& path, const std::string& outcome_col,
                             const std::string& treatment_col,
                             const std::map<std::string, CovariateKind>& kind_overrides = {}) {
  std::ifstream in(path);
  if (!in) throw CsvError(CsvErrorKind::missing_file, "cannot open file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw CsvError(CsvErrorKind::invalid, "empty file: " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header;
  for (auto cell : detail::split_csv_line(line)) header.emplace_back(cell);

  auto find_col = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw CsvError(CsvErrorKind::missing_column, "column not found: " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ycol = find_col(outcome_col);
  const std::size_t acol = find_col(treatment_col);

  TrialDataset ds;
  std::vector<std::size_t> cov_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == ycol || c == acol) continue;
    cov_cols.push_back(c);
    ds.covariate_names.push_back(header[c]);
  }
  for (const auto& [name, kind] : kind_overrides) {
    (void)kind;
    if (std::find(ds.covariate_names.begin(), ds.covariate_names.end(), name) == ds.covariate_names.end())
      throw CsvError(CsvErrorKind::missing_column, "kind override names unknown covariate: " + name);
  }
  ds.x.assign(cov_cols.size(), {});

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw CsvError(CsvErrorKind::ragged_row, "row " + std::to_string(row) + ": expected " +
                                                   std::to_string(header.size()) + " cells, found " +
                                                   std::to_string(cells.size()));
    auto parse = [&](std::size_t c) {
      const auto cell = cells[c];
      if (cell.empty() || cell == "NA" || cell == "NaN" || cell == ".")
        throw CsvError(CsvErrorKind::missing_value,
                       "row " + std::to_string(row) + ", column " + header[c] + ": missing value");
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw CsvError(CsvErrorKind::non_numeric, "row " + std::to_string(row) + ", column " + header[c] +
                                                      ": non-numeric value '" + std::string(cell) + "'");
      return v;
    };
    ds.y.push_back(parse(ycol));
    const double av = parse(acol);
    if (av != 0.0 && av != 1.0)
      throw CsvError(CsvErrorKind::invalid, "row " + std::to_string(row) + ", column " + header[acol] +
                                                ": treatment must be 0 or 1");
    ds.a.push_back(static_cast<int>(av));
    for (std::size_t k = 0; k < cov_cols.size(); ++k) ds.x[k].push_back(parse(cov_cols[k]));
  }

  for (std::size_t k = 0; k < cov_cols.size(); ++k) {
    const auto& col = ds.x[k];
    const bool is_binary = std::all_of(col.begin(), col.end(), [](double v) { return v == 0.0 || v == 1.0; });
    CovariateKind kind = is_binary ? CovariateKind::binary : CovariateKind::continuous;
    if (auto it = kind_overrides.find(ds.covariate_names[k]); it != kind_overrides.end()) kind = it->second;
    ds.covariate_kinds.push_back(kind);
  }

  if (ds.n() > 0 && ds.arm_size(0) == 0) throw CsvError(CsvErrorKind::single_arm, "treatment arm empty: no control (a=0) rows");
  if (ds.n() > 0 && ds.arm_size(1) == 0) throw CsvError(CsvErrorKind::single_arm, "treatment arm empty: no test (a=1) rows");
  const auto errors = validate(ds);
  if (!errors.empty()) throw CsvError(CsvErrorKind::invalid, errors.front().message);
  return ds;
}

/// Writes the dataset with shortest round-trip number formatting.
inline void write_csv(const TrialDataset& ds, std::ostream& out, const std::string& outcome_col = "y",
                      const std::string& treatment_col = "a") {
  out << outcome_col << ',' << treatment_col;
  for (const auto& name : ds.covariate_names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    out << detail::format_double(ds.y[i]) << ',' << ds.a[i];
    for (std::size_t j = 0; j < ds.p(); ++j) out << ',' << detail::format_double(ds.x[j][i]);
    out << '\n';
  }
}

inline void write_csv(const TrialDataset& ds, const std::filesystem::path& path, const std::string& outcome_col = "y",
                      const std::string& treatment_col = "a") {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path.string());
  write_csv(ds, out, outcome_col, treatment_col);
}

/// FNV-1a over raw bytes; used for manifests and reproducibility checks.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t dataset_hash(const TrialDataset& ds) {
  std::ostringstream os;
  write_csv(ds, os);
  return fnv1a(os.str());
}

}  // namespace prism
