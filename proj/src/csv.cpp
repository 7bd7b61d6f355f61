#include "hte/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace hte {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_cell(const std::string& cell, std::size_t line_no, std::size_t col_no) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    fail("parse-error", "line " + std::to_string(line_no) + ", column " +
                            std::to_string(col_no) + ": not a number: '" + cell + "'");
  }
  return v;
}

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;  // row-major
};

RawTable read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io-error", "cannot open " + path);
  RawTable table;
  std::string line;
  if (!std::getline(in, line)) fail("parse-error", "missing header row in " + path);
  table.header = split_line(line);
  for (auto& h : table.header) {
    while (!h.empty() && (h.back() == '\r' || h.back() == ' ')) h.pop_back();
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != table.header.size()) {
      fail("parse-error", "line " + std::to_string(line_no) + ": expected " +
                              std::to_string(table.header.size()) + " cells, got " +
                              std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) row[c] = parse_cell(cells[c], line_no, c + 1);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::size_t find_column(const RawTable& t, const std::string& name) {
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c] == name) return c;
  }
  fail("missing-column", "column '" + name + "' not found");
}

void write_number(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  const RawTable t = read_table(path);
  if (t.rows.empty()) fail("parse-error", "no data rows in " + path);
  const std::size_t tc = find_column(t, schema.treatment_col);
  const std::size_t yc = find_column(t, schema.response_col);
  if (tc == yc) fail("missing-column", "treatment and response columns must differ");

  Dataset d;
  const std::size_t n = t.rows.size();
  const std::size_t p = t.header.size() - 2;
  if (p < 1) fail("dimension-mismatch", "no feature columns");
  d.features = Matrix(n, p);
  d.treatment.resize(n);
  d.response.resize(n);
  for (std::size_t c = 0, f = 0; c < t.header.size(); ++c) {
    if (c == tc || c == yc) continue;
    d.feature_names.push_back(t.header[c]);
    for (std::size_t i = 0; i < n; ++i) d.features(i, f) = t.rows[i][c];
    ++f;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double tv = t.rows[i][tc];
    if (tv != 0.0 && tv != 1.0) {
      fail("parse-error",
           "line " + std::to_string(i + 2) + ": treatment must be 0 or 1");
    }
    d.treatment[i] = static_cast<int>(tv);
    d.response[i] = t.rows[i][yc];
  }
  validate_dataset(d);
  return d;
}

Matrix load_feature_csv(const std::string& path, std::vector<std::string>& names,
                        const CsvSchema& schema) {
  const RawTable t = read_table(path);
  if (t.rows.empty()) fail("parse-error", "no data rows in " + path);
  std::vector<std::size_t> keep;
  names.clear();
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c] == schema.treatment_col || t.header[c] == schema.response_col) continue;
    keep.push_back(c);
    names.push_back(t.header[c]);
  }
  if (keep.empty()) fail("dimension-mismatch", "no feature columns");
  Matrix X(t.rows.size(), keep.size());
  for (std::size_t f = 0; f < keep.size(); ++f) {
    for (std::size_t i = 0; i < t.rows.size(); ++i) X(i, f) = t.rows[i][keep[f]];
  }
  return X;
}

void write_dataset_csv(std::ostream& os, const Dataset& d) {
  for (std::size_t j = 0; j < d.p(); ++j) {
    if (d.feature_names.empty()) {
      os << 'x' << (j + 1);
    } else {
      os << d.feature_names[j];
    }
    os << ',';
  }
  os << "T,Y\n";
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < d.p(); ++j) {
      write_number(os, d.features(i, j));
      os << ',';
    }
    os << d.treatment[i] << ',';
    write_number(os, d.response[i]);
    os << '\n';
  }
}

void write_truth_csv(std::ostream& os, std::span<const double> tau,
                     std::span<const double> pi) {
  os << "tau,pi\n";
  for (std::size_t i = 0; i < tau.size(); ++i) {
    write_number(os, tau[i]);
    os << ',';
    write_number(os, pi[i]);
    os << '\n';
  }
}

void write_effects_csv(std::ostream& os, const EffectEstimates& est) {
  const bool pair = !est.mu1_hat.empty();
  os << (pair ? "effect,mu1,mu0\n" : "effect\n");
  for (std::size_t i = 0; i < est.tau_hat.size(); ++i) {
    write_number(os, est.tau_hat[i]);
    if (pair) {
      os << ',';
      write_number(os, est.mu1_hat[i]);
      os << ',';
      write_number(os, est.mu0_hat[i]);
    }
    os << '\n';
  }
}

void write_variance_study_csv(std::ostream& os, std::span<const VarianceStudyRow> rows) {
  os << "n,ratio,var_to,var_cm,reps\n";
  for (const auto& r : rows) {
    os << r.n << ',';
    write_number(os, r.ratio);
    os << ',';
    write_number(os, r.var_to);
    os << ',';
    write_number(os, r.var_cm);
    os << ',' << r.reps << '\n';
  }
}

EffectEstimates load_effects_csv(const std::string& path) {
  const RawTable t = read_table(path);
  const std::size_t ec = find_column(t, "effect");
  EffectEstimates est;
  est.tau_hat.resize(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) est.tau_hat[i] = t.rows[i][ec];
  return est;
}

}  // namespace hte
