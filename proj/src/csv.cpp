#include "cellgmm/csv.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace cellgmm {

namespace {

// One record per RFC 4180: quoted fields may contain commas, escaped quotes
// and line breaks. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int ch;
  while ((ch = in.get()) != EOF) {
    any = true;
    const char c = static_cast<char>(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

bool is_missing_token(const std::string& s) {
  if (s.empty()) return true;
  std::string lower;
  lower.reserve(s.size());
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(c)));
  return lower == "na" || lower == "nan";
}

}  // namespace

CsvTable read_dataset_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);

  CsvTable table;
  std::vector<std::string> fields;
  if (!read_record(in, fields)) {
    fail(ErrorCode::IoError, path + " is empty");
  }
  table.header = fields;
  const int p = static_cast<int>(fields.size());

  std::vector<double> values;
  std::vector<int> observed;
  int n = 0;
  while (read_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // trailing newline
    if (static_cast<int>(fields.size()) != p) {
      fail(ErrorCode::IoError, path + ": row " + std::to_string(n + 2) + " has " +
                                   std::to_string(fields.size()) +
                                   " fields, expected " + std::to_string(p));
    }
    for (const std::string& f : fields) {
      if (is_missing_token(f)) {
        values.push_back(0.0);
        observed.push_back(0);
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (end == f.c_str() || *end != '\0') {
        fail(ErrorCode::IoError, path + ": cannot parse numeric field '" + f + "'");
      }
      values.push_back(v);
      observed.push_back(1);
    }
    ++n;
  }

  table.data.values.resize(n, p);
  table.data.observed.resize(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      table.data.values(i, j) = values[i * p + j];
      table.data.observed(i, j) = observed[i * p + j];
    }
  }
  return table;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> default_header(int p, const std::string& prefix) {
  std::vector<std::string> header(p);
  for (int j = 0; j < p; ++j) header[j] = prefix + std::to_string(j + 1);
  return header;
}

void write_matrix_csv(const std::string& path, const Matrix& values,
                      const std::vector<std::string>& header,
                      const IntMatrix* blank_mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j > 0) out << ',';
    out << header[j];
  }
  out << '\n';
  for (int i = 0; i < values.rows(); ++i) {
    for (int j = 0; j < values.cols(); ++j) {
      if (j > 0) out << ',';
      if (blank_mask != nullptr && (*blank_mask)(i, j) == 0) continue;
      out << format_double(values(i, j));
    }
    out << '\n';
  }
}

void write_int_matrix_csv(const std::string& path, const IntMatrix& values,
                          const std::vector<std::string>& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j > 0) out << ',';
    out << header[j];
  }
  out << '\n';
  for (int i = 0; i < values.rows(); ++i) {
    for (int j = 0; j < values.cols(); ++j) {
      if (j > 0) out << ',';
      out << values(i, j);
    }
    out << '\n';
  }
}

}  // namespace cellgmm
