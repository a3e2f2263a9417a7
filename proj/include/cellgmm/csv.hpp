#pragma once

#include <string>
#include <vector>

#include "cellgmm/types.hpp"

namespace cellgmm {

struct CsvTable {
  std::vector<std::string> header;
  DataSet data;
};

// RFC-4180 CSV with a header row; empty fields and the literals NA / NaN
// (case-insensitive) parse as missing cells.
CsvTable read_dataset_csv(const std::string& path);

// '.' decimal, 17 significant digits, LF line endings. Cells where
// blank_mask == 0 are written as empty fields.
void write_matrix_csv(const std::string& path, const Matrix& values,
                      const std::vector<std::string>& header,
                      const IntMatrix* blank_mask = nullptr);

void write_int_matrix_csv(const std::string& path, const IntMatrix& values,
                          const std::vector<std::string>& header);

std::string format_double(double v);

std::vector<std::string> default_header(int p, const std::string& prefix = "x");

}  // namespace cellgmm
