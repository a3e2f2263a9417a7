#include "cellgmm/types.hpp"

#include <cmath>

namespace cellgmm {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ColumnTooSparse: return "ColumnTooSparse";
    case ErrorCode::DegenerateDimensions: return "DegenerateDimensions";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::SingularSubmatrix: return "SingularSubmatrix";
    case ErrorCode::AllWeightsZero: return "AllWeightsZero";
    case ErrorCode::EmptyComponent: return "EmptyComponent";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::TooFewCleanRows: return "TooFewCleanRows";
    case ErrorCode::RejectionBudgetExceeded: return "RejectionBudgetExceeded";
    case ErrorCode::NotEnoughCells: return "NotEnoughCells";
    case ErrorCode::UnknownScenario: return "UnknownScenario";
    case ErrorCode::GTooLarge: return "GTooLarge";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

DataSet DataSet::fully_observed(Matrix values) {
  DataSet d;
  d.observed = IntMatrix::Ones(values.rows(), values.cols());
  d.values = std::move(values);
  return d;
}

DataSet DataSet::from_values_with_nan(Matrix values) {
  DataSet d;
  d.observed = IntMatrix::Ones(values.rows(), values.cols());
  for (int i = 0; i < values.rows(); ++i) {
    for (int j = 0; j < values.cols(); ++j) {
      if (std::isnan(values(i, j))) {
        d.observed(i, j) = 0;
        values(i, j) = 0.0;
      }
    }
  }
  d.values = std::move(values);
  return d;
}

CellMask CellMask::all_reliable(int n, int p) {
  return CellMask{IntMatrix::Ones(n, p)};
}

IndexSplit subset_indices(const IntVector& mask_row) {
  IndexSplit split;
  split.reliable.reserve(mask_row.size());
  split.unreliable.reserve(mask_row.size());
  for (int j = 0; j < mask_row.size(); ++j) {
    (mask_row(j) != 0 ? split.reliable : split.unreliable).push_back(j);
  }
  return split;
}

int required_h(double h_frac, int n) {
  return static_cast<int>(std::ceil(h_frac * static_cast<double>(n)));
}

int validate_dataset(const DataSet& data, const FitConfig& cfg) {
  const int n = data.n();
  const int p = data.p();
  if (p == 0 || n < 2 || n < cfg.g) {
    fail(ErrorCode::DegenerateDimensions,
         "need n >= max(2, G) and p >= 1, got n=" + std::to_string(n) +
             ", p=" + std::to_string(p) + ", G=" + std::to_string(cfg.g));
  }
  if (data.observed.rows() != n || data.observed.cols() != p) {
    fail(ErrorCode::ShapeMismatch, "observed indicator shape differs from values");
  }
  if (cfg.h_frac <= 0.0 || cfg.h_frac > 1.0) {
    fail(ErrorCode::InvalidArgument, "h_frac must lie in (0, 1]");
  }
  const int h = required_h(cfg.h_frac, n);
  for (int j = 0; j < p; ++j) {
    int observed_count = 0;
    for (int i = 0; i < n; ++i) {
      if (data.observed(i, j) != 0) {
        ++observed_count;
        if (!std::isfinite(data.values(i, j))) {
          fail(ErrorCode::NonFiniteValue,
               "non-finite value at observed cell (" + std::to_string(i) + "," +
                   std::to_string(j) + ")");
        }
      }
    }
    if (observed_count == 0) {
      fail(ErrorCode::ColumnTooSparse,
           "column " + std::to_string(j) + " has no observed cells");
    }
    if (observed_count < h) {
      fail(ErrorCode::ColumnTooSparse,
           "column " + std::to_string(j) + " has " + std::to_string(observed_count) +
               " observed cells, fewer than h=" + std::to_string(h));
    }
  }
  return h;
}

}  // namespace cellgmm
