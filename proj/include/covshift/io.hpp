#pragma once

#include "covshift/core.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace covshift {

// Dataset CSV: header `x1,...,xp,a,y,s`. Empty a and y cells mark a row whose
// action and outcome are missing; s is 1 (training) or 0 (calibration). The s
// column may be omitted, in which case every row is a training row.

LabeledDataset read_dataset_csv(std::istream& in);
LabeledDataset read_dataset_csv(const std::string& path);
void write_dataset_csv(std::ostream& out, const LabeledDataset& data);
void write_dataset_csv(const std::string& path, const LabeledDataset& data);

/// Plain numeric table with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const std::string& path);

/// Shortest round-trippable decimal rendering.
std::string format_double(double v);

}  // namespace covshift
