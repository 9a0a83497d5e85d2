#include "covshift/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace covshift {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidDataError("line " + std::to_string(line_no) + ": cannot parse number '" + s + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

LabeledDataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidDataError("empty dataset file");
  const auto header = split_line(line);
  std::size_t p = 0;
  while (p < header.size() && header[p] == "x" + std::to_string(p + 1)) ++p;
  if (p == 0) throw InvalidDataError("header must start with x1");
  if (header.size() < p + 2 || header[p] != "a" || header[p + 1] != "y") {
    throw InvalidDataError("header must be x1,...,xp,a,y[,s]");
  }
  const bool has_site = header.size() >= p + 3 && header[p + 2] == "s";

  std::vector<std::vector<double>> xs;
  std::vector<int> as;
  std::vector<double> ys;
  std::vector<bool> obs;
  std::vector<int> ss;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    cells.resize(std::max(cells.size(), p + (has_site ? 3 : 2)));
    std::vector<double> x(p);
    for (std::size_t j = 0; j < p; ++j) x[j] = parse_double(cells[j], line_no);
    const bool a_empty = cells[p].empty();
    const bool y_empty = cells[p + 1].empty();
    if (a_empty != y_empty) {
      throw InvalidDataError("line " + std::to_string(line_no) + ": action and outcome must be missing together");
    }
    xs.push_back(std::move(x));
    obs.push_back(!a_empty);
    as.push_back(a_empty ? 0 : static_cast<int>(parse_double(cells[p], line_no)));
    ys.push_back(y_empty ? 0.0 : parse_double(cells[p + 1], line_no));
    ss.push_back(has_site ? static_cast<int>(parse_double(cells[p + 2], line_no)) : kTrainingSite);
  }
  const auto n = static_cast<Index>(xs.size());
  if (n == 0) throw InvalidDataError("dataset has no rows");
  Covariates x(n, static_cast<Index>(p));
  Eigen::VectorXi a(n), s(n);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) x(i, static_cast<Index>(j)) = xs[static_cast<std::size_t>(i)][j];
    a(i) = as[static_cast<std::size_t>(i)];
    y(i) = ys[static_cast<std::size_t>(i)];
    s(i) = ss[static_cast<std::size_t>(i)];
  }
  // Action set: the observed labels, defaulting to {-1, 1}.
  std::vector<int> action_set = binary_actions();
  for (Index i = 0; i < n; ++i) {
    if (obs[static_cast<std::size_t>(i)] &&
        std::find(action_set.begin(), action_set.end(), a(i)) == action_set.end()) {
      action_set.push_back(a(i));
    }
  }
  std::sort(action_set.begin(), action_set.end());
  return LabeledDataset(std::move(x), std::move(a), std::move(y), std::move(obs), std::move(s),
                        std::move(action_set));
}

LabeledDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidDataError("cannot open " + path);
  return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, const LabeledDataset& data) {
  for (Index j = 0; j < data.p(); ++j) out << 'x' << (j + 1) << ',';
  out << "a,y,s\n";
  for (Index i = 0; i < data.n(); ++i) {
    for (Index j = 0; j < data.p(); ++j) out << format_double(data.covariates()(i, j)) << ',';
    if (data.observed(i)) {
      out << data.action(i) << ',' << format_double(data.outcome(i));
    } else {
      out << ',';
    }
    out << ',' << data.site(i) << '\n';
  }
}

void write_dataset_csv(const std::string& path, const LabeledDataset& data) {
  std::ofstream out(path);
  if (!out) throw InvalidDataError("cannot write " + path);
  write_dataset_csv(out, data);
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == name) return j;
  }
  throw InvalidDataError("missing column " + name);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidDataError("cannot open " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw InvalidDataError("empty csv " + path);
  table.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    table.rows.push_back(split_line(line));
  }
  return table;
}

}  // namespace covshift
