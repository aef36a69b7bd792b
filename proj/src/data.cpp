#include "addlink/data.hpp"

#include "addlink/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>

namespace addlink {

namespace {

std::string_view
trim(std::string_view s)
{
  const auto first = s.find_first_not_of(" \t\r\"");
  if (first == std::string_view::npos)
    return {};
  const auto last = s.find_last_not_of(" \t\r\"");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view>
split(std::string_view line)
{
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos)
      break;
    start = comma + 1;
  }
  return cells;
}

bool
is_missing(std::string_view cell)
{
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" ||
         cell == "null";
}

} // namespace

RawTable
load_csv(const std::filesystem::path& path, const CsvSchema& schema)
{
  std::ifstream in(path);
  if (!in)
    throw DataError(fmt::format("cannot open '{}'", path.string()));

  std::string line;
  if (!std::getline(in, line))
    throw DataError(fmt::format("'{}': empty data", path.string()));
  std::vector<std::string> header;
  for (auto cell : split(line))
    header.emplace_back(cell);

  auto column_of = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw DataError(
        fmt::format("'{}': no column named '{}'", path.string(), name));
    return static_cast<std::size_t>(it - header.begin());
  };

  RawTable table;
  table.response_name = schema.response;
  const std::size_t response_col = column_of(schema.response);
  std::vector<std::size_t> cov_cols;
  if (schema.covariates.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c != response_col) {
        cov_cols.push_back(c);
        table.covariate_names.push_back(header[c]);
      }
    }
  } else {
    for (const auto& name : schema.covariates) {
      cov_cols.push_back(column_of(name));
      table.covariate_names.push_back(name);
    }
  }
  if (cov_cols.empty())
    throw DataError("no covariate columns selected");

  std::vector<double> response;
  std::vector<double> covariates;
  std::size_t row = 1; // header is row 1
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty())
      continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw DataError(fmt::format("'{}': row {} has {} fields, expected {}",
                                  path.string(),
                                  row,
                                  cells.size(),
                                  header.size()));
    }
    auto parse = [&](std::size_t col) {
      const auto cell = cells[col];
      if (is_missing(cell)) {
        throw DataError(fmt::format("'{}': missing value at row {}, column {}",
                                    path.string(),
                                    row,
                                    header[col]));
      }
      double value = 0.0;
      const auto [ptr, ec] =
        std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc() || ptr != cell.data() + cell.size() ||
          !std::isfinite(value)) {
        throw DataError(
          fmt::format("'{}': cannot parse '{}' at row {}, column {}",
                      path.string(),
                      cell,
                      row,
                      header[col]));
      }
      return value;
    };
    response.push_back(parse(response_col));
    for (auto c : cov_cols)
      covariates.push_back(parse(c));
  }
  if (response.empty())
    throw DataError(fmt::format("'{}': empty data", path.string()));

  const auto n = static_cast<Eigen::Index>(response.size());
  const auto d = static_cast<Eigen::Index>(cov_cols.size());
  table.response = Eigen::Map<Eigen::VectorXd>(response.data(), n);
  table.covariates =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>(covariates.data(), n, d);
  return table;
}

std::pair<Eigen::MatrixXd, std::vector<CoordinateScale>>
rescale_to_cube(const Eigen::MatrixXd& raw)
{
  Eigen::MatrixXd cube(raw.rows(), raw.cols());
  std::vector<CoordinateScale> scale(raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const double lo = raw.col(j).minCoeff();
    const double hi = raw.col(j).maxCoeff();
    if (!(hi > lo))
      throw DataError(fmt::format("covariate column {} is constant", j + 1));
    scale[j] = { lo, hi };
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      const double u = raw(i, j) == hi ? 1.0 : scale[j].to_cube(raw(i, j));
      cube(i, j) = std::clamp(u, -1.0, 1.0);
    }
  }
  return { std::move(cube), std::move(scale) };
}

Eigen::MatrixXd
rescale_from_cube(const Eigen::MatrixXd& cube,
                  const std::vector<CoordinateScale>& scale)
{
  Eigen::MatrixXd out(cube.rows(), cube.cols());
  for (Eigen::Index j = 0; j < cube.cols(); ++j)
    for (Eigen::Index i = 0; i < cube.rows(); ++i)
      out(i, j) = scale.at(j).to_original(cube(i, j));
  return out;
}

Dataset
make_dataset(const RawTable& table)
{
  auto [cube, scale] = rescale_to_cube(table.covariates);
  Dataset data;
  data.y = table.response;
  data.x = std::move(cube);
  data.scale = std::move(scale);
  data.names = table.covariate_names;
  return data;
}

Dataset
cube_dataset(Eigen::VectorXd y, Eigen::MatrixXd x)
{
  if (y.size() != x.rows())
    throw UsageError("dataset: response and covariates differ in length");
  Dataset data;
  data.y = std::move(y);
  data.x = std::move(x);
  data.scale.assign(data.x.cols(), CoordinateScale{});
  for (Eigen::Index j = 0; j < data.x.cols(); ++j)
    data.names.push_back(fmt::format("x{}", j + 1));
  return data;
}

} // namespace addlink
