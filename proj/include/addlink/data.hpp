#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace addlink {

//! Affine map of one covariate between its original scale and [-1, 1].
struct CoordinateScale
{
  double min = -1.0;
  double max = 1.0;

  double to_cube(double x) const { return 2.0 * (x - min) / (max - min) - 1.0; }
  double to_original(double u) const
  {
    return min + 0.5 * (u + 1.0) * (max - min);
  }
};

struct CsvSchema
{
  std::string response;
  //! Empty selects every column other than the response, in file order.
  std::vector<std::string> covariates;
};

struct RawTable
{
  std::string response_name;
  std::vector<std::string> covariate_names;
  Eigen::VectorXd response;
  Eigen::MatrixXd covariates;
};

//! Working sample: covariates live in [-1, 1]^d.
struct Dataset
{
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  std::vector<CoordinateScale> scale;
  std::vector<std::string> names;

  Eigen::Index n() const noexcept { return y.size(); }
  Eigen::Index d() const noexcept { return x.cols(); }
};

RawTable load_csv(const std::filesystem::path& path, const CsvSchema& schema);

//! Column-wise x -> 2 (x - min) / (max - min) - 1. Throws on a constant
//! column.
std::pair<Eigen::MatrixXd, std::vector<CoordinateScale>>
rescale_to_cube(const Eigen::MatrixXd& raw);

Eigen::MatrixXd
rescale_from_cube(const Eigen::MatrixXd& cube,
                  const std::vector<CoordinateScale>& scale);

Dataset make_dataset(const RawTable& table);

//! Wraps data already on the cube (identity rescaling record).
Dataset cube_dataset(Eigen::VectorXd y, Eigen::MatrixXd x);

} // namespace addlink
