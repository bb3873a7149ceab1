#pragma once

// cereal support for the Eigen dense types used in persisted state.

#include <cereal/cereal.hpp>
#include <cereal/types/complex.hpp>
#include <cereal/types/deque.hpp>
#include <cereal/types/optional.hpp>
#include <cereal/types/vector.hpp>
#include <Eigen/Core>

namespace cereal {

template <class Archive, class Scalar, int Rows, int Cols, int Options, int MaxRows, int MaxCols>
void save(Archive& ar, const Eigen::Matrix<Scalar, Rows, Cols, Options, MaxRows, MaxCols>& m) {
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  ar(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) ar(m.data()[i]);
}

template <class Archive, class Scalar, int Rows, int Cols, int Options, int MaxRows, int MaxCols>
void load(Archive& ar, Eigen::Matrix<Scalar, Rows, Cols, Options, MaxRows, MaxCols>& m) {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  ar(rows, cols);
  m.resize(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) ar(m.data()[i]);
}

}  // namespace cereal
