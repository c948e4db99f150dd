#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "knockout/error.hpp"
#include "knockout/mask.hpp"
#include "knockout/random.hpp"

namespace knockout {

/// Inputs X (n x d) and a scalar target per row. Class labels are stored as
/// 0/1 doubles.
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
};

/// A dataset with its observed-missingness mask N. Values under N = 1 are
/// retained for oracle checks; trainers must never read them.
struct ObservedDataset {
  Dataset data;
  MaskMatrix missing;

  static ObservedDataset complete(Dataset d) {
    MaskMatrix n = MaskMatrix::Zero(d.x.rows(), d.x.cols());
    return {std::move(d), std::move(n)};
  }
};

/// Round-trip formatting for doubles (shortest representation).
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline Dataset take_rows(const Dataset& d, std::span<const Eigen::Index> rows) {
  Dataset out{Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), d.x.cols()),
              Eigen::VectorXd(static_cast<Eigen::Index>(rows.size()))};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = d.x.row(rows[i]);
    out.y(static_cast<Eigen::Index>(i)) = d.y(rows[i]);
  }
  return out;
}

/// Leading `train_fraction` of rows becomes the training split. Rows from
/// draw_dataset are already i.i.d., so no shuffle is applied.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) throw Error("train_fraction must lie in (0, 1)");
  auto n_train = static_cast<Eigen::Index>(std::llround(train_fraction * static_cast<double>(d.rows())));
  Dataset train{d.x.topRows(n_train), d.y.head(n_train)};
  Dataset test{d.x.bottomRows(d.rows() - n_train), d.y.tail(d.rows() - n_train)};
  return {std::move(train), std::move(test)};
}

/// Shuffled split for externally loaded tables.
inline std::pair<ObservedDataset, ObservedDataset> shuffled_split(const ObservedDataset& d, double train_fraction,
                                                                  Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d.data.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
  auto pick = [&](std::span<const Eigen::Index> rows) {
    ObservedDataset out{take_rows(d.data, rows), MaskMatrix(static_cast<Eigen::Index>(rows.size()), d.missing.cols())};
    for (std::size_t i = 0; i < rows.size(); ++i) out.missing.row(static_cast<Eigen::Index>(i)) = d.missing.row(rows[i]);
    return out;
  };
  std::span<const Eigen::Index> all(idx);
  return {pick(all.first(n_train)), pick(all.subspan(n_train))};
}

// CSV dialect: comma separated, header row, LF endings, empty field = missing.

inline void write_dataset_csv(std::ostream& os, const ObservedDataset& d, const std::vector<std::string>& names = {}) {
  const auto cols = d.data.x.cols();
  for (Eigen::Index j = 0; j < cols; ++j)
    os << (names.empty() ? "x" + std::to_string(j + 1) : names[static_cast<std::size_t>(j)]) << ',';
  os << "y\n";
  for (Eigen::Index i = 0; i < d.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!d.missing(i, j)) os << format_double(d.data.x(i, j));
      os << ',';
    }
    os << format_double(d.data.y(i)) << '\n';
  }
}

/// Writes the observed-missingness mask as 0/1 CSV with the same header.
inline void write_mask_csv(std::ostream& os, const MaskMatrix& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << 'x' << (j + 1);
  os << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << int(m(i, j));
    os << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, std::size_t col) {
  double v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw Error("csv line " + std::to_string(line) + " column " + std::to_string(col) + ": cannot parse '" + s + "'");
  return v;
}

}  // namespace detail

/// Reads a CSV whose last column is the target. Empty feature fields become
/// observed-missing entries; the target must be present.
inline ObservedDataset read_dataset_csv(std::istream& is, std::vector<std::string>* names = nullptr) {
  std::string line;
  if (!std::getline(is, line)) throw Error("csv: missing header row");
  auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw Error("csv: need at least one feature column and a target column");
  const std::size_t d = header.size() - 1;
  if (names) names->assign(header.begin(), header.end() - 1);
  std::vector<double> values;
  std::vector<std::uint8_t> miss;
  std::vector<double> ys;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != d + 1)
      throw Error("csv line " + std::to_string(lineno) + ": expected " + std::to_string(d + 1) + " fields");
    for (std::size_t j = 0; j < d; ++j) {
      if (fields[j].empty()) {
        values.push_back(0.0);
        miss.push_back(1);
      } else {
        values.push_back(detail::parse_double(fields[j], lineno, j + 1));
        miss.push_back(0);
      }
    }
    if (fields[d].empty()) throw Error("csv line " + std::to_string(lineno) + ": missing target");
    ys.push_back(detail::parse_double(fields[d], lineno, d + 1));
  }
  const auto n = static_cast<Eigen::Index>(ys.size());
  ObservedDataset out;
  out.data.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), n, static_cast<Eigen::Index>(d));
  out.data.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  out.missing = Eigen::Map<MaskMatrix>(miss.data(), n, static_cast<Eigen::Index>(d));
  return out;
}

}  // namespace knockout
