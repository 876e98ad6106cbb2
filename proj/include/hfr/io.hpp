#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace hfr {

/// Numeric CSV with a header row.
struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;  // rows x header.size()
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Series table: columns t (1-based), <prefix>1 .. <prefix>k, one row per
/// column of `series` (k x T), starting at time `first_t`.
CsvTable series_table(const Eigen::Ref<const Eigen::MatrixXd>& series, const std::string& prefix,
                      long first_t = 1);

}  // namespace hfr
