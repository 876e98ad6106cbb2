#include "hfr/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hfr/error.hpp"

namespace hfr {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

CsvTable read_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, path.string() + " is empty");
  table.header = split_line(line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != table.header.size()) {
      throw Error(ErrorCode::IoError, path.string() + ": row " + std::to_string(rows.size() + 2) +
                                          " has " + std::to_string(cells.size()) + " cells, expected " +
                                          std::to_string(table.header.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& cell : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(ErrorCode::IoError, path.string() + ": non-numeric cell '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(table.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return table;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  auto out = open_out(path);
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    out << (c ? "," : "") << table.header[c];
  }
  out << '\n';
  for (Eigen::Index r = 0; r < table.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) {
      out << (c ? "," : "") << format_double(table.values(r, c));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  write_text(path, value.dump(2) + "\n");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

CsvTable series_table(const Eigen::Ref<const Eigen::MatrixXd>& series, const std::string& prefix,
                      long first_t) {
  CsvTable table;
  table.header.push_back("t");
  for (Eigen::Index k = 0; k < series.rows(); ++k) table.header.push_back(prefix + std::to_string(k + 1));
  table.values.resize(series.cols(), series.rows() + 1);
  for (Eigen::Index t = 0; t < series.cols(); ++t) {
    table.values(t, 0) = static_cast<double>(first_t + t);
    table.values.row(t).tail(series.rows()) = series.col(t).transpose();
  }
  return table;
}

}  // namespace hfr
