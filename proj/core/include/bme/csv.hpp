#pragma once

#include <string>
#include <vector>

#include "bme/errors.hpp"

namespace bme::csv {

/// One parsed CSV file: header names plus numeric rows.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

/// Read a comma-separated file with one header line and numeric body.
/// Cells are trimmed of surrounding whitespace. Throws IOError when the
/// file cannot be opened and ParseError (with the 1-based line number)
/// for ragged rows or non-numeric cells.
Table read_file(const std::string& path);

/// Format a double so that it round-trips exactly through text.
std::string format(double v);

/// Write header + rows of preformatted cells. Throws IOError on failure.
void write_file(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

}  // namespace bme::csv
