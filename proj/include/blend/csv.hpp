#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace blend::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column position, or nullopt when absent.
  std::optional<std::size_t> find(std::string_view name) const;
};

// Comma-separated, header row, optional double-quoted fields. Throws
// blend::Error(Io) if the file cannot be opened or a row has the wrong width.
Table read(const std::string& path);

std::vector<std::string> split_line(std::string_view line);

// Shortest representation that parses back to the same double.
std::string format(double value);

// Parses a finite double; nullopt for empty / NA / non-numeric text.
std::optional<double> parse_double(std::string_view text);

bool is_missing(std::string_view text);

void write_row(std::ostream& os, const std::vector<std::string>& fields);

}  // namespace blend::csv
