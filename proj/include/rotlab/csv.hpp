#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace rotlab::csv {

/// %.10g; nan and inf spelled out.
std::string num(double v);

/// RFC 4180 quoting when the field contains a comma, quote or newline.
std::string field(std::string_view s);

void write_row(std::ostream& os, const std::vector<std::string>& fields);

}  // namespace rotlab::csv
