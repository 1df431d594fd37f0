#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace busi {

// RFC 4180 quoting: fields with a comma, quote or newline are quoted.
std::string csv_field(std::string_view s);
// Splits one record; throws Error{kParse} on an unterminated quote.
std::vector<std::string> parse_csv_line(std::string_view line);

}  // namespace busi
