#pragma once

#include <map>
#include <string>

namespace mnetsat {

// Flat key=value lines; '#' starts a comment; surrounding whitespace ignored.
std::map<std::string, std::string> read_config_file(const std::string& path);

}  // namespace mnetsat
