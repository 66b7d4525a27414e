#pragma once

#include <string>

#include "railmatch/geometry.hpp"

namespace railmatch {

/// Writes `path` as CSV (`x_mm,y_mm` header) and `path + ".json"` as the
/// sidecar with kind, closedness and working edge.
void write_profile_csv(const Profile& p, const std::string& path);

/// Reads a profile written by write_profile_csv. The sidecar is optional;
/// without it the profile defaults to open/typical/left.
Profile read_profile_csv(const std::string& path);

} // namespace railmatch
