#pragma once

#include <string>
#include <vector>

namespace gf3d {

// Line chart of y columns against an x column. `filter` is "column=value"
// or empty. Non-numeric cells are skipped.
std::string plot_svg(const std::string& csv, const std::string& x, const std::vector<std::string>& ys,
                     const std::string& filter);

}  // namespace gf3d
