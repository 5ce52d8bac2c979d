#pragma once

#include <vector>

#include "nucleiquant/gradcheck.hpp"

namespace nucleiquant {

// Every kernel on three or more seeded shapes, then a base-width-8 network
// on 16x16 inputs. Kernel checks use options.tolerance; the end-to-end
// checks use ten times that.
std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckOptions& options);

}  // namespace nucleiquant
