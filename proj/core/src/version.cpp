#include "cvcs/version.hpp"

namespace cvcs {

const char* version() { return CVCS_VERSION; }

}  // namespace cvcs
