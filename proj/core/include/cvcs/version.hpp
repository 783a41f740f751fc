#pragma once

namespace cvcs {

/// Project version plus `git describe` of the source tree at configure time.
const char* version();

}  // namespace cvcs
