#pragma once

namespace ecborrow {

// Library version string, e.g. "0.1.0".
const char* version();

}  // namespace ecborrow
