#include "ecborrow/version.hpp"

namespace ecborrow {

const char* version() { return ECBORROW_VERSION; }

}  // namespace ecborrow
