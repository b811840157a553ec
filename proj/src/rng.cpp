#include "hytrec/rng.hpp"

#include <sstream>

namespace hytrec {

std::string Rng::save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::load_state(const std::string& text) {
    std::istringstream is(text);
    is >> engine_;
    HYT_CHECK(Error, !is.fail(), "malformed rng state");
}

}  // namespace hytrec
