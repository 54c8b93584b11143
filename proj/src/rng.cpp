#include "difftts/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace difftts {

std::string Rng::save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::load_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (is.fail()) throw std::runtime_error("Rng::load_state: malformed state string");
}

uint64_t derive_seed(uint64_t base, const std::string& tag) {
    uint64_t h = base ^ 0x9e3779b97f4a7c15ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
        h ^= h >> 29;
    }
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 32;
    return h;
}

}  // namespace difftts
