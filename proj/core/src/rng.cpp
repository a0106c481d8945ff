#include "cgs/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cgs {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 in (0,1] to keep log finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

Rng Rng::fork(uint64_t stream_id) const {
    Rng copy = *this;
    // Mix the stream id through splitmix64 and reseed a fresh engine.
    uint64_t z = copy.engine_() + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return Rng(z);
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << engine_ << " " << (has_spare_ ? 1 : 0) << " ";
    os.precision(17);
    os << spare_;
    return os.str();
}

void Rng::deserialize(const std::string& text) {
    std::istringstream is(text);
    int spare_flag = 0;
    is >> engine_ >> spare_flag >> spare_;
    if (is.fail()) throw std::runtime_error("Rng::deserialize: malformed state");
    has_spare_ = spare_flag != 0;
}

}  // namespace cgs
