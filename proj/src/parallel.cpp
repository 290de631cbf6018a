#include "prnu/parallel.hpp"

#include <cstdlib>
#include <string>

namespace prnu {

unsigned resolve_threads(std::optional<int> requested) {
    if (requested && *requested > 0) {
        return static_cast<unsigned>(*requested);
    }
    if (const char* env = std::getenv("PRNU_MATCH_THREADS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0) {
                return static_cast<unsigned>(v);
            }
        } catch (const std::exception&) {
            // fall through to hardware default
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

} // namespace prnu
