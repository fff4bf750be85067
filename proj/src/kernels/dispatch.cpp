#include "handleforge/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace handleforge::kernels {

bool avx2_compiled() {
#if defined(HANDLEFORGE_X86_64)
    return true;
#else
    return false;
#endif
}

bool avx2_supported() {
#if defined(HANDLEFORGE_X86_64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "?";
}

namespace {

Backend resolve() {
    const char* env = std::getenv("HANDLEFORGE_KERNEL");
    if (env && *env) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!avx2_compiled() || !avx2_supported())
                throw std::runtime_error("HANDLEFORGE_KERNEL=avx2 but AVX2 is unavailable on this host");
            return Backend::avx2;
        }
        if (std::strcmp(env, "auto") != 0)
            throw std::runtime_error(std::string("unknown HANDLEFORGE_KERNEL value: ") + env);
    }
    return avx2_compiled() && avx2_supported() ? Backend::avx2 : Backend::scalar;
}

}  // namespace

Backend active() {
    static const Backend b = resolve();
    return b;
}

const Ops& ops() {
#if defined(HANDLEFORGE_X86_64)
    return active() == Backend::avx2 ? avx2::ops : scalar::ops;
#else
    return scalar::ops;
#endif
}

}  // namespace handleforge::kernels
