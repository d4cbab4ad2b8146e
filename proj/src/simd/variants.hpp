#pragma once

#include "invmahal/simd.hpp"

namespace invmahal::simd::detail {

const Kernels& scalar_kernels() noexcept;
#if defined(INVMAHAL_HAVE_X86_VARIANTS)
const Kernels& avx2_kernels() noexcept;
const Kernels& avx512_kernels() noexcept;
#endif

}  // namespace invmahal::simd::detail
