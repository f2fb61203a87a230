#pragma once

namespace ksim {

/// Every parallel kernel has a serial twin that produces bitwise-identical
/// results; `serial` selects it.
enum class Execution { serial, parallel };

/// OpenMP thread count available to parallel kernels (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace ksim
