#pragma once

// Hooks for negative-control tests of the gradient checker. Production code
// never sets a fault.
namespace gft::testing {

enum class BackwardFault {
  none,
  layer_norm_gain,  ///< scales the gain gradient of every layer norm by 1.5
};

void inject_backward_fault(BackwardFault fault);
BackwardFault active_backward_fault();

/// Clears any injected fault when destroyed.
struct ScopedBackwardFault {
  explicit ScopedBackwardFault(BackwardFault fault) { inject_backward_fault(fault); }
  ~ScopedBackwardFault() { inject_backward_fault(BackwardFault::none); }
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;
};

}  // namespace gft::testing
