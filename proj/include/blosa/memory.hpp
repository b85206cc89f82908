#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <new>
#include <stdexcept>
#include <string>

namespace blosa {

/// Thrown when a tensor allocation would exceed the configured element budget
/// or the system allocator fails.
class OutOfMemoryError : public std::runtime_error {
public:
  explicit OutOfMemoryError(std::size_t requested_elements);
  std::size_t requested_elements() const noexcept { return requested_; }

private:
  std::size_t requested_;
};

// Process-global live-element accounting for tensor buffers. Counts elements,
// not bytes, so numbers compare directly against analytic score counts.
namespace memory {

void on_allocate(std::size_t elements);
void on_release(std::size_t elements) noexcept;

std::size_t live_elements() noexcept;
std::size_t peak_elements() noexcept;

/// Sets the high-water mark to the current live count.
void reset_peak() noexcept;

/// Allocations that would push the live count past `limit` throw
/// OutOfMemoryError. Default is unlimited.
void set_element_limit(std::size_t limit) noexcept;
std::size_t element_limit() noexcept;

/// RAII scope measuring the high-water mark above the live count at entry.
class PeakScope {
public:
  PeakScope() noexcept;
  std::size_t peak_above_baseline() const noexcept;
  std::size_t baseline() const noexcept { return baseline_; }

private:
  std::size_t baseline_;
};

}  // namespace memory

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    memory::on_allocate(n);
    try {
      return std::allocator<T>{}.allocate(n);
    } catch (const std::bad_alloc&) {
      memory::on_release(n);
      throw OutOfMemoryError(n);
    }
  }

  void deallocate(T* p, std::size_t n) noexcept {
    std::allocator<T>{}.deallocate(p, n);
    memory::on_release(n);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept { return true; }
};

}  // namespace blosa
