#include "blosa/memory.hpp"

#include <atomic>

namespace blosa {

OutOfMemoryError::OutOfMemoryError(std::size_t requested_elements)
    : std::runtime_error("out of memory: request of " +
                         std::to_string(requested_elements) +
                         " tensor elements exceeds the available budget"),
      requested_(requested_elements) {}

namespace memory {
namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_limit{std::numeric_limits<std::size_t>::max()};

}  // namespace

void on_allocate(std::size_t elements) {
  const std::size_t limit = g_limit.load(std::memory_order_relaxed);
  std::size_t live = g_live.load(std::memory_order_relaxed);
  std::size_t next = 0;
  do {
    if (elements > limit || live > limit - elements) {
      throw OutOfMemoryError(elements);
    }
    next = live + elements;
  } while (!g_live.compare_exchange_weak(live, next, std::memory_order_relaxed));

  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (next > peak &&
         !g_peak.compare_exchange_weak(peak, next, std::memory_order_relaxed)) {
  }
}

void on_release(std::size_t elements) noexcept {
  g_live.fetch_sub(elements, std::memory_order_relaxed);
}

std::size_t live_elements() noexcept { return g_live.load(std::memory_order_relaxed); }
std::size_t peak_elements() noexcept { return g_peak.load(std::memory_order_relaxed); }

void reset_peak() noexcept { g_peak.store(g_live.load(std::memory_order_relaxed)); }

void set_element_limit(std::size_t limit) noexcept { g_limit.store(limit); }
std::size_t element_limit() noexcept { return g_limit.load(); }

PeakScope::PeakScope() noexcept : baseline_(live_elements()) { reset_peak(); }

std::size_t PeakScope::peak_above_baseline() const noexcept {
  const std::size_t peak = peak_elements();
  return peak > baseline_ ? peak - baseline_ : 0;
}

}  // namespace memory
}  // namespace blosa
