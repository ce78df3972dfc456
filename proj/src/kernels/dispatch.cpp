#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "cnnmap/kernels.hpp"

namespace cnnmap::kernels {

#ifndef CNNMAP_WITH_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(CNNMAP_WITH_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return avx2_table() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect_isa() {
  if (const char* forced = std::getenv("CNNMAP_ISA"); forced && std::string(forced) == "scalar") {
    return Isa::scalar;
  }
  return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

namespace {

const KernelTable& table_for(Isa isa) {
  return isa == Isa::avx2 ? *avx2_table() : scalar_table();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{&table_for(detect_isa())};
  return slot;
}

}  // namespace

const KernelTable& active() { return *active_slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("kernel variant not available: " + std::string(isa_name(isa)));
  }
  active_slot().store(&table_for(isa), std::memory_order_relaxed);
}

template <>
float dot<float>(std::span<const float> a, std::span<const float> b) {
  return active().dot_f32(a.data(), b.data(), a.size());
}
template <>
double dot<double>(std::span<const double> a, std::span<const double> b) {
  return active().dot_f64(a.data(), b.data(), a.size());
}
template <>
void axpy<float>(float alpha, std::span<const float> x, std::span<float> y) {
  active().axpy_f32(alpha, x.data(), y.data(), x.size());
}
template <>
void axpy<double>(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy_f64(alpha, x.data(), y.data(), x.size());
}

void momentum_update(std::span<float> weights, std::span<float> velocity, std::span<const float> grads,
                     float lr, float momentum) {
  active().momentum_f32(weights.data(), velocity.data(), grads.data(), lr, momentum, weights.size());
}

}  // namespace cnnmap::kernels
