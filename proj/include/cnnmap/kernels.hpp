#pragma once

// Inner-loop kernels behind the conv (patch-matrix) and dense layers.
//
// Every kernel has a scalar reference implementation; an AVX2 variant is
// compiled when the toolchain supports it and selected at runtime when the
// CPU does. Elementwise kernels (axpy, momentum) are bitwise identical
// across variants; reductions (dot) differ only in summation order.
// The active variant is fixed per process unless changed explicitly, so
// results are reproducible run to run on one machine.

#include <cstddef>
#include <span>
#include <string_view>

namespace cnnmap::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
  // v = momentum * v - lr * g; w = w + v
  void (*momentum_f32)(float* w, float* v, const float* g, float lr, float momentum, std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

/// Best variant the running CPU supports. CNNMAP_ISA=scalar in the
/// environment forces the reference path.
Isa detect_isa();
bool isa_available(Isa isa);
const KernelTable& active();
/// Throws std::invalid_argument when the variant is unavailable.
void set_active(Isa isa);

template <class T>
T dot(std::span<const T> a, std::span<const T> b);
template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y);

void momentum_update(std::span<float> weights, std::span<float> velocity, std::span<const float> grads,
                     float lr, float momentum);

}  // namespace cnnmap::kernels
