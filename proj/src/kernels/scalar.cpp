#include "cnnmap/kernels.hpp"

namespace cnnmap::kernels {

namespace {

template <class T>
T dot_ref(const T* a, const T* b, std::size_t n) {
  T acc = T{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void momentum_ref(float* w, float* v, const float* g, float lr, float momentum, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const float mv = momentum * v[i];
    const float step = lr * g[i];
    v[i] = mv - step;
    w[i] = w[i] + v[i];
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      Isa::scalar, dot_ref<float>, dot_ref<double>, axpy_ref<float>, axpy_ref<double>, momentum_ref,
  };
  return table;
}

}  // namespace cnnmap::kernels
