#include "tafnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tafnet {

std::string Shape4::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
         "x" + std::to_string(w);
}

Tensor4::Tensor4(Shape4 s, double fill) : shape(s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw std::invalid_argument("Tensor4: all dimensions must be >= 1, got " + s.str());
  }
  data.assign(size_t(s.numel()), fill);
}

Tensor4 Tensor4::from(Shape4 s, std::vector<double> values) {
  Tensor4 t(s);
  if (values.size() != t.data.size()) {
    throw std::invalid_argument("Tensor4::from: " + std::to_string(values.size()) +
                                " values for shape " + s.str());
  }
  t.data = std::move(values);
  return t;
}

Tensor4 Tensor4::scalar(double v) {
  Tensor4 t(Shape4{1, 1, 1, 1});
  t.data[0] = v;
  return t;
}

double Tensor4::sum() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

bool Tensor4::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor4::bitwise_equal(const Tensor4& o) const {
  return shape == o.shape &&
         std::memcmp(data.data(), o.data.data(), data.size() * sizeof(double)) == 0;
}

void check_shape(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

}  // namespace tafnet
