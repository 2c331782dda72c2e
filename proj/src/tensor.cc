/**
 * Copyright 2026 The fedmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fedmoe/tensor.h"

#include <algorithm>
#include <cmath>

namespace fedmoe {

std::string ShapeToString(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t ShapeNumel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {
void CheckShape(const Shape& shape) {
  if (shape.empty()) throw ContractViolation("tensor shape must have rank >= 1");
  for (auto e : shape) {
    if (e == 0) {
      throw ContractViolation("tensor extents must be positive, got " +
                              ShapeToString(shape));
    }
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  CheckShape(shape_);
  data_.assign(ShapeNumel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  CheckShape(shape_);
  if (data_.size() != ShapeNumel(shape_)) {
    throw ContractViolation("element count " + std::to_string(data_.size()) +
                            " does not match shape " + ShapeToString(shape_));
  }
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (ShapeNumel(shape) != data_.size()) {
    throw ContractViolation("cannot reshape " + ShapeToString(shape_) +
                            " to " + ShapeToString(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::Fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  RequireSameShape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  RequireSameShape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double Dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ContractViolation("Dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double SquaredNorm(const Tensor& t) { return Dot(t, t); }
double Norm(const Tensor& t) { return std::sqrt(SquaredNorm(t)); }

double MaxAbsDiff(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "MaxAbsDiff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void RequireSameShape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.SameShape(b)) {
    throw ContractViolation(std::string(what) + ": shape mismatch " +
                            ShapeToString(a.shape()) + " vs " +
                            ShapeToString(b.shape()));
  }
}

}  // namespace fedmoe
