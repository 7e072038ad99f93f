// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace vtc {

/// Raised when an operation produces NaN or Inf.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles. Arithmetic lives in autodiff.hpp; this
/// type only owns storage and shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static Tensor scalar(double value);
    static Tensor identity(std::size_t n);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor row_vector(std::span<const double> values);

    const std::vector<std::size_t>& shape() const { return m_shape; }
    std::size_t rank() const { return m_shape.size(); }
    std::size_t size() const { return m_data.size(); }
    bool empty() const { return m_data.empty(); }

    // Rank-2 accessors. Every engine op works on matrices; scalars are 1x1.
    std::size_t rows() const;
    std::size_t cols() const;

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_shape[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_shape[1] + c]; }
    double& operator[](std::size_t i) { return m_data[i]; }
    double operator[](std::size_t i) const { return m_data[i]; }

    std::span<double> data() { return m_data; }
    std::span<const double> data() const { return m_data; }
    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    double item() const;
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return m_shape == other.m_shape; }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    std::vector<std::size_t> m_shape;
    std::vector<double> m_data;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

// Binary layout (all little-endian):
//   4 bytes  magic "VTCT"
//   u64      rank
//   u64[rank] dims
//   f64[prod(dims)] values
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

namespace io {

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
void write_magic(std::ostream& out, const char (&magic)[5]);
void expect_magic(std::istream& in, const char (&magic)[5]);

}  // namespace io

}  // namespace vtc
