// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace vtc {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : m_shape(std::move(shape)),
      m_data(element_count(m_shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : m_shape(std::move(shape)),
      m_data(std::move(data)) {
    if (element_count(m_shape) != m_data.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_string(m_shape) + " does not match " +
                                    std::to_string(m_data.size()) + " values");
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
    return Tensor({rows, cols}, fill);
}

Tensor Tensor::scalar(double value) {
    return Tensor({1, 1}, value);
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("Tensor::from_rows: ragged rows");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::row_vector(std::span<const double> values) {
    return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
    if (m_shape.size() != 2) {
        throw std::logic_error("Tensor::rows: expected rank 2, got shape " + shape_string(m_shape));
    }
    return m_shape[0];
}

std::size_t Tensor::cols() const {
    if (m_shape.size() != 2) {
        throw std::logic_error("Tensor::cols: expected rank 2, got shape " + shape_string(m_shape));
    }
    return m_shape[1];
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t c = cols();
    return std::span<double>(m_data).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const double>(m_data).subspan(r * c, c);
}

double Tensor::item() const {
    if (m_data.size() != 1) {
        throw std::logic_error("Tensor::item: tensor of shape " + shape_string(m_shape) + " is not a scalar");
    }
    return m_data[0];
}

bool Tensor::all_finite() const {
    return std::all_of(m_data.begin(), m_data.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

namespace io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

namespace {

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) {
        throw std::runtime_error("unexpected end of binary stream");
    }
    return v;
}

}  // namespace

std::uint32_t read_u32(std::istream& in) {
    return read_pod<std::uint32_t>(in);
}

std::uint64_t read_u64(std::istream& in) {
    return read_pod<std::uint64_t>(in);
}

double read_f64(std::istream& in) {
    return read_pod<double>(in);
}

void write_magic(std::ostream& out, const char (&magic)[5]) {
    out.write(magic, 4);
}

void expect_magic(std::istream& in, const char (&magic)[5]) {
    char got[4] = {};
    in.read(got, 4);
    if (!in || std::memcmp(got, magic, 4) != 0) {
        throw std::runtime_error(std::string("bad magic bytes, expected ") + magic);
    }
}

}  // namespace io

void write_tensor(std::ostream& out, const Tensor& t) {
    io::write_magic(out, "VTCT");
    io::write_u64(out, t.rank());
    for (std::size_t d : t.shape()) {
        io::write_u64(out, d);
    }
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
    io::expect_magic(in, "VTCT");
    const std::uint64_t rank = io::read_u64(in);
    if (rank > 8) {
        throw std::runtime_error("read_tensor: implausible rank " + std::to_string(rank));
    }
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) {
        d = io::read_u64(in);
    }
    std::vector<double> data(element_count(shape));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) {
        throw std::runtime_error("read_tensor: truncated payload");
    }
    return Tensor(std::move(shape), std::move(data));
}

nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("data").get<std::vector<double>>());
}

}  // namespace vtc
