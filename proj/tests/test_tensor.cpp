// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "test_support.hpp"
#include "vtc/rng.hpp"
#include "vtc/tensor.hpp"

namespace vtc {
namespace {

TEST(Tensor, ShapeAndAccess) {
    Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    EXPECT_EQ(t(1, 2), 6.0);
    EXPECT_EQ(t.row(1)[0], 4.0);
    EXPECT_EQ(shape_string(t.shape()), "[2x3]");
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
    EXPECT_THROW(Tensor::from_rows({{1, 2}, {3}}), std::invalid_argument);
    EXPECT_THROW(Tensor({3}).rows(), std::logic_error);
    EXPECT_THROW(t.item(), std::logic_error);
    EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(Tensor, IdentityAndFinite) {
    Tensor I = Tensor::identity(3);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_EQ(I(i, j), i == j ? 1.0 : 0.0);
        }
    }
    EXPECT_TRUE(I.all_finite());
    I(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(I.all_finite());
}

TEST(Tensor, MaxAbsDiff) {
    Tensor a = Tensor::from_rows({{1, 2}});
    Tensor b = Tensor::from_rows({{1.5, 1}});
    EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 1.0);
    EXPECT_THROW(max_abs_diff(a, Tensor::matrix(2, 1)), std::invalid_argument);
}

TEST(Tensor, BinaryRoundTripIsBitExact) {
    Tensor t = testing::random_matrix(5, 7, 11);
    t(0, 0) = -0.0;
    t(1, 1) = 1e-310;  // subnormal
    std::stringstream ss;
    write_tensor(ss, t);
    Tensor back = read_tensor(ss);
    ASSERT_EQ(back.shape(), t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(std::signbit(back[i]), std::signbit(t[i]));
        EXPECT_EQ(back[i], t[i]);
    }
}

TEST(Tensor, BinaryRejectsCorruption) {
    std::stringstream bad("XXXX");
    EXPECT_THROW(read_tensor(bad), std::runtime_error);

    std::stringstream ss;
    write_tensor(ss, Tensor::matrix(4, 4, 1.0));
    std::string bytes = ss.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_tensor(truncated), std::runtime_error);
}

TEST(Tensor, JsonRoundTrip) {
    Tensor t = testing::random_matrix(3, 2, 5);
    EXPECT_EQ(tensor_from_json(tensor_to_json(t)), t);
}

TEST(Rng, SeededStreamsRepeat) {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 10; ++i) {
        const double x = a.normal();
        EXPECT_EQ(x, b.normal());
        EXPECT_NE(x, c.normal());
    }
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
    Rng rng(7);
    for (std::size_t k = 0; k <= 20; ++k) {
        auto s = rng.sample_without_replacement(20, k);
        ASSERT_EQ(s.size(), k);
        std::sort(s.begin(), s.end());
        EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
        for (std::size_t v : s) {
            EXPECT_LT(v, 20u);
        }
    }
    EXPECT_THROW(rng.sample_without_replacement(3, 4), std::invalid_argument);
}

TEST(Rng, DeriveSeedSeparatesTags) {
    EXPECT_EQ(derive_seed(1, "a"), derive_seed(1, "a"));
    EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
    EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
    // Published FNV-1a test vectors.
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

}  // namespace
}  // namespace vtc
