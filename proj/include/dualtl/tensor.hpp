#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualtl {

/// Dense row-major tensor of doubles. Rank 1 and 2 cover everything the model
/// needs; reductions and elementwise ops treat the data as rows x last-axis.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Tensor t;
        t.shape = {rows.size(), rows.begin()->size()};
        t.data.reserve(t.numel());
        for (const auto& r : rows) {
            if (r.size() != t.shape[1]) throw std::invalid_argument("ragged row list");
            t.data.insert(t.data.end(), r.begin(), r.end());
        }
        return t;
    }

    static Tensor vector_of(std::vector<double> v) {
        Tensor t;
        t.shape = {v.size()};
        t.data = std::move(v);
        return t;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    /// Rows/cols view: last axis is the column axis, everything before is rows.
    std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

/// C += A * B for row-major matrices, sizes m x k, k x p. The k-outer loop
/// order keeps the inner update over contiguous rows of B and C.
inline void gemm_accum_nn(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = ai[kk];
            const double* bk = b + kk * p;
            for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
        }
    }
}

/// C += A * B^T, A is m x k, B is p x k.
inline void gemm_accum_nt(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            ci[j] += acc;
        }
    }
}

/// C += A^T * B, A is k x m, B is k x p.
inline void gemm_accum_tn(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* ak = a + kk * m;
        const double* bk = b + kk * p;
        for (std::size_t i = 0; i < m; ++i) {
            const double aki = ak[i];
            double* ci = c + i * p;
            for (std::size_t j = 0; j < p; ++j) ci[j] += aki * bk[j];
        }
    }
}

}  // namespace dualtl
