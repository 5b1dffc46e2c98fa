#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cpf {

// Dense row-major f64 tensor. Value-like: copies are deep, safe to move
// across threads.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shp, double fill = 0.0);

    static Tensor scalar(double v);
    static Tensor from(std::vector<std::size_t> shp, std::vector<double> values);
    static Tensor zeros_like(const Tensor& t);

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }

    std::size_t rows() const;
    std::size_t cols() const;

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // 2-D access.
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;

    // 3-D access (e.g. conv weights [C_out x C_in x K]).
    double& at3(std::size_t i, std::size_t j, std::size_t k);
    double at3(std::size_t i, std::size_t j, std::size_t k) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;

    // Throws NumericError if any element is NaN/Inf.
    void check_finite(const std::string& what) const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

} // namespace cpf
