#include "cpf/tensor.hpp"

#include <cmath>
#include <sstream>

#include "cpf/errors.hpp"

namespace cpf {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shp, double fill)
    : shape(std::move(shp)), data(shape_numel(shape), fill) {
    for (std::size_t e : shape)
        if (e == 0) throw DimensionError("zero extent in shape " + shape_str());
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.shape = {1};
    t.data = {v};
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shp, std::vector<double> values) {
    if (shape_numel(shp) != values.size())
        throw DimensionError("value count does not match shape");
    Tensor t;
    t.shape = std::move(shp);
    t.data = std::move(values);
    return t;
}

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape); }

std::size_t Tensor::rows() const {
    if (ndim() != 2) throw DimensionError("rows() on non-2D tensor " + shape_str());
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (ndim() != 2) throw DimensionError("cols() on non-2D tensor " + shape_str());
    return shape[1];
}

double& Tensor::at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

double& Tensor::at3(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
}
double Tensor::at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void Tensor::check_finite(const std::string& what) const {
    for (double v : data)
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
}

} // namespace cpf
