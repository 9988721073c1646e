#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tgtn {

/// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    bool all_finite() const;
    std::string shape_string() const;

    Matrix& operator+=(const Matrix& other);

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Boolean matrix used as an attention mask.
struct BoolMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> values;

    BoolMatrix(std::size_t r, std::size_t c, bool fill = false) : rows(r), cols(c), values(r * c, fill ? 1 : 0) {}
    bool operator()(std::size_t r, std::size_t c) const { return values[r * cols + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { values[r * cols + c] = v ? 1 : 0; }
};

// Products. Each output element accumulates over the inner index in
// ascending order, so results are bit-reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);     // A B
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // A^T B
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // A B^T
Matrix transpose(const Matrix& a);

/// Softmax over the entries of `scores` where mask is nonzero, written to
/// `out`; masked entries become exactly 0. Throws Error if every entry is masked.
void masked_softmax(std::span<const double> scores, std::span<const std::uint8_t> mask, std::span<double> out);

/// Plain softmax over all entries, in place.
void softmax_inplace(std::span<double> values);

Matrix masked_softmax_rows(const Matrix& scores, const BoolMatrix& mask);

/// Population-variance layer normalization of one vector.
std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta, double eps);

/// Row-wise layer norm with the intermediates needed for the backward pass.
struct LayerNormCache {
    Matrix normalized;              // (x - mean) / sqrt(var + eps)
    std::vector<double> inv_std;    // per row
};
Matrix layer_norm_rows(const Matrix& x, std::span<const double> gamma, std::span<const double> beta, double eps,
                       LayerNormCache* cache = nullptr);
/// Returns dL/dx; accumulates dL/dgamma and dL/dbeta.
Matrix layer_norm_rows_backward(const Matrix& dy, std::span<const double> gamma, const LayerNormCache& cache,
                                std::span<double> dgamma, std::span<double> dbeta);

inline constexpr double kBceClamp = 1e-7;

/// mean_i -[pos_weight * y_i * ln p_i + (1 - y_i) * ln(1 - p_i)], with p
/// clamped into [1e-7, 1 - 1e-7].
double weighted_bce(std::span<const double> p, std::span<const double> y, double pos_weight);

double sigmoid(double z);

struct Param {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m;  // first moment
    Matrix v;  // second moment
};

/// Named parameter tensors with gradient and optimizer-state slots of the
/// same shape.
class ParamStore {
public:
    std::size_t add(std::string name, Matrix value);

    std::size_t size() const { return params_.size(); }
    Param& operator[](std::size_t i) { return params_[i]; }
    const Param& operator[](std::size_t i) const { return params_[i]; }
    std::size_t index_of(const std::string& name) const;  // throws Error
    Param& get(const std::string& name) { return params_[index_of(name)]; }
    const Param& get(const std::string& name) const { return params_[index_of(name)]; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();
    std::size_t parameter_count() const;

private:
    std::vector<Param> params_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update for step t (t >= 1); zeroes gradients afterwards.
void adam_step(ParamStore& store, const AdamConfig& cfg, std::int64_t t);

/// Central differences (f(theta + h e) - f(theta - h e)) / 2h for every
/// coordinate of every parameter. f must be deterministic; parameters are
/// restored exactly after each probe.
std::vector<Matrix> finite_diff_gradient(const std::function<double(const ParamStore&)>& f, ParamStore& store,
                                         double h);

}  // namespace tgtn
