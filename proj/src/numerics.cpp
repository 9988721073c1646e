#include "tgtn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tgtn/error.hpp"

namespace tgtn {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw Error("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const { return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")"; }

Matrix& Matrix::operator+=(const Matrix& other) {
    if (rows_ != other.rows_ || cols_ != other.cols_)
        throw Error("Matrix +=: shape mismatch " + shape_string() + " vs " + other.shape_string());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw Error("matmul: shape mismatch " + a.shape_string() + " x " + b.shape_string());
    Matrix c(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out = c.data() + i * n;
        const double* arow = a.data() + i * a.cols();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double s = arow[k];
            if (s == 0.0) continue;  // one-hot inputs are mostly zero
            const double* brow = b.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) out[j] += s * brow[j];
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw Error("matmul_tn: shape mismatch " + a.shape_string() + "^T x " + b.shape_string());
    Matrix c(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* arow = a.data() + k * a.cols();
        const double* brow = b.data() + k * n;
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double s = arow[i];
            if (s == 0.0) continue;
            double* out = c.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) out[j] += s * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw Error("matmul_nt: shape mismatch " + a.shape_string() + " x " + b.shape_string() + "^T");
    // Same per-element summation order as a dot product over k.
    return matmul(a, transpose(b));
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

void masked_softmax(std::span<const double> scores, std::span<const std::uint8_t> mask, std::span<double> out) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (mask[j]) {
            mx = std::max(mx, scores[j]);
            any = true;
        }
    if (!any) throw Error("masked_softmax: every entry of the row is masked");
    double total = 0.0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        out[j] = mask[j] ? std::exp(scores[j] - mx) : 0.0;
        total += out[j];
    }
    for (std::size_t j = 0; j < scores.size(); ++j) out[j] /= total;
}

void softmax_inplace(std::span<double> values) {
    if (values.empty()) throw Error("softmax: empty row");
    const double mx = *std::max_element(values.begin(), values.end());
    double total = 0.0;
    for (auto& v : values) {
        v = std::exp(v - mx);
        total += v;
    }
    for (auto& v : values) v /= total;
}

Matrix masked_softmax_rows(const Matrix& scores, const BoolMatrix& mask) {
    if (mask.rows != scores.rows() || mask.cols != scores.cols())
        throw Error("masked_softmax_rows: mask shape does not match scores " + scores.shape_string());
    Matrix out(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        try {
            masked_softmax(scores.row(i), {mask.values.data() + i * mask.cols, mask.cols}, out.row(i));
        } catch (const Error&) {
            throw Error("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
        }
    }
    return out;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta, double eps) {
    if (gamma.size() != x.size() || beta.size() != x.size())
        throw Error("layer_norm: length mismatch (x " + std::to_string(x.size()) + ", gamma " +
                    std::to_string(gamma.size()) + ", beta " + std::to_string(beta.size()) + ")");
    if (!(eps > 0.0)) throw Error("layer_norm: eps must be > 0");
    const auto n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
    return y;
}

Matrix layer_norm_rows(const Matrix& x, std::span<const double> gamma, std::span<const double> beta, double eps,
                       LayerNormCache* cache) {
    const std::size_t d = x.cols();
    if (gamma.size() != d || beta.size() != d) throw Error("layer_norm_rows: length mismatch");
    Matrix y(x.rows(), d);
    if (cache) {
        cache->normalized = Matrix(x.rows(), d);
        cache->inv_std.assign(x.rows(), 0.0);
    }
    const auto n = static_cast<double>(d);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        auto out = y.row(r);
        for (std::size_t i = 0; i < d; ++i) {
            const double xhat = (row[i] - mean) * inv;
            out[i] = xhat * gamma[i] + beta[i];
            if (cache) cache->normalized(r, i) = xhat;
        }
        if (cache) cache->inv_std[r] = inv;
    }
    return y;
}

Matrix layer_norm_rows_backward(const Matrix& dy, std::span<const double> gamma, const LayerNormCache& cache,
                                std::span<double> dgamma, std::span<double> dbeta) {
    const std::size_t d = dy.cols();
    const auto n = static_cast<double>(d);
    Matrix dx(dy.rows(), d);
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        const auto g = dy.row(r);
        const auto xhat = cache.normalized.row(r);
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dgamma[i] += g[i] * xhat[i];
            dbeta[i] += g[i];
            dxhat[i] = g[i] * gamma[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat[i];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        auto out = dx.row(r);
        for (std::size_t i = 0; i < d; ++i)
            out[i] = cache.inv_std[r] * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
    return dx;
}

double weighted_bce(std::span<const double> p, std::span<const double> y, double pos_weight) {
    if (p.size() != y.size())
        throw Error("weighted_bce: length mismatch (" + std::to_string(p.size()) + " vs " + std::to_string(y.size()) + ")");
    if (p.empty()) throw Error("weighted_bce: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
        total -= pos_weight * y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    }
    return total / static_cast<double>(p.size());
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::size_t ParamStore::add(std::string name, Matrix value) {
    Param p;
    p.name = std::move(name);
    p.grad = Matrix(value.rows(), value.cols());
    p.m = Matrix(value.rows(), value.cols());
    p.v = Matrix(value.rows(), value.cols());
    p.value = std::move(value);
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

std::size_t ParamStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw Error("no parameter named '" + name + "'");
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void adam_step(ParamStore& store, const AdamConfig& cfg, std::int64_t t) {
    if (t < 1) throw Error("adam_step: step index must be >= 1");
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& p : store) {
        auto& w = p.value.values();
        auto& g = p.grad.values();
        auto& m = p.m.values();
        auto& v = p.v.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
            g[i] = 0.0;
        }
    }
}

std::vector<Matrix> finite_diff_gradient(const std::function<double(const ParamStore&)>& f, ParamStore& store,
                                         double h) {
    std::vector<Matrix> grads;
    grads.reserve(store.size());
    for (auto& p : store) {
        Matrix g(p.value.rows(), p.value.cols());
        auto& w = p.value.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w[i];
            w[i] = saved + h;
            const double up = f(store);
            w[i] = saved - h;
            const double down = f(store);
            w[i] = saved;
            g.values()[i] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

}  // namespace tgtn
