#include "blockflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "blockflow/errors.hpp"
#include "blockflow/util.hpp"

namespace blockflow::la {

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("negative matrix dimension");
}

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != static_cast<size_t>(rows) * cols)
        throw std::invalid_argument("matrix data size does not match dimensions");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = static_cast<int>(rows.size());
    cols_ = rows_ > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    data_.reserve(static_cast<size_t>(rows_) * cols_);
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != cols_)
            throw std::invalid_argument("ragged matrix initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::columnVector(const std::vector<double>& v) {
    return Matrix(static_cast<int>(v.size()), 1, v);
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (int r = 0; r < rows_; ++r)
        for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix Matrix::operator+(const Matrix& o) const {
    Matrix r = *this;
    r += o;
    return r;
}

Matrix Matrix::operator-(const Matrix& o) const {
    Matrix r = *this;
    r -= o;
    return r;
}

Matrix& Matrix::operator+=(const Matrix& o) {
    if (!sameShape(o)) throw std::invalid_argument("matrix shape mismatch in +");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    if (!sameShape(o)) throw std::invalid_argument("matrix shape mismatch in -");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix Matrix::operator*(const Matrix& o) const {
    if (cols_ != o.rows_) throw std::invalid_argument("matrix shape mismatch in *");
    Matrix r(rows_, o.cols_);
    for (int i = 0; i < rows_; ++i) {
        for (int k = 0; k < cols_; ++k) {
            double aik = (*this)(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < o.cols_; ++j) r(i, j) += aik * o(k, j);
        }
    }
    return r;
}

Matrix Matrix::operator*(double s) const {
    Matrix r = *this;
    for (double& v : r.data_) v *= s;
    return r;
}

bool Matrix::operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
}

double Matrix::normInf() const {
    double best = 0.0;
    for (int r = 0; r < rows_; ++r) {
        double sum = 0.0;
        for (int c = 0; c < cols_; ++c) sum += std::abs((*this)(r, c));
        best = std::max(best, sum);
    }
    return best;
}

double Matrix::maxAbs() const {
    double best = 0.0;
    for (double v : data_) best = std::max(best, std::abs(v));
    return best;
}

std::string Matrix::toString() const {
    std::ostringstream os;
    for (int r = 0; r < rows_; ++r) {
        os << "  ";
        for (int c = 0; c < cols_; ++c) {
            if (c) os << ' ';
            os << util::fmtDouble((*this)(r, c));
        }
        os << '\n';
    }
    return os.str();
}

std::vector<double> solveLinear(Matrix a, std::vector<double> b) {
    const int n = a.rows();
    if (a.cols() != n || static_cast<int>(b.size()) != n)
        throw std::invalid_argument("solveLinear expects a square system");

    // Row scales for the relative pivot test.
    std::vector<double> scale(n, 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) scale[r] = std::max(scale[r], std::abs(a(r, c)));

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);

    for (int k = 0; k < n; ++k) {
        // Pick the row with the largest scaled pivot; lowest row wins ties.
        int best = -1;
        double bestMag = -1.0;
        for (int r = k; r < n; ++r) {
            int pr = perm[r];
            if (scale[pr] == 0.0) continue;
            double mag = std::abs(a(pr, k)) / scale[pr];
            if (mag > bestMag) {
                bestMag = mag;
                best = r;
            }
        }
        if (best < 0) throw SingularJacobian("zero row in linear system");
        std::swap(perm[k], perm[best]);
        int pk = perm[k];
        if (std::abs(a(pk, k)) <= 1e-12 * scale[pk])
            throw SingularJacobian("pivot below 1e-12 of row scale at column " +
                                   std::to_string(k));
        for (int r = k + 1; r < n; ++r) {
            int pr = perm[r];
            double m = a(pr, k) / a(pk, k);
            if (m == 0.0) continue;
            a(pr, k) = 0.0;
            for (int c = k + 1; c < n; ++c) a(pr, c) -= m * a(pk, c);
            b[pr] -= m * b[pk];
        }
    }

    std::vector<double> x(n);
    for (int k = n - 1; k >= 0; --k) {
        int pk = perm[k];
        double acc = b[pk];
        for (int c = k + 1; c < n; ++c) acc -= a(pk, c) * x[c];
        x[k] = acc / a(pk, k);
    }
    return x;
}

Matrix inverse(const Matrix& a) {
    const int n = a.rows();
    if (a.cols() != n) throw std::invalid_argument("inverse expects a square matrix");
    Matrix inv(n, n);
    for (int col = 0; col < n; ++col) {
        std::vector<double> e(n, 0.0);
        e[col] = 1.0;
        std::vector<double> x = solveLinear(a, std::move(e));
        for (int r = 0; r < n; ++r) inv(r, col) = x[r];
    }
    return inv;
}

double spectralRadiusEstimate(const Matrix& a, int iterations) {
    const int n = a.rows();
    if (n == 0) return 0.0;
    // Deterministic start vector with all modes excited.
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = 1.0 + 0.37 * i;
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
        std::vector<double> w(n, 0.0);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) w[r] += a(r, c) * v[c];
        double norm = 0.0;
        for (double x : w) norm = std::max(norm, std::abs(x));
        if (norm == 0.0) return 0.0;
        lambda = norm;
        for (double& x : w) x /= norm;
        v = std::move(w);
    }
    return lambda;
}

}  // namespace blockflow::la
