#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace blockflow::la {

/// Dense row-major matrix of doubles. Small and dependency-free; the engine
/// only ever deals with desk-scale systems (loop clusters, LTI models), so
/// there is no point in reaching for a BLAS here.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0);
    Matrix(int rows, int cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(int n);
    static Matrix columnVector(const std::vector<double>& v);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    Matrix transpose() const;
    Matrix operator+(const Matrix& o) const;
    Matrix operator-(const Matrix& o) const;
    Matrix operator*(const Matrix& o) const;
    Matrix operator*(double s) const;
    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);

    bool sameShape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool operator==(const Matrix& o) const;

    /// Max absolute row sum.
    double normInf() const;
    /// Largest absolute entry.
    double maxAbs() const;

    std::string toString() const;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

/// Solves A x = b by Gaussian elimination with scaled partial pivoting.
/// Throws SingularJacobian when the best available pivot falls below
/// 1e-12 of its row's scale (or the row is identically zero).
std::vector<double> solveLinear(Matrix a, std::vector<double> b);

/// Inverse via solveLinear against the identity. Throws on singular input.
Matrix inverse(const Matrix& a);

/// Power-iteration estimate of the spectral radius. Good enough as a
/// stability check for the small closed-loop matrices in the tests.
double spectralRadiusEstimate(const Matrix& a, int iterations = 200);

}  // namespace blockflow::la
