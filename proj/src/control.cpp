#include "blockflow/control.hpp"

#include <algorithm>
#include <cmath>

#include "blockflow/errors.hpp"

namespace blockflow::control {

using la::Matrix;

void StateSpace::checkDimensions() const {
    const int n = a.rows();
    if (a.cols() != n) throw UnsupportedShape("A must be square");
    if (b.rows() != n) throw UnsupportedShape("B row count must match A");
    if (c.cols() != n) throw UnsupportedShape("C column count must match A");
    if (d.rows() != c.rows() || d.cols() != b.cols())
        throw UnsupportedShape("D must be outputs x inputs");
}

Matrix expm(const Matrix& a) {
    const int n = a.rows();
    if (a.cols() != n) throw UnsupportedShape("expm expects a square matrix");

    // Scale so the Pade(6) approximant is well inside its accuracy region.
    double norm = a.normInf();
    int squarings = 0;
    Matrix scaled = a;
    if (norm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
        scaled = a * std::pow(2.0, -squarings);
    }

    // Pade(6): c_{k+1} = c_k (p - k) / ((2p - k)(k + 1)), p = 6.
    double coeff[7];
    coeff[0] = 1.0;
    for (int k = 0; k < 6; ++k)
        coeff[k + 1] = coeff[k] * (6.0 - k) / ((12.0 - k) * (k + 1.0));

    Matrix power = Matrix::identity(n);
    Matrix numer = Matrix::identity(n);  // sum c_k A^k
    Matrix denom = Matrix::identity(n);  // sum (-1)^k c_k A^k
    for (int k = 1; k <= 6; ++k) {
        power = power * scaled;
        numer += power * coeff[k];
        denom += power * (k % 2 == 0 ? coeff[k] : -coeff[k]);
    }

    // Solve denom * X = numer column by column.
    Matrix result(n, n);
    for (int col = 0; col < n; ++col) {
        std::vector<double> rhs(n);
        for (int r = 0; r < n; ++r) rhs[r] = numer(r, col);
        std::vector<double> x = la::solveLinear(denom, std::move(rhs));
        for (int r = 0; r < n; ++r) result(r, col) = x[r];
    }
    for (int s = 0; s < squarings; ++s) result = result * result;
    return result;
}

StateSpace c2dZOH(const StateSpace& sys, double T) {
    sys.checkDimensions();
    if (!sys.continuous()) throw UnsupportedShape("c2dZOH expects a continuous-time system");
    if (T <= 0) throw UnsupportedShape("c2dZOH expects T > 0");
    const int n = sys.states();
    const int m = sys.inputs();

    // exp([[A, B], [0, 0]] T) = [[A_d, B_d], [0, I]].
    Matrix aug(n + m, n + m);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) aug(r, c) = sys.a(r, c) * T;
        for (int c = 0; c < m; ++c) aug(r, n + c) = sys.b(r, c) * T;
    }
    Matrix e = expm(aug);

    StateSpace out = sys;
    out.a = Matrix(n, n);
    out.b = Matrix(n, m);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) out.a(r, c) = e(r, c);
        for (int c = 0; c < m; ++c) out.b(r, c) = e(r, n + c);
    }
    out.sampleTime = T;
    return out;
}

StateSpace c2dTustin(const StateSpace& sys, double T) {
    sys.checkDimensions();
    if (!sys.continuous())
        throw UnsupportedShape("c2dTustin expects a continuous-time system");
    if (T <= 0) throw UnsupportedShape("c2dTustin expects T > 0");
    const int n = sys.states();

    Matrix lhs = Matrix::identity(n) - sys.a * (T / 2.0);  // I - A T/2
    Matrix inv;
    try {
        inv = la::inverse(lhs);
    } catch (const SingularJacobian&) {
        throw DiscretizationSingularity("(I - A T/2) is singular at T = " +
                                        std::to_string(T));
    }

    StateSpace out = sys;
    out.a = inv * (Matrix::identity(n) + sys.a * (T / 2.0));
    out.b = inv * sys.b * T;
    out.c = sys.c * inv;
    out.d = sys.d + sys.c * inv * sys.b * (T / 2.0);
    out.sampleTime = T;
    return out;
}

DlqrResult dlqr(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r) {
    const int n = a.rows();
    const int m = b.cols();
    if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != m ||
        r.cols() != m)
        throw UnsupportedShape("dlqr dimension mismatch");

    auto requireSymmetric = [](const Matrix& s, const char* label) {
        Matrix diff = s - s.transpose();
        if (diff.maxAbs() > 1e-9 * std::max(1.0, s.maxAbs()))
            throw UnsupportedShape(std::string(label) + " must be symmetric");
    };
    requireSymmetric(q, "Q");
    requireSymmetric(r, "R");

    const double tol = 1e-12;
    const int maxIterations = 10000;
    Matrix p = q;
    for (int it = 1; it <= maxIterations; ++it) {
        Matrix bt = b.transpose();
        Matrix at = a.transpose();
        Matrix gram = r + bt * p * b;  // R + B'PB
        Matrix gain;                   // (R + B'PB)^-1 B'PA
        try {
            gain = la::inverse(gram) * (bt * p * a);
        } catch (const SingularJacobian&) {
            throw RiccatiNoConvergence("R + B'PB became singular during iteration");
        }
        Matrix next = at * p * a - at * p * b * gain + q;
        double delta = (next - p).maxAbs();
        p = next;
        if (!std::isfinite(p.maxAbs()))
            throw RiccatiNoConvergence("DARE iteration diverged (unstabilizable pair?)");
        if (delta <= tol) {
            DlqrResult result;
            result.p = p;
            result.k = la::inverse(r + bt * p * b) * (bt * p * a);
            result.iterations = it;
            return result;
        }
    }
    throw RiccatiNoConvergence("DARE fixed-point iteration did not converge in 10000 steps");
}

namespace {

std::vector<double> trimLeadingZeros(std::vector<double> poly) {
    size_t i = 0;
    while (i + 1 < poly.size() && poly[i] == 0.0) ++i;
    return {poly.begin() + i, poly.end()};
}

}  // namespace

TransferFunction ss2tf(const StateSpace& sys) {
    sys.checkDimensions();
    if (sys.inputs() != 1 || sys.outputs() != 1)
        throw UnsupportedShape("ss2tf supports SISO systems only");
    const int n = sys.states();

    // Leverrier-Faddeev: denominator coefficients and the adjugate powers.
    //   M_0 = I, a_k = -tr(A M_{k-1}) / k, M_k = A M_{k-1} + a_k I
    //   adj(sI - A) = sum_k M_k s^{n-1-k}
    std::vector<double> den(n + 1);
    den[0] = 1.0;
    std::vector<double> cmb(n, 0.0);  // C * M_k * B per power
    Matrix mk = Matrix::identity(n);
    for (int k = 1; k <= n; ++k) {
        Matrix cm = sys.c * mk * sys.b;
        cmb[k - 1] = cm(0, 0);
        Matrix am = sys.a * mk;
        double trace = 0.0;
        for (int i = 0; i < n; ++i) trace += am(i, i);
        den[k] = -trace / k;
        mk = am + Matrix::identity(n) * den[k];
    }

    TransferFunction tf;
    tf.sampleTime = sys.sampleTime;
    tf.denominator = den;
    tf.numerator.assign(n + 1, 0.0);
    double d0 = sys.d(0, 0);
    for (int k = 0; k <= n; ++k) tf.numerator[k] = d0 * den[k];
    for (int k = 0; k < n; ++k) tf.numerator[k + 1] += cmb[k];
    tf.numerator = trimLeadingZeros(tf.numerator);
    return tf;
}

StateSpace tf2ss(const TransferFunction& tf) {
    std::vector<double> num = trimLeadingZeros(tf.numerator);
    std::vector<double> den = trimLeadingZeros(tf.denominator);
    if (den.empty() || den[0] == 0.0)
        throw ImproperTransferFunction("denominator leading coefficient must be nonzero");
    if (num.size() > den.size())
        throw ImproperTransferFunction("transfer function must be proper (deg num <= deg den)");

    // Monic denominator.
    const double lead = den[0];
    for (double& v : den) v /= lead;
    for (double& v : num) v /= lead;

    const int n = static_cast<int>(den.size()) - 1;
    StateSpace sys;
    sys.sampleTime = tf.sampleTime;
    if (n == 0) {
        sys.a = Matrix(0, 0);
        sys.b = Matrix(0, 1);
        sys.c = Matrix(1, 0);
        sys.d = Matrix(1, 1, {num.empty() ? 0.0 : num[0]});
        return sys;
    }

    // Pad the numerator to full length, split off the direct feedthrough,
    // and keep the strictly proper remainder r(s) = num(s) - D den(s).
    std::vector<double> fullNum(n + 1, 0.0);
    std::copy(num.begin(), num.end(), fullNum.end() - num.size());
    double dterm = fullNum[0];
    std::vector<double> rem(n);
    for (int i = 0; i < n; ++i) rem[i] = fullNum[i + 1] - dterm * den[i + 1];

    // Controllable canonical form.
    sys.a = Matrix(n, n);
    for (int i = 0; i + 1 < n; ++i) sys.a(i, i + 1) = 1.0;
    for (int j = 0; j < n; ++j) sys.a(n - 1, j) = -den[n - j];
    sys.b = Matrix(n, 1);
    sys.b(n - 1, 0) = 1.0;
    sys.c = Matrix(1, n);
    for (int j = 0; j < n; ++j) sys.c(0, j) = rem[n - 1 - j];
    sys.d = Matrix(1, 1, {dterm});
    return sys;
}

}  // namespace blockflow::control
