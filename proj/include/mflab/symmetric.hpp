#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>

#include "mflab/matrix.hpp"

namespace mflab {

/// Symmetric d x d matrix. Full storage, but the two triangles are kept
/// bit-identical by construction: every mutation writes both entries.
class SymMatrix {
public:
    SymMatrix() = default;

    explicit SymMatrix(std::size_t dim, double fill = 0.0) : m_(dim, dim, fill) {}

    static SymMatrix identity(std::size_t dim) { return SymMatrix(Matrix::identity(dim)); }

    static SymMatrix diagonal(const Vector& d) {
        SymMatrix s(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) s.m_(i, i) = d[i];
        return s;
    }

    /// Mirror the upper triangle of a square matrix.
    static SymMatrix from_upper(const Matrix& m) {
        require_square(m);
        SymMatrix s(m.rows());
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = i; j < m.cols(); ++j) {
                s.m_(i, j) = m(i, j);
                s.m_(j, i) = m(i, j);
            }
        return s;
    }

    /// (m + m^T)/2 with exact triangle mirroring; absorbs round-off asymmetry.
    static SymMatrix symmetrized(const Matrix& m) {
        require_square(m);
        SymMatrix s(m.rows());
        for (std::size_t i = 0; i < m.rows(); ++i) {
            s.m_(i, i) = m(i, i);
            for (std::size_t j = i + 1; j < m.cols(); ++j) {
                const double v = 0.5 * (m(i, j) + m(j, i));
                s.m_(i, j) = v;
                s.m_(j, i) = v;
            }
        }
        return s;
    }

    std::size_t dim() const { return m_.rows(); }
    bool empty() const { return m_.empty(); }

    double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }

    void set(std::size_t i, std::size_t j, double v) {
        m_(i, j) = v;
        m_(j, i) = v;
    }

    const Matrix& mat() const { return m_; }

    double trace() const {
        double s = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) s += m_(i, i);
        return s;
    }

    SymMatrix& operator+=(const SymMatrix& o) { m_ += o.m_; return *this; }
    SymMatrix& operator-=(const SymMatrix& o) { m_ -= o.m_; return *this; }
    SymMatrix& operator*=(double c) { m_ *= c; return *this; }

    friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
    friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
    friend SymMatrix operator*(SymMatrix a, double c) { return a *= c; }
    friend SymMatrix operator*(double c, SymMatrix a) { return a *= c; }
    friend Vector operator*(const SymMatrix& a, const Vector& x) { return a.m_ * x; }

private:
    explicit SymMatrix(Matrix m) : m_(std::move(m)) {}

    static void require_square(const Matrix& m) {
        if (m.rows() != m.cols()) throw ValidationError("SymMatrix: matrix not square");
    }

    Matrix m_;
};

// ---- norms ------------------------------------------------------------------

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return std::sqrt(s);
}

inline double frobenius_norm(const SymMatrix& m) { return frobenius_norm(m.mat()); }

// ---- eigendecomposition (cyclic Jacobi) --------------------------------------

struct SymEigen {
    Vector values;    // ascending
    Matrix vectors;   // orthogonal; column k pairs with values[k]
};

/// Cyclic Jacobi rotations on the full symmetric storage. Deterministic and
/// accurate to near machine precision for the dimensions used here (d <= 50).
/// Throws NumericalError if 100 sweeps do not reach convergence.
inline SymEigen sym_eigen(const SymMatrix& m) {
    const std::size_t n = m.dim();
    if (n == 0) throw ValidationError("sym_eigen: empty matrix");

    Matrix a = m.mat();
    Matrix v = Matrix::identity(n);

    double scale = frobenius_norm(a);
    if (scale == 0.0) scale = 1.0;

    const int max_sweeps = 100;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-15 * scale) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                // Classical rotation choice; the smaller-angle root keeps the
                // iteration stable (Golub & Van Loan, sec. 8.4).
                const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                              : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                const double app = a(p, p), aqq = a(q, q);
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(p, k) = a(k, p);
                    a(k, q) = s * akp + c * akq;
                    a(q, k) = a(k, q);
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged) {
        // one last check: the sweep loop may have exited right at the cap
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
        if (std::sqrt(off) > 1e-15 * scale)
            throw NumericalError("sym_eigen: Jacobi iteration did not converge in 100 sweeps");
    }

    SymEigen e;
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.values[i] = a(i, i);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return e.values[x] < e.values[y]; });

    Vector sorted(n);
    Matrix vs(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        sorted[k] = e.values[order[k]];
        for (std::size_t i = 0; i < n; ++i) vs(i, k) = v(i, order[k]);
    }
    e.values = std::move(sorted);
    e.vectors = std::move(vs);
    return e;
}

/// Spectral norm of a symmetric matrix: max |eigenvalue|.
inline double op_norm2(const SymMatrix& m) {
    const SymEigen e = sym_eigen(m);
    return std::max(std::fabs(e.values.front()), std::fabs(e.values.back()));
}

/// Largest singular value of a general rectangular matrix, via the top
/// eigenvalue of A^T A.
inline double op_norm2(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) return 0.0;
    const SymMatrix ata = SymMatrix::symmetrized(m.transposed() * m);
    const SymEigen e = sym_eigen(ata);
    return std::sqrt(std::max(0.0, e.values.back()));
}

// ---- definiteness -------------------------------------------------------------

struct SpdCheck {
    double min_eigenvalue = 0.0;
    bool is_spd = false;
    double tolerance = 0.0;
};

/// is_spd accepts eigenvalues down to -tol * max(1, spectral radius), so
/// covariances contaminated by round-off at the 1e-10 scale still validate.
inline SpdCheck check_spd(const SymMatrix& m, double tol = 1e-10) {
    const SymEigen e = sym_eigen(m);
    const double radius = std::max(std::fabs(e.values.front()), std::fabs(e.values.back()));
    SpdCheck c;
    c.min_eigenvalue = e.values.front();
    c.tolerance = tol;
    c.is_spd = c.min_eigenvalue > -tol * std::max(1.0, radius);
    return c;
}

// ---- square root ---------------------------------------------------------------

/// PSD square root via eigendecomposition. Eigenvalues within
/// -1e-10*||m||_2 of zero are clamped to zero; anything below that is an
/// error. Clamping matters for covariances that decay toward zero.
inline SymMatrix sym_sqrt(const SymMatrix& m) {
    const SymEigen e = sym_eigen(m);
    const std::size_t n = m.dim();
    const double nrm = std::max(std::fabs(e.values.front()), std::fabs(e.values.back()));
    const double clamp = 1e-10 * nrm;
    Vector roots(n);
    for (std::size_t i = 0; i < n; ++i) {
        double lam = e.values[i];
        if (lam < -clamp)
            throw NumericalError("sym_sqrt: matrix is not positive semidefinite");
        if (lam < 0.0) lam = 0.0;
        roots[i] = std::sqrt(lam);
    }
    Matrix scaled(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) scaled(i, k) = e.vectors(i, k) * roots[k];
    return SymMatrix::symmetrized(scaled * e.vectors.transposed());
}

// ---- SPD inverse (Cholesky) -----------------------------------------------------

/// Lower Cholesky factor of an SPD matrix. Pivot failure signals a matrix
/// that is singular or indefinite.
inline Matrix cholesky_lower(const SymMatrix& m) {
    const std::size_t n = m.dim();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0)
                    throw NumericalError("cholesky: matrix is singular or not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

inline Vector cholesky_solve(const Matrix& l, const Vector& b) {
    const std::size_t n = l.rows();
    Vector x(b);
    for (std::size_t i = 0; i < n; ++i) {
        double s = x[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
        x[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

inline SymMatrix sym_inv(const SymMatrix& m) {
    const std::size_t n = m.dim();
    const Matrix l = cholesky_lower(m);
    Matrix inv(n, n);
    Vector e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        const Vector col = cholesky_solve(l, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
        e[j] = 0.0;
    }
    return SymMatrix::symmetrized(inv);
}

/// x^T m x as a quadratic form.
inline double quadratic_form(const SymMatrix& m, const Vector& x) { return dot(x, m * x); }

}  // namespace mflab
