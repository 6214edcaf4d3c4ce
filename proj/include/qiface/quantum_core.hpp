// Copyright 2026 The qiface Authors

// Licensed under the Apache License, Version 2.0 (the License);
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at

// http://www.apache.org/licenses/LICENSE-2.0

// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an AS IS BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

/**
 * @file quantum_core.hpp
 * Small dense linear algebra for one- and two-qubit states.
 *
 * Ordering convention used throughout the library:
 *  - two-qubit objects are (atom) x (photon), atom index slow;
 *  - S_1/2 qubit basis is (|-1/2>, |+1/2>), D_5/2 qubit basis is
 *    (|-5/2>, |+5/2>);
 *  - 393 nm photon basis is (L, R); 854 nm photon basis is (R, L).
 *
 * Polarization states in the 393 nm basis:
 *   H = (R + L)/sqrt2,  V = i(R - L)/sqrt2,  D = (H + V)/sqrt2,
 *   A = (H - V)/sqrt2.
 * With these, the Stokes operators are s1 = sigma_x, s2 = sigma_y and
 * s3 = -sigma_z in the (L, R) basis.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace qiface {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cplx kI{0.0, 1.0};

/// Raised for operands of the wrong dimension.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a pure state and a density operator are combined.
class KindMismatchError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {
inline void require_qubit_dim(Eigen::Index dim, const char *what) {
    if (dim != 2 && dim != 4) {
        throw DimensionError(std::string(what) + ": dimension must be 2 or 4, got " +
                             std::to_string(dim));
    }
}
} // namespace detail

/// Normalized state vector of one (dim 2) or two (dim 4) qubits.
class PureState {
  public:
    explicit PureState(CVector amplitudes) : amps_(std::move(amplitudes)) {
        detail::require_qubit_dim(amps_.size(), "PureState");
        normalize();
    }
    PureState(std::initializer_list<cplx> amplitudes)
        : PureState(CVector::Map(amplitudes.begin(), static_cast<Eigen::Index>(amplitudes.size()))) {}

    /// Computational basis vector |index>.
    static PureState basis(int dim, int index) {
        CVector v = CVector::Zero(dim);
        if (index < 0 || index >= dim) {
            throw DimensionError("PureState::basis: index out of range");
        }
        v(index) = 1.0;
        return PureState(std::move(v));
    }

    [[nodiscard]] int dim() const { return static_cast<int>(amps_.size()); }
    [[nodiscard]] const CVector &amplitudes() const { return amps_; }
    [[nodiscard]] cplx operator[](int i) const { return amps_(i); }
    [[nodiscard]] double norm() const { return amps_.norm(); }

    void normalize() {
        const double n = amps_.norm();
        if (n == 0.0) {
            throw std::domain_error("PureState: zero vector cannot be normalized");
        }
        amps_ /= n;
    }

    [[nodiscard]] CMatrix projector() const { return amps_ * amps_.adjoint(); }

  private:
    CVector amps_;
};

/// Density matrix of one or two qubits. Hermiticity is checked on
/// construction; positivity is not, see is_physical().
class DensityOperator {
  public:
    explicit DensityOperator(CMatrix m) : m_(std::move(m)) {
        if (m_.rows() != m_.cols()) {
            throw DimensionError("DensityOperator: matrix must be square");
        }
        detail::require_qubit_dim(m_.rows(), "DensityOperator");
        if ((m_ - m_.adjoint()).cwiseAbs().maxCoeff() > 1e-10) {
            throw std::invalid_argument("DensityOperator: matrix is not Hermitian");
        }
        m_ = 0.5 * (m_ + m_.adjoint()).eval();
    }
    explicit DensityOperator(const PureState &psi) : DensityOperator(psi.projector()) {}

    static DensityOperator maximally_mixed(int dim) {
        return DensityOperator(CMatrix::Identity(dim, dim) / static_cast<double>(dim));
    }

    [[nodiscard]] int dim() const { return static_cast<int>(m_.rows()); }
    [[nodiscard]] const CMatrix &matrix() const { return m_; }
    [[nodiscard]] cplx operator()(int r, int c) const { return m_(r, c); }
    [[nodiscard]] double trace() const { return m_.trace().real(); }

    [[nodiscard]] Eigen::VectorXd eigenvalues() const {
        return Eigen::SelfAdjointEigenSolver<CMatrix>(m_, Eigen::EigenvaluesOnly).eigenvalues();
    }
    [[nodiscard]] double min_eigenvalue() const { return eigenvalues().minCoeff(); }

    /// Unit trace within 1e-10 and no eigenvalue below -1e-9.
    [[nodiscard]] bool is_physical() const {
        return std::abs(trace() - 1.0) <= 1e-10 && min_eigenvalue() >= -1e-9;
    }

  private:
    CMatrix m_;
};

/// The single-qubit operator set {1, sigma_x, sigma_y, sigma_z}.
struct PauliBasis {
    static const std::array<Eigen::Matrix2cd, 4> &matrices() {
        static const std::array<Eigen::Matrix2cd, 4> ops = [] {
            std::array<Eigen::Matrix2cd, 4> m;
            m[0] << 1, 0, 0, 1;
            m[1] << 0, 1, 1, 0;
            m[2] << 0, -kI, kI, 0;
            m[3] << 1, 0, 0, -1;
            return m;
        }();
        return ops;
    }
    static const Eigen::Matrix2cd &get(int i) { return matrices().at(static_cast<std::size_t>(i)); }
};

// Tensor products (atom first, photon second).

inline PureState tensor_product(const PureState &a, const PureState &b) {
    if (a.dim() != 2 || b.dim() != 2) {
        throw DimensionError("tensor_product: operands must be single qubits");
    }
    CVector out(4);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            out(2 * i + j) = a[i] * b[j];
        }
    }
    return PureState(std::move(out));
}

inline CMatrix kron(const CMatrix &a, const CMatrix &b) {
    CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

inline DensityOperator tensor_product(const DensityOperator &a, const DensityOperator &b) {
    if (a.dim() != 2 || b.dim() != 2) {
        throw DimensionError("tensor_product: operands must be single qubits");
    }
    return DensityOperator(kron(a.matrix(), b.matrix()));
}

using QuantumObject = std::variant<PureState, DensityOperator>;

/// Runtime-typed overload: both operands must be of the same kind.
inline QuantumObject tensor_product(const QuantumObject &a, const QuantumObject &b) {
    if (a.index() != b.index()) {
        throw KindMismatchError("tensor_product: cannot combine a pure state with a density operator");
    }
    if (const auto *pa = std::get_if<PureState>(&a)) {
        return tensor_product(*pa, std::get<PureState>(b));
    }
    return tensor_product(std::get<DensityOperator>(a), std::get<DensityOperator>(b));
}

enum class Subsystem { Atom, Photon };

/// Traces out `traced` from a two-qubit state and returns the other qubit.
inline DensityOperator partial_trace(const DensityOperator &rho, Subsystem traced) {
    if (rho.dim() != 4) {
        throw DimensionError("partial_trace: expected a two-qubit operator");
    }
    CMatrix out = CMatrix::Zero(2, 2);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) {
            for (int k = 0; k < 2; ++k) {
                out(r, c) += traced == Subsystem::Photon ? rho(2 * r + k, 2 * c + k)
                                                         : rho(2 * k + r, 2 * k + c);
            }
        }
    }
    return DensityOperator(std::move(out));
}

/// <target| rho |target>.
inline double fidelity_to_pure(const DensityOperator &rho, const PureState &target) {
    if (rho.dim() != target.dim()) {
        throw DimensionError("fidelity_to_pure: dimension mismatch");
    }
    const cplx f = target.amplitudes().dot(rho.matrix() * target.amplitudes());
    if (std::abs(f.imag()) > 1e-12) {
        throw std::domain_error("fidelity_to_pure: complex overlap; operator is not Hermitian");
    }
    return std::clamp(f.real(), 0.0, 1.0);
}

struct StokesVector {
    double s1 = 0.0; // H/V
    double s2 = 0.0; // D/A
    double s3 = 0.0; // R/L
    [[nodiscard]] double norm() const { return std::sqrt(s1 * s1 + s2 * s2 + s3 * s3); }
};

inline StokesVector poincare_components(const DensityOperator &rho) {
    if (rho.dim() != 2) {
        throw DimensionError("poincare_components: expected a single qubit");
    }
    const auto &m = rho.matrix();
    // (L, R) ordering: s1 = <sigma_x>, s2 = <sigma_y>, s3 = -<sigma_z>.
    return {2.0 * m(1, 0).real(), 2.0 * m(1, 0).imag(), (m(1, 1) - m(0, 0)).real()};
}

/// Half the trace norm of the difference.
inline double trace_distance(const CMatrix &a, const CMatrix &b) {
    const CMatrix d = a - b;
    const CMatrix h = 0.5 * (d + d.adjoint());
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

inline double trace_distance(const DensityOperator &a, const DensityOperator &b) {
    return trace_distance(a.matrix(), b.matrix());
}

/// Clips negative eigenvalues of a Hermitian matrix and renormalizes the
/// trace to one.
inline DensityOperator physicalize(const CMatrix &m) {
    const CMatrix h = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    if (ev.sum() <= 0.0) {
        return DensityOperator::maximally_mixed(static_cast<int>(m.rows()));
    }
    ev /= ev.sum();
    const CMatrix &v = es.eigenvectors();
    return DensityOperator(v * ev.cast<cplx>().asDiagonal() * v.adjoint());
}

/// Orthonormal (Frobenius) Hermitian basis of d x d matrices:
/// E_jj, (E_jk + E_kj)/sqrt2, i(E_jk - E_kj)/sqrt2 for j < k.
inline std::vector<CMatrix> hermitian_basis(int dim) {
    std::vector<CMatrix> out;
    out.reserve(static_cast<std::size_t>(dim * dim));
    const double r = 1.0 / std::sqrt(2.0);
    for (int j = 0; j < dim; ++j) {
        CMatrix e = CMatrix::Zero(dim, dim);
        e(j, j) = 1.0;
        out.push_back(e);
    }
    for (int j = 0; j < dim; ++j) {
        for (int k = j + 1; k < dim; ++k) {
            CMatrix s = CMatrix::Zero(dim, dim);
            s(j, k) = r;
            s(k, j) = r;
            out.push_back(s);
            CMatrix a = CMatrix::Zero(dim, dim);
            a(j, k) = -kI * r;
            a(k, j) = kI * r;
            out.push_back(a);
        }
    }
    return out;
}

} // namespace qiface
