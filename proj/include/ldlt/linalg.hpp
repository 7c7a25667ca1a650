#pragma once

#include <cstdint>
#include <map>
#include <utility>

#include "ldlt/matrix.hpp"

namespace ldlt {

/// Pivot floor for Cholesky factorizations. No automatic jitter: parameterized
/// inputs are positive definite by construction, so a failed pivot is a bug
/// signal, not something to paper over.
inline constexpr double kPdFloor = 1e-12;

/// Library-level seed; every randomized kernel derives its stream from it.
inline constexpr std::uint64_t kLibrarySeed = 0x1d17c0de;

struct NotPositiveDefinite : std::runtime_error {
    explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

struct SingularPivotBlock : std::runtime_error {
    int block; // 1-based
    explicit SingularPivotBlock(int b)
        : std::runtime_error("singular pivot block " + std::to_string(b)), block(b) {}
};

struct ConvergenceFailure : std::runtime_error {
    explicit ConvergenceFailure(const std::string& what) : std::runtime_error(what) {}
};

struct SingularTriangular : std::runtime_error {
    explicit SingularTriangular(const std::string& what) : std::runtime_error(what) {}
};

struct NotPSD : std::runtime_error {
    explicit NotPSD(const std::string& what) : std::runtime_error(what) {}
};

enum class Side { Left, Right };
enum class UpLo { Upper, Lower };

/// Upper Cholesky factor R with R^T R = (a + a^T)/2, positive diagonal.
/// Throws NotPositiveDefinite when a pivot drops to kPdFloor or below.
Matrix cholesky_upper(const Matrix& a);

/// Solves op(r) X = b (Side::Left) or X op(r) = b (Side::Right), where
/// op(r) = r or r^T. r must be square triangular with the given layout.
Matrix solve_triangular(const Matrix& r, const Matrix& b, Side side, bool transpose,
                        UpLo uplo = UpLo::Upper);

/// Block unit-lower-triangular factors and block-diagonal D of a
/// block-partitioned symmetric matrix: m = L D L^T.
struct LdltFactors {
    BlockPartition partition;
    std::map<std::pair<int, int>, Matrix> l_blocks; // (i, j), i > j, 0-based
    std::vector<Matrix> d_blocks;

    const Matrix* l_block(int i, int j) const {
        auto it = l_blocks.find({i, j});
        return it == l_blocks.end() ? nullptr : &it->second;
    }

    Matrix reconstruct() const;
};

/// Recursive block LDL^T; block pivots are inverted through their Cholesky
/// factors. Throws SingularPivotBlock (1-based index) on a pivot that is not
/// positive definite while later columns still need it.
LdltFactors block_ldlt(const Matrix& m, const BlockPartition& p);

/// Largest singular value via power iteration on a^T a (deterministic seed,
/// capped at 10000 iterations); falls back to the eigensolver oracle when the
/// iteration does not converge.
double spectral_norm(const Matrix& a);

struct EigenDecomposition {
    std::vector<double> eigenvalues; // ascending
    Matrix eigenvectors;             // columns, orthonormal
};

/// Cyclic Jacobi eigensolver for symmetric matrices. Oracle: production paths
/// never call it; verification and tests do.
EigenDecomposition sym_eig(const Matrix& a);

/// Unique symmetric PSD square root, via sym_eig. Eigenvalues in
/// [-1e-10*||a||_2, 0) are clamped to zero; below that throws NotPSD.
Matrix sqrt_psd(const Matrix& a);

/// Smallest eigenvalue of a symmetric matrix (sym_eig wrapper).
double min_eigenvalue(const Matrix& a);

} // namespace ldlt
