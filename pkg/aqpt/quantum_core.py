"""
Dense linear algebra for small quantum operators: channel representations
(Kraus elements, dilation column, χ-matrix, Choi state), conversions between
them and the process metrics built on the Bures distance.

The operator basis is fixed to Ẽ_{m = l·d + l'} = |l⟩⟨l'| (0-based), so the
vector of expansion coefficients of an operator E is its row-major flattening
and χ = d·ρ_E holds for trace-preserving processes.
"""

from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np

from aqpt.errors import ValidationError

# Numerical tolerances
TOL_HERM = 1e-10
TOL_PSD = 1e-10
TOL_TRACE = 1e-9
TOL_COMPLETENESS = 1e-10
EIG_CLIP = 1e-12

CMatrix = np.ndarray


def as_cmatrix(data, name: str = "matrix") -> CMatrix:
    """
    Converts ``data`` into a finite two-dimensional complex array.
    """
    mat = np.array(data, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] == 0 or mat.shape[1] == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D matrix, got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValidationError(f"{name} has non-finite entries")
    return mat


def dagger(mat: CMatrix) -> CMatrix:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(mat, -1, -2))


def hermitize(mat: CMatrix) -> CMatrix:
    """Hermitian part (M + M†)/2 of a matrix or a stack of matrices."""
    return 0.5 * (mat + dagger(mat))


def is_hermitian(mat: CMatrix, tol: float = TOL_HERM) -> bool:
    return bool(np.max(np.abs(mat - dagger(mat))) <= tol)


def min_eigenvalue(mat: CMatrix) -> float:
    return float(np.linalg.eigvalsh(hermitize(mat))[0])


def _square_dim(mat: CMatrix, name: str) -> int:
    if mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"{name} must be square, got {mat.shape}")
    return mat.shape[0]


def _check_hermitian_psd(mat: CMatrix, name: str):
    if not is_hermitian(mat):
        raise ValidationError(f"{name} is not Hermitian")
    if min_eigenvalue(mat) < -TOL_PSD:
        raise ValidationError(f"{name} is not positive semidefinite")


def psd_sqrt(mat: CMatrix) -> CMatrix:
    """
    Square root of a Hermitian PSD matrix (or a stack of them) through the
    Hermitian eigensolver; eigenvalues below ``EIG_CLIP`` are set to zero.
    """
    w, v = np.linalg.eigh(hermitize(mat))
    w = np.where(w < EIG_CLIP, 0.0, w)
    return (v * np.sqrt(w)[..., None, :]) @ dagger(v)


def project_psd(mat) -> CMatrix:
    """
    Hermitizes ``mat`` and clips its negative eigenvalues to zero.
    """
    mat = hermitize(as_cmatrix(mat))
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return (v * w) @ dagger(v)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """
    A (possibly sub-normalized) state ρ: Hermitian, PSD, 0 ≤ Tr ρ ≤ 1. A zero
    trace is admitted only to represent the output of a fully absorbing
    channel.
    """

    mat: CMatrix

    def __post_init__(self):
        mat = as_cmatrix(self.mat, "density matrix")
        _square_dim(mat, "density matrix")
        _check_hermitian_psd(mat, "density matrix")
        tr = float(np.real(np.trace(mat)))
        if tr > 1.0 + TOL_TRACE or tr < -TOL_TRACE:
            raise ValidationError(f"density matrix trace {tr} outside [0, 1]")
        object.__setattr__(self, "mat", mat)

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix":
        ket = np.asarray(ket, dtype=complex).reshape(-1)
        return cls(np.outer(ket, ket.conj()))

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.mat)))


@dataclass(frozen=True, eq=False)
class KrausSet:
    """
    Operation elements {E_k} of a channel, E(ρ) = Σ_k E_k ρ E_k†.
    """

    elements: Tuple[CMatrix, ...]
    trace_preserving: bool = False

    def __post_init__(self):
        elements = tuple(as_cmatrix(e, "operation element") for e in self.elements)
        if not elements:
            raise ValidationError("a Kraus set needs at least one element")
        d = _square_dim(elements[0], "operation element")
        for e in elements:
            if e.shape != (d, d):
                raise ValidationError(
                    f"dimension mismatch among operation elements: {e.shape} vs {d}"
                )
        if len(elements) > d * d + 1:
            raise ValidationError(f"too many operation elements: {len(elements)}")
        object.__setattr__(self, "elements", elements)

        q = self.completeness()
        if np.linalg.eigvalsh(hermitize(q))[-1] > 1.0 + TOL_TRACE:
            raise ValidationError("operation elements increase the trace")
        if self.trace_preserving and np.max(np.abs(q - np.eye(d))) > TOL_COMPLETENESS:
            raise ValidationError("operation elements are not trace-preserving")

    @property
    def dim(self) -> int:
        return self.elements[0].shape[0]

    def completeness(self) -> CMatrix:
        """Q = Σ_k E_k†E_k."""
        return sum(dagger(e) @ e for e in self.elements)


@dataclass(frozen=True, eq=False)
class ChiMatrix:
    """
    Process matrix χ (d²×d²) in the |l⟩⟨l'| operator basis.
    """

    mat: CMatrix
    trace_preserving: bool = False

    def __post_init__(self):
        mat = as_cmatrix(self.mat, "chi-matrix")
        big = _square_dim(mat, "chi-matrix")
        d = int(round(np.sqrt(big)))
        if d * d != big:
            raise ValidationError(f"chi-matrix size {big} is not a square number")
        _check_hermitian_psd(mat, "chi-matrix")
        tr = float(np.real(np.trace(mat)))
        if tr > d + TOL_TRACE:
            raise ValidationError(f"chi-matrix trace {tr} exceeds d = {d}")
        if self.trace_preserving:
            if abs(tr - d) > TOL_TRACE:
                raise ValidationError(f"trace-preserving chi-matrix has trace {tr}")
            if np.max(np.abs(partial_trace_first(mat, d) - np.eye(d))) > TOL_TRACE:
                raise ValidationError("chi-matrix partial trace differs from identity")
        object.__setattr__(self, "mat", mat)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.mat.shape[0])))

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.mat)))


@dataclass(frozen=True, eq=False)
class DilationColumn:
    """
    First block column of the dilation unitary: the operation elements
    stacked vertically, (E_1; E_2; ...; E_K), of size (d·K)×d.
    """

    col: CMatrix
    dim: int
    trace_preserving: bool = False
    blocks: Tuple[CMatrix, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        col = as_cmatrix(self.col, "dilation column")
        d = int(self.dim)
        if d < 1 or col.shape[1] != d or col.shape[0] % d != 0:
            raise ValidationError(
                f"dilation column of shape {col.shape} "
                f"does not split into {d}x{d} blocks"
            )
        gram = dagger(col) @ col
        if np.linalg.eigvalsh(hermitize(gram))[-1] > 1.0 + TOL_TRACE:
            raise ValidationError("dilation column is not a contraction")
        deviation = np.max(np.abs(gram - np.eye(d)))
        if self.trace_preserving and deviation > TOL_COMPLETENESS:
            raise ValidationError("dilation column is not an isometry")
        object.__setattr__(self, "col", col)
        object.__setattr__(self, "dim", d)
        object.__setattr__(
            self, "blocks", tuple(col[k * d : (k + 1) * d] for k in range(self.K))
        )

    @property
    def K(self) -> int:
        return self.col.shape[0] // self.dim


def partial_trace_first(mat: CMatrix, d: int) -> CMatrix:
    """
    Trace over the first tensor factor of a d²×d² matrix. For a χ-matrix it
    equals the transpose of Σ_k E_k†E_k.
    """
    return np.einsum("lalb->ab", mat.reshape(d, d, d, d))


def kraus_to_chi(ks: KrausSet) -> ChiMatrix:
    """χ = Σ_k vec(E_k) vec(E_k)†, with vec the row-major flattening."""
    vecs = np.array([e.reshape(-1) for e in ks.elements])
    return ChiMatrix(vecs.T @ vecs.conj(), trace_preserving=ks.trace_preserving)


def chi_to_kraus(chi: ChiMatrix) -> KrausSet:
    """
    Recovers operation elements from the eigendecomposition of χ:
    E_k = √λ_k Σ_m V_mk Ẽ_m. Eigenvalues below ``EIG_CLIP`` are dropped.
    """
    d = chi.dim
    w, v = np.linalg.eigh(hermitize(chi.mat))
    order = np.argsort(w)[::-1]
    elements = [
        np.sqrt(w[k]) * v[:, k].reshape(d, d) for k in order if w[k] > EIG_CLIP
    ]
    if not elements:
        elements = [np.zeros((d, d), dtype=complex)]
    return KrausSet(tuple(elements), trace_preserving=chi.trace_preserving)


def kraus_to_dilation(ks: KrausSet) -> DilationColumn:
    """Stacks the elements into the dilation column (E_1; ...; E_K)."""
    return DilationColumn(
        np.vstack(ks.elements), ks.dim, trace_preserving=ks.trace_preserving
    )


def dilation_to_kraus(dc: DilationColumn) -> KrausSet:
    """Splits a dilation column into its d×d blocks."""
    if dc.col.shape[0] % dc.dim != 0:
        raise ValidationError("row count is not divisible by d")
    return KrausSet(dc.blocks, trace_preserving=dc.trace_preserving)


def _check_dims(d_channel: int, rho: DensityMatrix):
    if rho.dim != d_channel:
        raise ValidationError(
            f"dimension mismatch: channel acts on {d_channel}, state has {rho.dim}"
        )


def apply_channel(ks: KrausSet, rho: DensityMatrix) -> DensityMatrix:
    """E(ρ) = Σ_k E_k ρ E_k†."""
    _check_dims(ks.dim, rho)
    out = sum(e @ rho.mat @ dagger(e) for e in ks.elements)
    return DensityMatrix(hermitize(out))


def apply_channel_chi(chi: ChiMatrix, rho: DensityMatrix) -> DensityMatrix:
    """E(ρ) = Σ_mn χ_mn Ẽ_m ρ Ẽ_n†."""
    d = chi.dim
    _check_dims(d, rho)
    out = np.einsum("abcd,bd->ac", chi.mat.reshape(d, d, d, d), rho.mat)
    return DensityMatrix(hermitize(out))


def choi_state(chi: ChiMatrix) -> DensityMatrix:
    if not chi.trace_preserving:
        raise ValidationError("the Choi state is defined for trace-preserving χ only")
    return DensityMatrix(chi.mat / chi.dim)


MatrixLike = Union[CMatrix, ChiMatrix, DensityMatrix]


def _unwrap(m: MatrixLike) -> CMatrix:
    return m.mat if hasattr(m, "mat") else as_cmatrix(m)


def _bures_from_sqrt(sqrt_a: CMatrix, tr_a: float, b: CMatrix) -> np.ndarray:
    """
    d²_B for a fixed first argument (given through its square root) and a
    matrix or a stack of matrices ``b``.
    """
    inner = sqrt_a @ b @ sqrt_a
    w = np.linalg.eigvalsh(hermitize(inner))
    w = np.where(w < EIG_CLIP, 0.0, w)
    tr_b = np.real(np.trace(b, axis1=-2, axis2=-1))
    return np.maximum(tr_a + tr_b - 2.0 * np.sqrt(w).sum(axis=-1), 0.0)


def bures_distance_sq(a: MatrixLike, b: MatrixLike) -> float:
    """
    Squared Bures distance d²_B(A, B) = Tr A + Tr B − 2 Tr√(√A B √A) for
    Hermitian PSD matrices that need not have unit trace.
    """
    a, b = _unwrap(a), _unwrap(b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    _check_hermitian_psd(a, "first argument")
    _check_hermitian_psd(b, "second argument")
    tr_a = float(np.real(np.trace(a)))
    return float(_bures_from_sqrt(psd_sqrt(a), tr_a, b))


def bures_distance_sq_many(stack: np.ndarray, ref: CMatrix) -> np.ndarray:
    """
    d²_B(χ_s, ref) for every matrix of a stack, without input validation.
    """
    tr_ref = float(np.real(np.trace(ref)))
    return _bures_from_sqrt(psd_sqrt(ref), tr_ref, stack)


def process_distance(a: ChiMatrix, b: ChiMatrix) -> float:
    """Squared Bures distance between two χ-matrices."""
    return bures_distance_sq(a.mat, b.mat)


def choi_fidelity(a: ChiMatrix, b: ChiMatrix) -> float:
    """
    Fidelity (Tr√(√ρ_a ρ_b √ρ_a))² between the Choi states of two
    trace-preserving processes.
    """
    rho_a, rho_b = choi_state(a).mat, choi_state(b).mat
    sqrt_a = psd_sqrt(rho_a)
    w = np.linalg.eigvalsh(hermitize(sqrt_a @ rho_b @ sqrt_a))
    w = np.where(w < EIG_CLIP, 0.0, w)
    return float(min(np.sqrt(w).sum() ** 2, 1.0))


def purity(chi: ChiMatrix) -> float:
    """p = Tr(χ²)/(Tr χ)², the degree of unitarity of a process."""
    tr = chi.trace
    if tr <= TOL_TRACE:
        raise ValidationError("purity is undefined for a zero chi-matrix")
    return float(np.real(np.vdot(chi.mat, chi.mat))) / tr**2


def average_transmittance(chi: ChiMatrix) -> float:
    """Tr χ / d; the average loss of the channel is one minus this value."""
    return float(np.clip(chi.trace / chi.dim, 0.0, 1.0))


def orthonormalize_columns(mat: np.ndarray) -> np.ndarray:
    """
    QR-orthonormalizes the columns of a matrix (or of every matrix of a stack)
    with the phase convention that makes the diagonal of R real positive.
    """
    q, r = np.linalg.qr(mat)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    mod = np.abs(diag)
    phases = np.where(mod > 0, diag / np.where(mod > 0, mod, 1.0), 1.0)
    return q * phases[..., None, :]


def ginibre(shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Complex matrices with i.i.d. standard complex Gaussian entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def haar_random_unitary(rows: int, cols: int, rng: np.random.Generator) -> CMatrix:
    """
    Column-orthonormal rows×cols matrix with Haar-distributed columns, from
    the QR decomposition of a Ginibre matrix.
    """
    if rows < cols or cols < 1:
        raise ValidationError(f"need rows >= cols >= 1, got {rows}x{cols}")
    return orthonormalize_columns(ginibre((rows, cols), rng))


def chi_to_json(chi: ChiMatrix) -> dict:
    return {
        "d": chi.dim,
        "trace_preserving": bool(chi.trace_preserving),
        "mat": [[[float(z.real), float(z.imag)] for z in row] for row in chi.mat],
    }


def chi_from_json(obj: dict, sanitize: bool = False) -> ChiMatrix:
    """
    Reads the χ-matrix JSON format. With ``sanitize`` the matrix is first
    projected onto the Hermitian PSD cone, for estimates produced elsewhere
    whose eigenvalues carry small negative rounding errors.
    """
    try:
        d = int(obj["d"])
        rows = obj["mat"]
        mat = np.array([[complex(re, im) for re, im in row] for row in rows])
        trace_preserving = bool(obj.get("trace_preserving", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed chi-matrix JSON: {exc}") from exc
    if mat.shape != (d * d, d * d):
        raise ValidationError(f"chi-matrix JSON has shape {mat.shape} for d = {d}")
    if sanitize:
        mat = project_psd(mat)
    return ChiMatrix(mat, trace_preserving=trace_preserving)
