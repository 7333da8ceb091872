"""Self-adjoint vertex conditions for the half-line matrix Schrodinger operator.

A boundary pair (A, B) encodes the condition -B^dag u(0) + A^dag u'(0) = 0.
Validity means the pair is self-adjoint (-B^dag A + A^dag B = 0) and of full
combined rank (A^dag A + B^dag B > 0).  Every valid pair is unitarily
equivalent to a diagonal family of scalar conditions
cos(theta_j) u_j(0) + sin(theta_j) u_j'(0) = 0 with theta_j in (0, pi];
``normalize_boundary`` recovers that normal form by diagonalizing the free
scattering matrix at k = 1, which is unitary and encodes the angles as
eigenvalues -exp(-2 i theta_j).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    NotSelfAdjointBC,
    ParseError,
    RankDeficientBC,
    SingularFreeJost,
    UnknownPreset,
)

EPS_BC = 1e-10       # self-adjointness residual, relative to Frobenius scale
EPS_PD = 1e-12       # smallest eigenvalue of A^dag A + B^dag B, relative
EPS_UNIT = 1e-10     # unitarity tolerance for the normal-form basis

THETA_SNAP = 1e-9    # distance below which theta is classified Dirichlet/Neumann


@dataclass(frozen=True, eq=False)
class BoundaryPair:
    """Validated (A, B) pair for the vertex condition."""

    n: int
    A: np.ndarray
    B: np.ndarray
    residual_selfadjoint: float = 0.0
    smallest_rank_eig: float = 0.0


@dataclass(frozen=True, eq=False)
class NormalForm:
    """Unitary M and angles theta_j with the ordering mixed, Dirichlet, Neumann."""

    M: np.ndarray
    thetas: np.ndarray
    n_m: int
    n_d: int
    n_n: int

    @property
    def n(self) -> int:
        return len(self.thetas)

    @property
    def z0(self) -> np.ndarray:
        signs = np.concatenate(
            [np.ones(self.n_m), -np.ones(self.n_d), np.ones(self.n_n)]
        )
        return np.diag(signs).astype(complex)

    def cot_matrix(self) -> np.ndarray:
        """M diag(cot theta_j) M^dag with cot set to 0 on Dirichlet/Neumann channels."""
        cots = np.zeros(self.n)
        for j, th in enumerate(self.thetas):
            if j < self.n_m:
                cots[j] = 1.0 / np.tan(th)
        return self.M @ np.diag(cots).astype(complex) @ self.M.conj().T


def _as_square(mat, name: str) -> np.ndarray:
    arr = np.asarray(mat, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be a square matrix, got shape {arr.shape}")
    return arr


def validate_boundary(A, B) -> BoundaryPair:
    """Check self-adjointness and rank of (A, B); record both residuals."""
    A = _as_square(A, "A")
    B = _as_square(B, "B")
    if A.shape != B.shape:
        raise DimensionMismatch(f"A {A.shape} and B {B.shape} differ in dimension")
    n = A.shape[0]
    scale = np.linalg.norm(A) ** 2 + np.linalg.norm(B) ** 2
    if scale == 0.0:
        raise RankDeficientBC("A and B are both zero")
    sa = np.linalg.norm(-B.conj().T @ A + A.conj().T @ B)
    if sa > EPS_BC * scale:
        raise NotSelfAdjointBC(
            f"self-adjointness residual {sa:.3e} exceeds {EPS_BC:.0e} * scale"
        )
    gram = A.conj().T @ A + B.conj().T @ B
    smallest = float(np.linalg.eigvalsh(gram)[0])
    if smallest < EPS_PD * scale:
        raise RankDeficientBC(
            f"smallest eigenvalue of A^dag A + B^dag B is {smallest:.3e}"
        )
    return BoundaryPair(n=n, A=A, B=B, residual_selfadjoint=float(sa),
                        smallest_rank_eig=smallest)


def free_jost(k, bp: BoundaryPair) -> np.ndarray:
    """Jost matrix of the zero potential: B - i k A (k scalar or array)."""
    k = np.asarray(k, dtype=complex)
    return bp.B - 1j * k[..., None, None] * bp.A


def free_scattering(k, bp: BoundaryPair) -> np.ndarray:
    """Free scattering matrix -(B + ikA)(B - ikA)^{-1}; unitary for real k."""
    k = np.asarray(k, dtype=complex)
    num = bp.B + 1j * k[..., None, None] * bp.A
    den = bp.B - 1j * k[..., None, None] * bp.A
    try:
        # X = num @ den^{-1}  via  den^T X^T = num^T
        xt = np.linalg.solve(np.swapaxes(den, -1, -2), np.swapaxes(num, -1, -2))
    except np.linalg.LinAlgError as exc:
        raise SingularFreeJost(f"B - ikA singular at k={k}") from exc
    return -np.swapaxes(xt, -1, -2)


def _theta_from_eigenvalue(lam: complex) -> float:
    """Solve lam = -exp(-2 i theta) for theta in (0, pi]."""
    phi = np.angle(-lam)
    theta = (-phi / 2.0) % np.pi
    if theta <= THETA_SNAP:
        theta = np.pi
    return float(theta)


def _classify(theta: float) -> str:
    if abs(theta - np.pi) <= THETA_SNAP:
        return "dirichlet"
    if abs(theta - np.pi / 2) <= THETA_SNAP:
        return "neumann"
    return "mixed"


def normalize_boundary(bp: BoundaryPair) -> NormalForm:
    """Recover (M, theta_j) from the unitary free scattering matrix at k = 1.

    Columns within degenerate eigenspaces are fixed deterministically: sort by
    principal argument of the eigenvalue, tie-break lexicographically on the
    rounded eigenvector entries, then normalize each column's global phase.
    """
    s_hat = free_scattering(np.array(1.0), bp)
    # Schur of a normal matrix is diagonal up to roundoff; Q is exactly unitary.
    t_mat, q_mat = scipy.linalg.schur(s_hat, output="complex")
    offdiag = t_mat - np.diag(np.diag(t_mat))
    if np.linalg.norm(offdiag) > 1e-8 * max(1.0, np.linalg.norm(t_mat)):
        raise SingularFreeJost("free scattering matrix is not normal; invalid pair?")
    lams = np.diag(t_mat)

    # global phase fix per column: largest-magnitude entry made real positive
    cols = []
    for j in range(bp.n):
        v = q_mat[:, j].copy()
        idx = int(np.argmax(np.abs(v)))
        phase = v[idx] / abs(v[idx])
        v = v / phase
        cols.append(v)

    thetas = [_theta_from_eigenvalue(l) for l in lams]
    kinds = [_classify(th) for th in thetas]
    group_rank = {"mixed": 0, "dirichlet": 1, "neumann": 2}

    def sort_key(j):
        v = np.round(cols[j], 12)
        lex = tuple(x for re_im in zip(v.real, v.imag) for x in re_im)
        return (group_rank[kinds[j]], np.angle(lams[j]), lex)

    order = sorted(range(bp.n), key=sort_key)
    thetas_sorted = np.array([thetas[j] for j in order])
    m_mat = np.stack([cols[j] for j in order], axis=1)
    kinds_sorted = [kinds[j] for j in order]
    n_m = kinds_sorted.count("mixed")
    n_d = kinds_sorted.count("dirichlet")
    n_n = kinds_sorted.count("neumann")
    # snap exactly
    thetas_sorted[n_m:n_m + n_d] = np.pi
    thetas_sorted[n_m + n_d:] = np.pi / 2

    unit_res = np.linalg.norm(m_mat @ m_mat.conj().T - np.eye(bp.n))
    if unit_res > EPS_UNIT * bp.n:
        raise SingularFreeJost(f"normal-form basis not unitary: residual {unit_res:.2e}")
    return NormalForm(M=m_mat, thetas=thetas_sorted, n_m=n_m, n_d=n_d, n_n=n_n)


def s_infinity(nf: NormalForm) -> np.ndarray:
    """High-energy limit of the scattering matrix: M Z0 M^dag (Hermitian involution)."""
    return nf.M @ nf.z0 @ nf.M.conj().T


# ---------------------------------------------------------------------------
# constructors

def boundary_from_thetas(thetas) -> BoundaryPair:
    """Diagonal pair A = -diag(sin theta), B = diag(cos theta)."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    A = -np.diag(np.sin(thetas)).astype(complex)
    B = np.diag(np.cos(thetas)).astype(complex)
    return validate_boundary(A, B)


def preset_boundary(name: str, n: int = 1, theta: float | None = None) -> BoundaryPair:
    name = name.lower()
    if name == "dirichlet":
        return boundary_from_thetas([np.pi] * n)
    if name == "neumann":
        return boundary_from_thetas([np.pi / 2] * n)
    if name == "mixed":
        if theta is None:
            theta = np.pi / 4
        return boundary_from_thetas([theta] * n)
    raise UnknownPreset(f"unknown boundary preset {name!r}")


def random_boundary(n: int, rng: np.random.Generator) -> BoundaryPair:
    """Random valid pair: unitary-dressed diagonal angles times an invertible gauge."""
    thetas = rng.uniform(0.15 * np.pi, 0.95 * np.pi, size=n)
    gauss = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    m_mat, _ = np.linalg.qr(gauss)
    t_mat = np.eye(n) + 0.3 * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    a_tilde = -np.diag(np.sin(thetas)).astype(complex)
    b_tilde = np.diag(np.cos(thetas)).astype(complex)
    A = m_mat @ a_tilde @ m_mat.conj().T @ t_mat
    B = m_mat @ b_tilde @ m_mat.conj().T @ t_mat
    return validate_boundary(A, B)


# ---------------------------------------------------------------------------
# text format: n, A_re, A_im, B_re, B_im as row-major arrays

def save_boundary(path, bp: BoundaryPair) -> None:
    lines = ["# starscatter boundary v1", f"n {bp.n}"]
    for tag, mat in (("A", bp.A), ("B", bp.B)):
        for part, vals in ((f"{tag}_re", mat.real), (f"{tag}_im", mat.imag)):
            lines.append(part + " " + " ".join(f"{v:.17e}" for v in vals.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_boundary(path) -> BoundaryPair:
    fields = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            fields[key] = rest
    try:
        n = int(fields["n"])
        mats = {}
        for tag in ("A", "B"):
            re_ = np.array([float(v) for v in fields[f"{tag}_re"].split()])
            im_ = np.array([float(v) for v in fields[f"{tag}_im"].split()])
            mats[tag] = (re_ + 1j * im_).reshape(n, n)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"malformed boundary file {path}: {exc}") from exc
    return validate_boundary(mats["A"], mats["B"])
