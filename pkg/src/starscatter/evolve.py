"""Continuous-spectrum evolution by three independent routes.

spectral:  u(t) = (2 pi)^{-1} int_0^inf Psi(k,.) e^{-itk^2} <Psi(k,.), psi> dk,
           quadrature on a one-sided grid whose spacing resolves every phase
           (2 t k + spatial extent), Simpson weights except a midpoint first
           panel so k = 0 is never evaluated.
kernel:    u(t) = (2 pi)^{-1} int T(x,y) psi(y) dy with T = sum of the free
           piece and Fresnel convolutions of the kernel tables; no oscillatory
           k-quadrature, so accuracy improves as |t| grows.
stepper:   Crank-Nicolson on the quadratic-form discretization of H (exactly
           Hermitian, so the implicit midpoint step is norm-preserving) with a
           quartic complex absorbing layer near the grid end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .bc import BoundaryPair, normalize_boundary, s_infinity
from .errors import (
    GridMismatch,
    MissingKernelTables,
    SpectralValidityError,
    StepTooLarge,
    ZeroTime,
)
from .jost import free_region_start, jost_matrix_from_slices, propagate_jost, scattering_from_jost
from .kernels import FsTable, KernelK
from .potential import PotentialGrid
from .spectrum import BoundStateSet
from .transforms import fresnel_kernel, simpson_weights

PHASE_BUDGET = 0.06        # max phase advance per quadrature panel, radians
X_CHUNK = 512              # synthesis/analysis chunk along the space axis


def trapezoid_weights(n_nodes: int, h: float) -> np.ndarray:
    w = np.full(n_nodes, h)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    t: float
    u: np.ndarray              # (n_edges, n)
    method: str
    l2_norm: float
    norm_drift: float          # relative to the t = 0 norm of the same route
    bc_residual: float


def bc_residual(u: np.ndarray, bp: BoundaryPair, h: float) -> float:
    """|-B^dag u(0) + A^dag u'(0)| with a third-order one-sided derivative."""
    if u.shape[0] < 4:
        return float("nan")
    du0 = (-11.0 * u[0] + 18.0 * u[1] - 9.0 * u[2] + 2.0 * u[3]) / (6.0 * h)
    res = -bp.B.conj().T @ u[0] + bp.A.conj().T @ du0
    scale = (np.linalg.norm(bp.A, 2) + np.linalg.norm(bp.B, 2))
    amp = float(np.abs(u).max())
    if amp == 0.0:
        return 0.0
    return float(np.linalg.norm(res) / (scale * amp))


# ---------------------------------------------------------------------------
# spectral route

@dataclass(frozen=True, eq=False)
class SpectralSystem:
    """Precomputed generalized-transform data for one (potential, boundary) pair."""

    pg: PotentialGrid
    bp: BoundaryPair
    nodes: np.ndarray          # (nk,) k > 0 quadrature nodes
    weights: np.ndarray        # (nk,)
    S: np.ndarray              # (nk, n, n) at the nodes
    f_plus: np.ndarray         # (nk, ne_keep, n, n) trajectories at +k
    f_minus: np.ndarray        # (nk, ne_keep, n, n) at -k
    keep_edges: np.ndarray
    t_max: float
    k_max: float

    @cached_property
    def x_edges(self) -> np.ndarray:
        return self.pg.edges

    @cached_property
    def wx(self) -> np.ndarray:
        return trapezoid_weights(len(self.x_edges), self.pg.h)

    @property
    def n(self) -> int:
        return self.pg.n

    @cached_property
    def n_keep(self) -> int:
        return len(self.keep_edges)

    @cached_property
    def psi_stored(self) -> np.ndarray:
        """Psi(k, x) on the stored-trajectory region."""
        smat = self.S
        return self.f_minus + np.einsum("keab,kbc->keac", self.f_plus, smat,
                                        optimize=True)

    def analysis(self, psi: np.ndarray) -> np.ndarray:
        """phi(k) = int Psi(k, x)^dag psi(x) dx on the grid."""
        psi = np.asarray(psi, dtype=complex)
        if psi.ndim == 1:
            psi = psi[:, None]
        if psi.shape[0] != len(self.x_edges):
            raise GridMismatch("state grid does not match the system grid")
        wx = self.wx
        nk_ = self.n_keep
        phi = np.einsum("keab,e,eb->ka", np.conj(self.psi_stored), wx[:nk_],
                        psi[:nk_], optimize=True)
        # free region: Psi = exp(-ikx) I + exp(ikx) S
        xs = self.x_edges[nk_:]
        wpsi = wx[nk_:, None] * psi[nk_:]
        for lo in range(0, len(xs), X_CHUNK):
            sel = slice(lo, lo + X_CHUNK)
            ph = np.exp(1j * np.outer(self.nodes, xs[sel]))   # (nk, nx)
            phi += ph @ wpsi[sel]
            phi += np.einsum("kba,kb->ka", np.conj(self.S), np.conj(ph) @ wpsi[sel],
                             optimize=True)
        return phi

    def synthesis(self, coef: np.ndarray) -> np.ndarray:
        """(2 pi)^{-1} sum_k w_k Psi(k, x) coef(k) over the grid."""
        nk_ = self.n_keep
        c = self.weights[:, None] * coef / (2.0 * np.pi)
        out = np.empty((len(self.x_edges), self.n), dtype=complex)
        out[:nk_] = np.einsum("keab,kb->ea", self.psi_stored, c, optimize=True)
        xs = self.x_edges[nk_:]
        sc = np.einsum("kab,kb->ka", self.S, c, optimize=True)
        for lo in range(0, len(xs), X_CHUNK):
            sel = slice(lo, lo + X_CHUNK)
            ph = np.exp(1j * np.outer(self.nodes, xs[sel]))   # (nk, nx)
            out[nk_:][sel] = ph.T @ sc + np.conj(ph).T @ c
        return out


def build_spectral_system(pg: PotentialGrid, bp: BoundaryPair, *,
                          k_max: float, t_max: float,
                          phase_budget: float = PHASE_BUDGET,
                          dk: float | None = None) -> SpectralSystem:
    """Choose the quadrature grid for |t| <= t_max and propagate the sweep."""
    x_total = pg.x_max
    if dk is None:
        theta_max = 2.0 * abs(t_max) * k_max + 2.0 * x_total
        dk = phase_budget / max(theta_max, 1.0)
    n_half = 2 * int(np.ceil((k_max - dk) / (2.0 * dk)))
    step = (k_max - dk) / n_half
    simp_nodes = dk + step * np.arange(n_half + 1)
    simp_w = simpson_weights(n_half + 1) * step
    nodes = np.concatenate([[dk / 2.0], simp_nodes])
    weights = np.concatenate([[dk], simp_w])

    keep_last = min(free_region_start(pg) + int(round(0.5 / pg.h)), pg.n_cells)
    keep = np.arange(keep_last + 1)
    ks_all = np.concatenate([nodes, -nodes])
    batch = propagate_jost(ks_all, pg, keep_edges=keep)
    nk_ = len(nodes)
    f_plus = batch.f[:nk_]
    f_minus = batch.f[nk_:]
    f0p, fp0p = batch.f[:, 0], batch.fp[:, 0]
    j_plus = jost_matrix_from_slices(f0p[nk_:], fp0p[nk_:], bp)   # J(+k)
    j_minus = jost_matrix_from_slices(f0p[:nk_], fp0p[:nk_], bp)  # J(-k)
    xt = np.linalg.solve(np.swapaxes(j_plus, 1, 2), np.swapaxes(j_minus, 1, 2))
    smat = -np.swapaxes(xt, 1, 2)
    return SpectralSystem(pg=pg, bp=bp, nodes=nodes, weights=weights, S=smat,
                          f_plus=f_plus, f_minus=f_minus, keep_edges=keep,
                          t_max=float(t_max), k_max=float(k_max))


def evolve_spectral(psi: np.ndarray, ts, sys: SpectralSystem) -> list[EvolutionResult]:
    """Evolve through the generalized transform; the bound subspace drops out."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    for t in ts:
        if abs(t) * sys.k_max * (sys.nodes[2] - sys.nodes[1]) > np.pi / 2:
            raise SpectralValidityError(
                f"t={t} exceeds the k-grid validity window; rebuild with larger t_max")
    phi = sys.analysis(psi)
    u0 = sys.synthesis(phi)
    wx = sys.wx
    norm0 = float(np.sqrt(np.sum(wx[:, None] * np.abs(u0) ** 2)))
    out = []
    for t in ts:
        coef = np.exp(-1j * t * sys.nodes ** 2)[:, None] * phi
        u = sys.synthesis(coef) if t != 0.0 else u0
        nrm = float(np.sqrt(np.sum(wx[:, None] * np.abs(u) ** 2)))
        out.append(EvolutionResult(
            t=float(t), u=u, method="spectral", l2_norm=nrm,
            norm_drift=abs(nrm - norm0) / norm0 if norm0 > 0 else 0.0,
            bc_residual=bc_residual(u, sys.bp, sys.pg.h)))
    return out


# ---------------------------------------------------------------------------
# kernel route: Fresnel convolutions of the tables

@dataclass(frozen=True, eq=False)
class _GridFn:
    """Values on an integer grid m0 .. m0+L-1 (positions m*h)."""

    vals: np.ndarray   # (..., L, n, n)
    m0: int

    @property
    def length(self) -> int:
        return self.vals.shape[-3]

    def sample(self, ms: np.ndarray) -> np.ndarray:
        """Values at integer positions, zero outside the stored range."""
        ms = np.asarray(ms, dtype=int)
        idx = ms - self.m0
        ok = (idx >= 0) & (idx < self.length)
        idx_c = np.clip(idx, 0, self.length - 1)
        out = self.vals[..., idx_c, :, :].copy()
        out[..., ~ok, :, :] = 0.0
        return out


def _fft_conv(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """h * full convolution along axis -3 with matrix products inside."""
    la, lb = a.shape[-3], b.shape[-3]
    nfft = 1 << int(np.ceil(np.log2(la + lb - 1)))
    fa = np.fft.fft(a, n=nfft, axis=-3)
    fb = np.fft.fft(b, n=nfft, axis=-3)
    prod = np.einsum("...mab,...mbc->...mac", fa, fb, optimize=True)
    full = np.fft.ifft(prod, axis=-3)[..., : la + lb - 1, :, :]
    return full * h


def _conv(f: _GridFn, g: _GridFn, h: float) -> _GridFn:
    return _GridFn(vals=_fft_conv(f.vals, g.vals, h), m0=f.m0 + g.m0)


def _flip(f: _GridFn) -> _GridFn:
    return _GridFn(vals=f.vals[..., ::-1, :, :], m0=-(f.m0 + f.length - 1))


def _dagger(f: _GridFn) -> _GridFn:
    return _GridFn(vals=np.conj(np.swapaxes(f.vals, -1, -2)), m0=f.m0)


@dataclass(frozen=True, eq=False)
class KernelPieces:
    """Fresnel decomposition of the evolution kernel at one time."""

    t: float
    h_eval: float
    x_eval: np.ndarray         # positions (length Nx)
    y_eval: np.ndarray
    pieces: dict               # j -> (Nx, Ny, n, n)

    @cached_property
    def total(self) -> np.ndarray:
        return sum(self.pieces.values())

    def sup_norm(self) -> float:
        """sup_{x,y} |T(x,y)| / 2 pi (spectral matrix norm pointwise)."""
        mat = self.total
        if mat.shape[-1] == 1:
            mags = np.abs(mat[..., 0, 0])
        else:
            mags = np.linalg.norm(mat, ord=2, axis=(2, 3))
        return float(mags.max()) / (2.0 * np.pi)


def kernel_pieces(t: float, ktab: KernelK, fs: FsTable, s_inf: np.ndarray,
                  x_eval=None, y_eval=None, stride: int = 2) -> KernelPieces:
    """Assemble I_0 .. I_5 on an evaluation grid of h-multiples."""
    if t == 0.0:
        raise ZeroTime("kernel pieces need t != 0")
    if ktab is None or fs is None:
        raise MissingKernelTables("transformation kernel and F_s tables required")
    h = ktab.h
    n = ktab.n
    if x_eval is None:
        x_eval = np.arange(0, int(ktab.y_extent / h) + 1, stride)
    x_eval = np.asarray(x_eval, dtype=int)
    y_eval = x_eval if y_eval is None else np.asarray(y_eval, dtype=int)

    xs = x_eval * h
    ys = y_eval * h
    eye = np.eye(n, dtype=complex)

    # I0: free kernel, analytic
    pref = np.sqrt(np.pi / (1j * t))
    diff = xs[:, None] - ys[None, :]
    summ = xs[:, None] + ys[None, :]
    i0 = pref * (np.exp(1j * diff ** 2 / (4.0 * t))[:, :, None, None] * eye
                 + np.exp(1j * summ ** 2 / (4.0 * t))[:, :, None, None] * s_inf)

    # common grid functions; slice support endpoints carry half weight so the
    # Riemann sums over the kernel's diagonal jump act like the trapezoid rule
    jxs = ktab.slice_edges
    msz = ktab.values.shape[1]
    mz_max = int(jxs.max()) + msz
    a_abs = np.zeros((ktab.n_slices, mz_max, n, n), dtype=complex)
    for i, jx in enumerate(jxs):
        a_abs[i, jx: jx + msz] = ktab.values[i]
        a_abs[i, jx] *= 0.5
        a_abs[i, jx + msz - 1] *= 0.5
    a_fn = _GridFn(vals=a_abs, m0=0)
    a_flip = _flip(a_fn)
    a_dag = _dagger(a_fn)
    a_flip_dag = _dagger(a_flip)

    fs_fn = _GridFn(vals=fs.values, m0=int(fs.m_index[0]))

    # Fresnel samples covering every argument that appears below
    m_need = int(max(x_eval.max(), y_eval.max())) + mz_max + abs(fs_fn.m0) + 2
    g_ms = np.arange(-m_need, m_need + 1)
    g_vals = fresnel_kernel(t, g_ms * h)[:, None, None] * np.ones((1, 1, 1))
    g_fn = _GridFn(vals=g_vals.reshape(-1, 1, 1), m0=-m_need)

    def conv_g(f: _GridFn) -> _GridFn:
        # scalar G against matrix slices: broadcast via entrywise FFT
        la, lb = g_fn.length, f.length
        nfft = 1 << int(np.ceil(np.log2(la + lb - 1)))
        fg = np.fft.fft(g_fn.vals[:, 0, 0], n=nfft)
        fb = np.fft.fft(f.vals, n=nfft, axis=-3)
        prod = fg[:, None, None] * fb
        full = np.fft.ifft(prod, axis=-3)[..., : la + lb - 1, :, :]
        return _GridFn(vals=full * h, m0=g_fn.m0 + f.m0)

    ga = conv_g(a_fn)          # (G * a_x)(.)
    ga_dag = conv_g(a_dag)     # (G * a_x^dag)(.)
    gar = conv_g(a_flip)       # (G * a_x(-.))(.)
    gar_dag = conv_g(a_flip_dag)

    slice_of_edge = {int(e): i for i, e in enumerate(jxs)}
    x_slice = np.array([slice_of_edge.get(int(e), -1) for e in x_eval])
    y_slice = np.array([slice_of_edge.get(int(e), -1) for e in y_eval])
    x_has = x_slice >= 0
    y_has = y_slice >= 0

    # I1: single-kernel terms
    i1 = np.zeros((len(x_eval), len(y_eval), n, n), dtype=complex)
    if y_has.any():
        term1 = ga_dag.sample(x_eval)[y_slice[y_has]]         # (nyh, Nx, n, n)
        term3 = gar_dag.sample(x_eval)[y_slice[y_has]]
        i1[:, y_has] += np.transpose(term1 + np.einsum(
            "ab,yxbc->yxac", s_inf, term3, optimize=True), (1, 0, 2, 3))
    if x_has.any():
        term2 = ga.sample(y_eval)[x_slice[x_has]]             # (nxh, Ny, n, n)
        term4 = gar.sample(y_eval)[x_slice[x_has]]
        i1[x_has] += term2 + np.einsum("xybc,cd->xybd", term4, s_inf, optimize=True)
    i1 *= 2.0 * np.pi

    # I2: (G*a_x + (G*a_x(-.)) S_inf) contracted against a_y^dag
    i2 = np.zeros_like(i1)
    if x_has.any() and y_has.any():
        support = np.arange(mz_max)
        q_abs = ga.sample(support) + np.einsum(
            "xmab,bc->xmac", gar.sample(support), s_inf, optimize=True)
        contracted = 2.0 * np.pi * h * np.einsum(
            "xmab,ymcb->xyac", q_abs[x_slice[x_has]],
            np.conj(a_abs[y_slice[y_has]]), optimize=True)
        i2[np.ix_(x_has, y_has)] = contracted

    # I3: 2 pi (G * F_s)(x + y)
    phi_fn = conv_g(fs_fn)
    i3 = 2.0 * np.pi * phi_fn.sample(x_eval[:, None] + y_eval[None, :])

    # I4: 2 pi [ (Phi * a_y(-.)^dag)(x) + (G * (a_x(-.) * F_s))(y) ]
    i4 = np.zeros_like(i1)
    if y_has.any():
        w1 = _conv(phi_fn, a_flip_dag, h)      # ordered F_s . a^dag
        i4[:, y_has] += np.transpose(w1.sample(x_eval)[y_slice[y_has]], (1, 0, 2, 3))
    if x_has.any():
        w2 = conv_g(_conv(a_flip, fs_fn, h))   # ordered a . F_s then G
        i4[x_has] += w2.sample(y_eval)[x_slice[x_has]]
    i4 *= 2.0 * np.pi

    # I5: 2 pi h sum_v (a_x(-.) * Phi)(v) a_y(v)^dag
    i5 = np.zeros_like(i1)
    if x_has.any() and y_has.any():
        r_fn = _conv(a_flip, phi_fn, h)
        support = np.arange(mz_max)
        r_abs = r_fn.sample(support)
        i5[np.ix_(x_has, y_has)] = 2.0 * np.pi * h * np.einsum(
            "xmab,ymcb->xyac", r_abs[x_slice[x_has]],
            np.conj(a_abs[y_slice[y_has]]), optimize=True)

    return KernelPieces(t=float(t), h_eval=h * float(x_eval[1] - x_eval[0])
                        if len(x_eval) > 1 else h,
                        x_eval=xs, y_eval=ys,
                        pieces={0: i0, 1: i1, 2: i2, 3: i3, 4: i4, 5: i5})


def evolve_kernel(psi_on_eval: np.ndarray, pieces: KernelPieces,
                  bp: BoundaryPair | None = None) -> EvolutionResult:
    """Apply u(x) = (2 pi)^{-1} int T(x, y) psi(y) dy on the evaluation grid."""
    psi = np.asarray(psi_on_eval, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
    if psi.shape[0] != len(pieces.y_eval):
        raise GridMismatch("state must be sampled on the pieces' y grid")
    wy = trapezoid_weights(len(pieces.y_eval), pieces.h_eval)
    u = np.einsum("xyab,y,yb->xa", pieces.total, wy, psi, optimize=True) \
        / (2.0 * np.pi)
    wx = trapezoid_weights(len(pieces.x_eval), pieces.h_eval)
    nrm = float(np.sqrt(np.sum(wx[:, None] * np.abs(u) ** 2)))
    res = bc_residual(u, bp, pieces.h_eval) if bp is not None else float("nan")
    return EvolutionResult(t=pieces.t, u=u, method="kernel", l2_norm=nrm,
                           norm_drift=float("nan"), bc_residual=res)


# ---------------------------------------------------------------------------
# Crank-Nicolson stepper on the form discretization

@dataclass(frozen=True, eq=False)
class StepperSystem:
    pg: PotentialGrid
    bp: BoundaryPair
    free_basis: np.ndarray       # (n, n_free) node-0 reduced basis
    mass: scipy.sparse.spmatrix
    form: scipy.sparse.spmatrix  # Hermitian part
    cap: scipy.sparse.spmatrix   # absorbing (PSD) part
    cap_strength: float

    @property
    def n(self) -> int:
        return self.pg.n

    def expand(self, vec: np.ndarray) -> np.ndarray:
        """Reduced coefficient vector -> full (n_edges, n) state."""
        n = self.n
        nf = self.free_basis.shape[1]
        u0 = self.free_basis @ vec[:nf]
        rest = vec[nf:].reshape(-1, n)
        return np.concatenate([u0[None, :], rest], axis=0)

    def reduce(self, u: np.ndarray) -> np.ndarray:
        nf = self.free_basis.shape[1]
        head = self.free_basis.conj().T @ u[0]
        return np.concatenate([head, u[1:].reshape(-1)])


def build_stepper(pg: PotentialGrid, bp: BoundaryPair,
                  cap_strength: float = 30.0,
                  cap_fraction: float = 0.15) -> StepperSystem:
    """Assemble mass, Hermitian form, and absorbing-layer matrices."""
    n = pg.n
    h = pg.h
    ne = pg.n_cells + 1
    nf_form = normalize_boundary(bp)
    cmat = nf_form.cot_matrix()
    # node-0 reduced basis: span of non-Dirichlet columns of M
    m_cols = nf_form.M
    free_cols = [j for j in range(n)
                 if not (nf_form.n_m <= j < nf_form.n_m + nf_form.n_d)]
    qb = m_cols[:, free_cols] if free_cols else np.zeros((n, 0), dtype=complex)
    n_free = qb.shape[1]
    dim = n_free + (ne - 1) * n

    def blk(i):
        """Slice of the global vector for node i (0 uses the reduced basis)."""
        if i == 0:
            return slice(0, n_free)
        return slice(n_free + (i - 1) * n, n_free + i * n)

    rows, cols, vals = [], [], []

    def add(i, j, block):
        bi, bj = blk(i), blk(j)
        r0, c0 = bi.start, bj.start
        br, bc_ = block.shape
        rr, cc = np.meshgrid(np.arange(br), np.arange(bc_), indexing="ij")
        rows.extend((r0 + rr).ravel())
        cols.extend((c0 + cc).ravel())
        vals.extend(block.ravel())

    eye = np.eye(n, dtype=complex)
    v_edge = np.empty((ne, n, n), dtype=complex)
    v_edge[0] = pg.samples[0]
    v_edge[-1] = pg.samples[-1]
    v_edge[1:-1] = 0.5 * (pg.samples[:-1] + pg.samples[1:])

    wts = trapezoid_weights(ne, h)

    def reduce0(block):
        return qb.conj().T @ block @ qb

    # kinetic + potential + vertex
    for i in range(ne):
        diag = (2.0 / h if 0 < i < ne - 1 else 1.0 / h) * eye \
            + wts[i] * v_edge[i]
        if i == 0:
            diag = diag - cmat
            add(0, 0, reduce0(diag))
        else:
            add(i, i, diag)
    for i in range(ne - 1):
        off = (-1.0 / h) * eye
        if i == 0:
            add(0, 1, qb.conj().T @ off)
            add(1, 0, off @ qb)
        else:
            add(i, i + 1, off)
            add(i + 1, i, off)
    form = scipy.sparse.csc_matrix(
        (np.array(vals), (np.array(rows), np.array(cols))), shape=(dim, dim))

    # lumped mass
    mdiag = np.empty(dim)
    mdiag[:n_free] = wts[0]
    for i in range(1, ne):
        mdiag[blk(i)] = wts[i]
    mass = scipy.sparse.diags(mdiag).tocsc()

    # quartic absorbing ramp over the last cap_fraction of the grid
    xs = pg.edges
    x_start = pg.x_max * (1.0 - cap_fraction)
    ramp = np.where(xs > x_start,
                    ((xs - x_start) / (pg.x_max - x_start)) ** 4, 0.0)
    cdiag = np.empty(dim)
    cdiag[:n_free] = wts[0] * ramp[0] * cap_strength
    for i in range(1, ne):
        cdiag[blk(i)] = wts[i] * ramp[i] * cap_strength
    cap = scipy.sparse.diags(cdiag).tocsc()

    return StepperSystem(pg=pg, bp=bp, free_basis=qb, mass=mass, form=form,
                         cap=cap, cap_strength=cap_strength)


def evolve_stepper(psi: np.ndarray, t: float, sys: StepperSystem,
                   dt: float = 2e-3,
                   bound_states: BoundStateSet | None = None) -> EvolutionResult:
    """Implicit-midpoint stepping of i du/dt = H u; bound states projected out."""
    if t <= 0:
        raise ZeroTime("stepper needs t > 0")
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
    if psi.shape[0] != sys.pg.n_cells + 1:
        raise GridMismatch("state grid does not match the stepper grid")
    if bound_states is not None and bound_states.total_count:
        from .spectrum import project_continuous
        psi = project_continuous(psi, bound_states)

    n_steps = max(1, int(np.ceil(t / dt)))
    tau = t / n_steps / 2.0
    a_plus = (sys.mass + 1j * tau * sys.form + tau * sys.cap).tocsc()
    a_minus = (sys.mass - 1j * tau * sys.form - tau * sys.cap).tocsc()
    solver = scipy.sparse.linalg.splu(a_plus)

    vec = sys.reduce(psi)
    mdiag = sys.mass.diagonal()
    has_cap = sys.cap_strength > 0 and sys.cap.count_nonzero() > 0
    norm0 = float(np.sqrt(np.real(np.vdot(vec, mdiag * vec))))
    prev = norm0
    for _ in range(n_steps):
        vec = solver.solve(a_minus @ vec)
        cur = float(np.sqrt(np.real(np.vdot(vec, mdiag * vec))))
        if not has_cap and prev > 0 and abs(cur - prev) / prev > 1e-4:
            raise StepTooLarge(
                f"norm moved by {abs(cur - prev) / prev:.2e} in one step")
        prev = cur
    u = sys.expand(vec)
    nrm = prev
    return EvolutionResult(t=float(t), u=u, method="stepper", l2_norm=nrm,
                           norm_drift=abs(nrm - norm0) / norm0 if norm0 else 0.0,
                           bc_residual=bc_residual(u, sys.bp, sys.pg.h))


def full_evolution(psi: np.ndarray, t: float, sys: SpectralSystem,
                   bset: BoundStateSet) -> np.ndarray:
    """exp(-itH) psi: continuous part by the spectral route plus the
    explicitly phased bound-state components (eigenvalue -kappa^2)."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
    res = evolve_spectral(psi, [t], sys)[0]
    u = res.u.copy()
    fam = bset.orthonormal_family()
    idx = 0
    for state in bset.states:
        phase = np.exp(1j * t * state.kappa ** 2)
        for _ in range(state.multiplicity):
            func = fam[idx]
            coef = np.sum(bset.weights[:, None] * np.conj(func) * psi)
            u = u + phase * coef * func
            idx += 1
    return u
