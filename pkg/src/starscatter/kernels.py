"""Transformation kernel K(x, y), scattering Fourier transform F_s, and the
Marchenko self-consistency residual.

K(x, .) is the inverse Fourier transform in k of d(k, x) = f(k, x) - exp(ikx)I.
Because d decays only like 1/k (K jumps across y = x), a plain windowed FFT
would smear the diagonal; instead a two-term exponential tail model is fitted
on the high-|k| band per slice, transformed in closed form, and only the
faster-decaying residual goes through the FFT.  The same treatment applies to
S(k) - S0(k) for F_s, after removing the zero-potential part S0 - S_inf whose
transform is known exactly from the boundary normal form.

All spatial tables live on integer multiples of the potential step h, so the
convolutions used by the evolution kernels line up without interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .bc import BoundaryPair, NormalForm, free_scattering, normalize_boundary, s_infinity
from .errors import GridTooCoarse, MissingNormalization
from .jost import JostBatch, build_scattering_table, free_region_start, propagate_jost
from .potential import PotentialGrid, moments
from .transforms import (
    KGrid,
    eval_tail_model,
    fit_tail_model,
    halfoffset_transform,
    kernel_kgrid,
    taper_window,
)

TAIL_EXTENT_FACTOR = 2.0   # stored s-range of K slices, in units of y_extent


def _cumulative_matrix(pg: PotentialGrid) -> np.ndarray:
    """Sigma(edge_j) = int_{edge_j}^inf V(z) dz, matrix-valued, per edge."""
    rev = np.cumsum(pg.samples[::-1], axis=0)[::-1] * pg.h
    return np.concatenate([rev, np.zeros((1, pg.n, pg.n))], axis=0)


def _born_slices(pg: PotentialGrid, edges: np.ndarray, m_count: int) -> np.ndarray:
    """First-order kernel b_x(s) = (1/2) int_{x + s/2}^inf V on slice s-grids.

    Piecewise linear in s with knots where x + s/2 crosses a cell edge; exact
    for the cell-constant potential.  Shape (ns, m_count, n, n).
    """
    sig = _cumulative_matrix(pg)                       # (nc+1, n, n)
    n = pg.n
    h = pg.h
    nc = pg.n_cells
    out = np.zeros((len(edges), m_count, n, n), dtype=complex)
    ms = np.arange(m_count)
    for i, j in enumerate(edges):
        # z = (j + m/2) h; cell index floor, linear remainder
        zidx = j + ms // 2
        frac_half = (ms % 2).astype(float) * 0.5       # z - edge in units of h
        valid = zidx < nc
        zi = np.minimum(zidx, nc - 1)
        # Sigma(z) = Sigma(edge_{zi}) - (z - edge_zi) * V_cell[zi]
        vals = sig[zi] - (frac_half * h)[:, None, None] * pg.samples[zi]
        vals[~valid] = 0.0
        out[i] = 0.5 * vals
    return out


def _born_hat(pg: PotentialGrid, edges: np.ndarray, ks: np.ndarray,
              born0: np.ndarray) -> np.ndarray:
    """Exact one-sided transform int_0^inf exp(iks) b_x(s) ds per slice.

    Integration by parts twice: -b(0)/(ik) - [b'(0+) + sum_m c_m e^{ik s_m}]/k^2
    with slope jumps c_m = -(V_m - V_{m-1})/4 at knots s_m = 2(m - j)h > 0.
    Shape (nk, ns, n, n).
    """
    h = pg.h
    nc = pg.n_cells
    n = pg.n
    cells = np.concatenate([pg.samples, np.zeros((1, n, n))], axis=0)
    jumps = -(cells[1:] - cells[:-1]) / 4.0            # c at edges 1..nc
    phase = np.exp(2j * np.outer(ks, np.arange(1, nc + 1) * h))  # (nk, nc)
    # backward cumulative: T_j = sum_{m > j} c_m e^{2ikmh}
    weighted = phase[:, :, None, None] * jumps[None, :, :, :]
    tails = np.zeros((len(ks), nc + 1, n, n), dtype=complex)
    tails[:, :-1] = np.cumsum(weighted[:, ::-1], axis=1)[:, ::-1]
    ik = 1j * ks
    out = np.zeros((len(ks), len(edges), n, n), dtype=complex)
    for i, j in enumerate(edges):
        slope0 = -cells[min(j, nc)] / 4.0              # b'(0+) = -V(x+)/4
        knots = tails[:, min(j, nc)] * np.exp(-2j * ks * j * h)[:, None, None]
        out[:, i] = (-born0[i][None, :, :] / ik[:, None, None]
                     - (slope0[None, :, :] + knots) / (ks ** 2)[:, None, None])
    return out


@dataclass(frozen=True, eq=False)
class KernelK:
    """Upper-triangular kernel stored as slices K(x_j, x_j + s_m).

    values[j, m] = K(x at slice j, that x + m h); exactly zero below the
    diagonal by construction.  The sub-diagonal leakage of the underlying
    transform is kept as a quality metric.
    """

    h: float
    slice_edges: np.ndarray    # (ns,) edge indices of the x slices
    values: np.ndarray         # (ns, ms, n, n)
    leakage: float             # max |K| recovered at y < x, relative
    tol: float                 # accuracy estimate for table entries
    y_extent: float

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @property
    def n_slices(self) -> int:
        return self.values.shape[0]

    @cached_property
    def slice_x(self) -> np.ndarray:
        return self.slice_edges * self.h

    def slice_at_edge(self, edge: int) -> np.ndarray | None:
        hits = np.nonzero(self.slice_edges == edge)[0]
        if len(hits) == 0:
            return None
        return self.values[int(hits[0])]

    def diagonal(self) -> np.ndarray:
        """K(x, x) per slice."""
        return self.values[:, 0]


def transformation_kernel(pg: PotentialGrid, bp: BoundaryPair,
                          kgrid: KGrid | None = None,
                          batch: JostBatch | None = None,
                          x_keep_edge: int | None = None,
                          y_extent: float | None = None) -> KernelK:
    """Build K slices from a dense Jost sweep on the kernel k-grid."""
    h = pg.h
    if y_extent is None:
        y_extent = pg.x_max
    kg = kgrid if kgrid is not None else kernel_kgrid(h, y_extent)
    if kg.dk * y_extent > np.pi / 4 + 1e-12:
        raise GridTooCoarse(
            f"dk * y_extent = {kg.dk * y_extent:.3f} exceeds pi/4; refine dk")
    if x_keep_edge is None:
        x_keep_edge = min(free_region_start(pg) + int(round(1.0 / h)), pg.n_cells)
    edges = np.arange(x_keep_edge + 1)
    if batch is None:
        batch = propagate_jost(kg.ks, pg, keep_edges=edges)

    ks = kg.ks
    n = pg.n
    # g_hat(k; x) = exp(-ikx) d(k, x), the one-sided transform of K(x, x + .)
    fvals = batch.f[:, : len(edges)]                       # (nk, ne, n, n)
    xs = edges * h
    eye = np.eye(n)
    ghat = fvals * np.exp(-1j * np.outer(ks, xs))[:, :, None, None] \
        - eye[None, None, :, :]

    # stored range: s in [0, s_max]; leakage read off s in [-4, 0)
    period = 2.0 * np.pi / kg.dk
    s_max = min(TAIL_EXTENT_FACTOR * y_extent, period / 2.0 - 2.0)
    m_max = int(np.floor(s_max / h))

    # remove the first-order kernel analytically: it carries the diagonal jump
    # and every slope break of the cell-constant potential exactly
    born = _born_slices(pg, edges, m_max + 1)
    ghat = ghat - _born_hat(pg, edges, ks, born[:, 0])

    coeffs, model = fit_tail_model(ghat, kg, sign=-1, sides=(1,))
    resid = ghat - model
    window = taper_window(kg)
    rho, ms = halfoffset_transform(resid * window[:, None, None, None], kg, h, sign=-1)

    half = kg.nk // 2
    pos = rho[half: half + m_max + 1]                      # s = 0 .. m_max h
    m_neg = min(int(round(4.0 / h)), half - 1)
    neg = rho[half - m_neg: half]                          # s < 0

    s_pos = ms[half: half + m_max + 1] * h
    tail = eval_tail_model(coeffs, s_pos, sides=(1,))
    values = born + np.transpose(pos, (1, 0, 2, 3)) + np.transpose(tail, (1, 0, 2, 3))

    mags = np.linalg.norm(values, axis=(2, 3))
    neg_mags = np.linalg.norm(neg, axis=(2, 3))
    peak = float(mags.max()) if mags.size else 0.0
    leak = float(neg_mags.max() / peak) if peak > 0 else 0.0

    sigma, _ = moments(pg)
    tol = max(1e-6, 5.0 * float(sigma(np.array(0.0))) / kg.k_max)
    return KernelK(h=h, slice_edges=edges, values=values,
                   leakage=leak, tol=tol, y_extent=float(y_extent))


@dataclass(frozen=True, eq=False)
class FsTable:
    """F_s on the symmetric grid y = m h, with its cumulative absolute profile."""

    h: float
    m_index: np.ndarray        # (ny,) integer grid, symmetric about 0
    values: np.ndarray         # (ny, n, n)
    S_inf: np.ndarray
    normal_form: NormalForm

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @cached_property
    def _m0(self) -> int:
        return int(-self.m_index[0])

    def value_at(self, m: int) -> np.ndarray:
        """F_s(m h), zero outside the stored range."""
        i = m + self._m0
        if i < 0 or i >= len(self.m_index):
            return np.zeros((self.n, self.n), dtype=complex)
        return self.values[i]

    def cumulative_profile(self):
        """(Y, c(Y)) with c(Y) = int_{|y| <= Y} |F_s|, |.| the spectral norm."""
        mags = np.linalg.norm(self.values, ord=2, axis=(1, 2))
        m0 = self._m0
        y_half = np.arange(1, min(m0, len(self.m_index) - 1 - m0) + 1)
        incr = mags[m0 + y_half] + mags[m0 - y_half]
        c = np.concatenate([[mags[m0] * self.h], mags[m0] * self.h
                            + np.cumsum(incr) * self.h])
        ys = np.concatenate([[0.0], y_half * self.h])
        return ys, c

    def tail_ratio(self) -> float:
        """(c(Y) - c(Y/2)) / c(Y) at the table edge; small when F_s is integrable."""
        ys, c = self.cumulative_profile()
        total = c[-1]
        if total == 0:
            return 0.0
        half_idx = np.searchsorted(ys, ys[-1] / 2.0)
        return float((total - c[half_idx]) / total)


def free_fs_closed_form(nf: NormalForm, y: np.ndarray,
                        average_at_zero: bool = False) -> np.ndarray:
    """Transform of S0(k) - S_inf: one-sided exponentials on the mixed channels.

    Channel rate a = cot(theta): the profile is -2a exp(-a y) on y > 0 when
    a > 0 and 2a exp(-a y) on y < 0 when a < 0; Dirichlet and Neumann
    channels contribute nothing.  average_at_zero halves the y = 0 sample
    (mean of the one-sided limits).
    """
    y = np.asarray(y, dtype=float)
    n = nf.n
    diag = np.zeros(y.shape + (n,), dtype=complex)
    for j in range(nf.n_m):
        a = 1.0 / np.tan(nf.thetas[j])
        if a > 0:
            mask = np.where(y > 0, 1.0, 0.0)
            diag[..., j] = mask * (-2.0 * a) * np.exp(-a * np.abs(y))
            if average_at_zero:
                diag[..., j] += np.where(y == 0, -a, 0.0)
            else:
                diag[..., j] += np.where(y == 0, -2.0 * a, 0.0)
        elif a < 0:
            mask = np.where(y < 0, 1.0, 0.0)
            diag[..., j] = mask * (2.0 * a) * np.exp(a * np.abs(y))
            if average_at_zero:
                diag[..., j] += np.where(y == 0, a, 0.0)
    return np.einsum("ab,...b,cb->...ac", nf.M, diag, nf.M.conj(), optimize=True)


def fs_transform(pg: PotentialGrid, bp: BoundaryPair,
                 kgrid: KGrid | None = None,
                 batch: JostBatch | None = None,
                 y_extent: float | None = None) -> FsTable:
    """F_s(y) = (2 pi)^{-1} int (S(k) - S_inf) exp(iky) dk on the h-grid.

    The zero-potential part transforms in closed form; the remainder
    S(k) - S0(k) is tail-fitted on both sides and FFT-inverted.  The default
    range is wider than the potential grid: virtual states just below the
    real axis give F_s slowly decaying negative-y tails.
    """
    h = pg.h
    if y_extent is None:
        y_extent = 3.0 * pg.x_max
    kg = kgrid if kgrid is not None else kernel_kgrid(h, y_extent)
    if kg.dk * y_extent > np.pi / 4 + 1e-12:
        raise GridTooCoarse(
            f"dk * y_extent = {kg.dk * y_extent:.3f} exceeds pi/4; refine dk")
    table = build_scattering_table(pg, bp, kgrid=kg, batch=batch)
    s0 = free_scattering(kg.ks, bp)
    t_res = table.S - s0

    coeffs, model = fit_tail_model(t_res, kg, sign=+1, sides=(1, -1))
    resid = t_res - model
    window = taper_window(kg)
    rho, ms = halfoffset_transform(resid * window[:, None, None], kg, h, sign=+1)

    m_ext = min(int(np.floor(y_extent / h)), kg.nk // 2 - 1)
    half = kg.nk // 2
    sel = slice(half - m_ext, half + m_ext + 1)
    m_index = ms[sel]
    ys = m_index * h
    # y = 0 stores the mean of the one-sided limits so that plain Riemann
    # sums across the jump behave like the trapezoid rule
    vals = rho[sel] + eval_tail_model(coeffs, ys, sides=(1, -1),
                                      average_at_zero=True) \
        + free_fs_closed_form(table.normal_form, ys, average_at_zero=True)
    return FsTable(h=h, m_index=m_index, values=vals,
                   S_inf=table.S_inf, normal_form=table.normal_form)


# ---------------------------------------------------------------------------
# Marchenko residual and bound-state normalization fitting

def assemble_F(fs: FsTable, bound_terms=()):
    """F(q) lookup on the h-grid: F = F_s + sum_j M2_j exp(-kappa_j q).

    bound_terms: iterable of (M2 matrix, kappa).  Only q >= 0 is ever used.
    """
    terms = [(np.asarray(m2, dtype=complex), float(kap)) for m2, kap in bound_terms]

    def F(m: int) -> np.ndarray:
        q = m * fs.h
        out = fs.value_at(m).copy()
        for m2, kap in terms:
            out = out + m2 * np.exp(-kap * q)
        return out

    return F


def _f_array(fs: FsTable, bound_terms, q_max: int) -> np.ndarray:
    """F(q = m h) for m = 0 .. q_max as an array."""
    n = fs.n
    out = np.zeros((q_max + 1, n, n), dtype=complex)
    for m in range(q_max + 1):
        out[m] = fs.value_at(m)
    qs = np.arange(q_max + 1) * fs.h
    for m2, kap in bound_terms:
        out += np.exp(-float(kap) * qs)[:, None, None] * np.asarray(m2, dtype=complex)
    return out


def _trapz_weights(m: int) -> np.ndarray:
    w = np.ones(m)
    w[0] = 0.5
    w[-1] = 0.5
    return w


def marchenko_residual(ktab: KernelK, fs: FsTable, bound_terms=(),
                       has_bound_states: bool = False,
                       slice_stride: int = 5, y_count: int = 50):
    """sup_y |K(x,y) + F(x+y) + int_x^inf K(x,t) F(t+y) dt| per sampled slice.

    With bound states present, bound_terms (M2, kappa) must be supplied; use
    fit_normalizations when no closed form is available.  Returns
    (slice_x, residual sup per slice, sup |F| over the sampled range).
    """
    if has_bound_states and not bound_terms:
        raise MissingNormalization(
            "bound states present: supply (M2, kappa) terms or fit them first")
    h = ktab.h
    ns, msz, n, _ = ktab.values.shape
    picks = np.arange(0, ns, slice_stride)
    q_max = 2 * int(ktab.slice_edges.max()) + y_count + msz
    farr = _f_array(fs, bound_terms, q_max)
    sup_f = float(np.linalg.norm(farr, ord=2, axis=(1, 2)).max())
    wi = _trapz_weights(msz) * h
    my = np.arange(1, y_count + 1)
    sup_res = np.zeros(len(picks))
    for out_i, j in enumerate(picks):
        jx = int(ktab.slice_edges[j])
        kslice = ktab.values[j]
        kdirect = np.zeros((y_count, n, n), dtype=complex)
        avail = my < msz
        kdirect[avail] = kslice[my[avail]]
        idx = (2 * jx + my)[:, None] + np.arange(msz)[None, :]
        fwin = farr[idx]                                   # (yc, msz, n, n)
        integ = np.einsum("i,iab,yibc->yac", wi, kslice, fwin, optimize=True)
        res = kdirect + farr[2 * jx + my] + integ
        sup_res[out_i] = float(np.linalg.norm(res, ord=2, axis=(1, 2)).max())
    return ktab.slice_x[picks], sup_res, sup_f


def fit_normalizations(ktab: KernelK, fs: FsTable, kappas,
                       slice_stride: int = 5, y_count: int = 50):
    """Least-squares M2_j matrices minimizing the Marchenko residual.

    The residual is linear in each M2_j:
      R = R0 + sum_j exp(-kappa_j (x+y)) (I + C_j(x)) M2_j,
      C_j(x) = int_0^inf K(x, x+s) exp(-kappa_j s) ds.
    Values are fitted, not derived; report them as such.
    """
    kappas = [float(k) for k in kappas]
    h = ktab.h
    ns, msz, n, _ = ktab.values.shape
    picks = np.arange(0, ns, slice_stride)
    q_max = 2 * int(ktab.slice_edges.max()) + y_count + msz
    farr = _f_array(fs, (), q_max)
    wi = _trapz_weights(msz) * h
    my = np.arange(1, y_count + 1)
    ss = np.arange(msz) * h

    rows_r0 = []
    rows_design = []   # (n_samples*n, n_kappa * n) blocks acting on stacked M2 columns
    for j in picks:
        jx = int(ktab.slice_edges[j])
        kslice = ktab.values[j]
        kdirect = np.zeros((y_count, n, n), dtype=complex)
        avail = my < msz
        kdirect[avail] = kslice[my[avail]]
        idx = (2 * jx + my)[:, None] + np.arange(msz)[None, :]
        integ = np.einsum("i,iab,yibc->yac", wi, kslice, farr[idx], optimize=True)
        r0 = kdirect + farr[2 * jx + my] + integ           # (yc, n, n)
        x = jx * h
        coefs = []
        for kap in kappas:
            cj = np.einsum("i,iab->ab", wi * np.exp(-kap * ss), kslice, optimize=True)
            pref = np.exp(-kap * (x + x + my * h))          # (yc,)
            coefs.append(pref[:, None, None] * (np.eye(n) + cj)[None, :, :])
        rows_r0.append(r0)
        rows_design.append(np.concatenate(coefs, axis=2))   # (yc, n, n*nkap)
    r0_all = np.concatenate(rows_r0, axis=0)                # (S, n, n)
    des_all = np.concatenate(rows_design, axis=0)           # (S, n, n*nkap)
    s_count = r0_all.shape[0]
    a_mat = des_all.reshape(s_count * n, n * len(kappas))
    m2_cols, *_ = np.linalg.lstsq(a_mat, -r0_all.reshape(s_count * n, n), rcond=None)
    terms = []
    for i, kap in enumerate(kappas):
        terms.append((m2_cols[i * n:(i + 1) * n, :], kap))
    return terms
