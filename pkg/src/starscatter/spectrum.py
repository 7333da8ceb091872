"""Bound states, the continuous-spectrum projector, and zero-energy data.

Bound states sit at the zeros of det J(i kappa) on the positive imaginary
axis.  The search scans the smallest singular value of J(i kappa) on a
log-dense grid, brackets local minima, and refines each bracket by
golden-section.  Eigenfunctions are f(i kappa, .) v for v in the null space
of J(i kappa)^dag, which is exactly the set of directions whose profile
satisfies the vertex condition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bc import BoundaryPair, normalize_boundary
from .errors import GridMismatch, RankAmbiguous
from .jost import jost_matrix_from_slices, propagate_jost
from .potential import PotentialGrid

EPS_RANK = 1e-6        # relative rank threshold at k = 0
ROOT_TOL = 1e-10       # accept a refined root when s_min < ROOT_TOL * scale
SCAN_PER_DECADE = 400
KAPPA_MIN = 1e-3


def _smallest_singulars(pg, bp, kappas):
    batch = propagate_jost(1j * np.asarray(kappas, dtype=float), pg, keep_edges=[0])
    f0, fp0 = batch.at_edge(0)
    jmats = jost_matrix_from_slices(f0, fp0, bp)
    svals = np.linalg.svd(jmats, compute_uv=False)
    return jmats, svals


@dataclass(frozen=True, eq=False)
class BoundState:
    kappa: float
    multiplicity: int
    directions: np.ndarray       # (n, multiplicity) orthonormal null(J(i kappa)^dag)
    eigenfunctions: np.ndarray   # (multiplicity, n_edges, n), unit grid norm


@dataclass(frozen=True, eq=False)
class BoundStateSet:
    states: list
    x_edges: np.ndarray
    weights: np.ndarray

    @property
    def total_count(self) -> int:
        return sum(s.multiplicity for s in self.states)

    @property
    def kappas(self) -> np.ndarray:
        return np.array([s.kappa for s in self.states])

    def stacked_eigenfunctions(self) -> np.ndarray:
        """(N_b, n_edges, n) raw normalized eigenfunctions."""
        if not self.states:
            return np.zeros((0, len(self.x_edges), 1), dtype=complex)
        return np.concatenate([s.eigenfunctions for s in self.states], axis=0)

    def orthonormal_family(self) -> np.ndarray:
        """Weighted-QR orthonormalization of the eigenfunction family."""
        funcs = self.stacked_eigenfunctions()
        if funcs.shape[0] == 0:
            return funcs
        nb, ne, n = funcs.shape
        sw = np.sqrt(self.weights)
        mat = (funcs * sw[None, :, None]).reshape(nb, ne * n).T
        q, _ = np.linalg.qr(mat)
        fam = q.T.reshape(nb, ne, n) / sw[None, :, None]
        return fam


def _golden_minimize(fun, a, b, tol):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def default_kappa_max(pg: PotentialGrid, bp: BoundaryPair, margin: float = 1.0) -> float:
    """sqrt(max |V|) plus the largest attractive vertex rate, plus a margin."""
    vmax = float(pg.cell_norms.max()) if pg.n_cells else 0.0
    nf = normalize_boundary(bp)
    cots = [1.0 / np.tan(th) for th in nf.thetas[: nf.n_m]]
    vertex = max([c for c in cots if c > 0], default=0.0)
    return np.sqrt(vmax) + vertex + margin


def find_bound_states(pg: PotentialGrid, bp: BoundaryPair,
                      kappa_max: float | None = None,
                      kappa_min: float = KAPPA_MIN,
                      per_decade: int = SCAN_PER_DECADE) -> BoundStateSet:
    """Scan s_min(J(i kappa)), refine bracketed minima, extract null directions."""
    if kappa_max is None:
        kappa_max = default_kappa_max(pg, bp)
    n_pts = max(16, int(np.ceil(per_decade * np.log10(kappa_max / kappa_min))))
    kappas = np.geomspace(kappa_min, kappa_max, n_pts)
    jmats, svals = _smallest_singulars(pg, bp, kappas)
    smin = svals[:, -1]
    scale = np.maximum(1.0, svals[:, 0])

    # candidate brackets: strict local minima well below the local J scale
    cand = []
    for i in range(1, n_pts - 1):
        if smin[i] <= smin[i - 1] and smin[i] <= smin[i + 1] \
                and smin[i] < 1e-2 * scale[i]:
            cand.append(i)

    def s_at(kappa):
        _, sv = _smallest_singulars(pg, bp, [kappa])
        return float(sv[0, -1])

    roots = []
    for i in cand:
        kr = _golden_minimize(s_at, kappas[i - 1], kappas[i + 1],
                              tol=1e-12 * kappas[i])
        jm, sv = _smallest_singulars(pg, bp, [kr])
        sc = max(1.0, float(sv[0, 0]))
        if sv[0, -1] < ROOT_TOL * sc:
            roots.append((float(kr), jm[0], sv[0]))

    # merge duplicates and flag clusters tighter than the refinement scale
    roots.sort(key=lambda r: r[0])
    merged = []
    for r in roots:
        if merged and abs(r[0] - merged[-1][0]) < 1e-8 * max(1.0, r[0]):
            warnings.warn(f"bound-state cluster near kappa={r[0]:.6g} "
                          "is too dense to separate", stacklevel=2)
            continue
        merged.append(r)

    x_edges = pg.edges
    weights = np.full(len(x_edges), pg.h)
    weights[0] *= 0.5
    weights[-1] *= 0.5

    states = []
    for kr, jm, sv in merged:
        jdag = jm.conj().T
        u, s, vh = np.linalg.svd(jdag)
        mult = int(np.sum(s < 1e-8 * max(1.0, s[0])))
        mult = max(1, min(mult, pg.n))
        dirs = vh.conj().T[:, -mult:]           # null(J^dag), orthonormal
        traj = propagate_jost([1j * kr], pg, keep_edges="all")
        fvals = traj.f[0]                        # (ne, n, n)
        funcs = np.einsum("exy,ym->mex", fvals, dirs, optimize=True)
        norms = np.sqrt(np.sum(np.abs(funcs) ** 2 * weights[None, :, None], axis=(1, 2)))
        funcs = funcs / norms[:, None, None]
        states.append(BoundState(kappa=kr, multiplicity=mult,
                                 directions=dirs, eigenfunctions=funcs))
    return BoundStateSet(states=states, x_edges=x_edges, weights=weights)


def project_continuous(psi: np.ndarray, bset: BoundStateSet) -> np.ndarray:
    """P_c psi = psi minus its projection on the (orthonormalized) bound family."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
    if psi.shape[0] != len(bset.x_edges):
        raise GridMismatch(
            f"state has {psi.shape[0]} nodes, grid has {len(bset.x_edges)}")
    fam = bset.orthonormal_family()
    out = psi.copy()
    for func in fam:
        coef = np.sum(bset.weights[:, None] * np.conj(func) * out)
        out = out - coef * func
    return out


@dataclass(frozen=True, eq=False)
class ZeroEnergyData:
    classification: str          # "generic" | "exceptional"
    rank_defect: int
    P0: np.ndarray
    k_samples: np.ndarray
    D_samples: np.ndarray        # (nk, n, n)
    det_D: np.ndarray
    D0_extrapolated: np.ndarray
    min_abs_det: float

    @property
    def det_D0(self) -> complex:
        return complex(np.linalg.det(self.D0_extrapolated))


def _richardson(ks, mats):
    """Neville extrapolation of mats(k) to k -> 0 along a decreasing sequence."""
    tab = [m.astype(complex) for m in mats]
    xs = list(ks)
    m = len(tab)
    for level in range(1, m):
        new = []
        for i in range(m - level):
            x0, x1 = xs[i], xs[i + level]
            new.append((tab[i + 1] * x0 - tab[i] * x1) / (x0 - x1))
        tab = new
    return tab[0]


def classify_zero_energy(pg: PotentialGrid, bp: BoundaryPair,
                         k_small: float = 0.1, n_samples: int = 6) -> ZeroEnergyData:
    """Rank-test J(0), build the orthogonal projector on null J(0), sample D(k).

    D(k) = (I - P0 + P0 / (ik)) J(k)^dag stays invertible through k = 0; its
    limit is estimated by Richardson extrapolation along k_small / 2^m.
    """
    n = pg.n
    batch0 = propagate_jost([0.0], pg, keep_edges=[0])
    f0, fp0 = batch0.at_edge(0)
    j0 = jost_matrix_from_slices(f0, fp0, bp)[0]
    u, s, vh = np.linalg.svd(j0)
    # scale from the pair itself: J(0) may be entirely tiny in the exceptional case
    scale = (np.linalg.norm(bp.A, 2) + np.linalg.norm(bp.B, 2)) \
        * max(1.0, float(np.linalg.norm(f0[0], 2)), float(np.linalg.norm(fp0[0], 2)))
    thr = EPS_RANK * scale
    defect = int(np.sum(s <= thr))
    if np.any((s > thr / 10.0) & (s <= 10.0 * thr)):
        raise RankAmbiguous(
            "singular values of J(0) sit within a factor 10 of the rank threshold; "
            "refine the grid before classifying")
    classification = "generic" if defect == 0 else "exceptional"
    if defect == 0:
        p0 = np.zeros((n, n), dtype=complex)
    else:
        null_dirs = vh.conj().T[:, n - defect:]
        p0 = null_dirs @ null_dirs.conj().T

    ks = k_small / (2.0 ** np.arange(n_samples))
    all_ks = np.concatenate([ks, -ks])
    batch = propagate_jost(all_ks, pg, keep_edges=[0])
    fba, fpba = batch.at_edge(0)
    jk = jost_matrix_from_slices(fba[n_samples:], fpba[n_samples:], bp)  # J(+ks)
    eye = np.eye(n)
    dmats = np.empty((n_samples, n, n), dtype=complex)
    for i, k in enumerate(ks):
        jd = jk[i].conj().T
        dmats[i] = (eye - p0 + p0 / (1j * k)) @ jd
    dets = np.linalg.det(dmats)
    d0 = _richardson(ks, dmats)
    return ZeroEnergyData(
        classification=classification,
        rank_defect=defect,
        P0=p0,
        k_samples=ks,
        D_samples=dmats,
        det_D=dets,
        D0_extrapolated=d0,
        min_abs_det=float(np.abs(dets).min()),
    )
