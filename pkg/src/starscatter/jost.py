"""Jost solutions, the Jost matrix J(k), and the scattering matrix S(k).

The Jost solution solves -f'' + V f = k^2 f with f ~ exp(ikx) I at the far
end of the grid.  Integration runs backward from x_max using the exact
propagator of each constant cell, built from cos and sinc of the Hermitian
matrix k^2 I - V_cell.  That makes the sweep uniformly stable in k, exact on
piecewise-constant potentials, and trivially vectorizable over a whole
k-batch, since the cell eigenbasis does not depend on k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bc import BoundaryPair, NormalForm, normalize_boundary, s_infinity
from .errors import BranchError, MissingConjugateSample, SingularJost
from .potential import PotentialGrid, moments
from .transforms import KGrid, symmetric_kgrid

EPS_S = 1e-8  # unitarity tolerance of assembled scattering tables


def _check_branch(ks: np.ndarray) -> np.ndarray:
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    real = np.abs(ks.imag) == 0.0
    imag = (np.abs(ks.real) == 0.0) & (ks.imag > 0.0)
    if not np.all(real | imag):
        bad = ks[~(real | imag)][0]
        raise BranchError(f"wavenumber {bad} is neither real nor positive-imaginary")
    return ks


@dataclass(frozen=True, eq=False)
class JostBatch:
    """f and f' sampled at a set of grid edges, for a batch of wavenumbers."""

    ks: np.ndarray            # (nk,)
    edge_indices: np.ndarray  # (ne,) ascending
    h: float
    f: np.ndarray             # (nk, ne, n, n)
    fp: np.ndarray            # (nk, ne, n, n)

    @cached_property
    def _edge_pos(self) -> dict:
        return {int(e): i for i, e in enumerate(self.edge_indices)}

    def at_edge(self, edge: int):
        try:
            i = self._edge_pos[int(edge)]
        except KeyError:
            raise MissingConjugateSample(f"edge {edge} was not stored") from None
        return self.f[:, i], self.fp[:, i]


def propagate_jost(ks, pg: PotentialGrid, keep_edges=None) -> JostBatch:
    """Backward sweep of (f, f') from x_max to 0 for every wavenumber in ``ks``.

    keep_edges: iterable of edge indices to store (default: edge 0 only).
    Distinct wavenumbers are independent; the sweep is vectorized over them.
    """
    ks = _check_branch(ks)
    k2 = (ks ** 2).real  # real on both allowed branches
    n = pg.n
    nc = pg.n_cells
    h = pg.h
    if keep_edges is None:
        keep = np.array([0])
    elif isinstance(keep_edges, str) and keep_edges == "all":
        keep = np.arange(nc + 1)
    else:
        keep = np.unique(np.asarray(list(keep_edges), dtype=int))
    keep_set = set(int(e) for e in keep)

    # cell eigenbases are k-independent
    evals, evecs = np.linalg.eigh(pg.samples)  # (nc, n), (nc, n, n)

    x_end = nc * h
    f = np.broadcast_to(np.exp(1j * ks * x_end)[:, None, None],
                        (len(ks), n, n)).copy() * np.eye(n)
    fp = 1j * ks[:, None, None] * np.eye(n) * np.exp(1j * ks * x_end)[:, None, None]

    out_f = np.empty((len(ks), len(keep), n, n), dtype=complex)
    out_fp = np.empty_like(out_f)
    pos = {int(e): i for i, e in enumerate(keep)}
    if nc in keep_set:
        out_f[:, pos[nc]] = f
        out_fp[:, pos[nc]] = fp

    for j in range(nc - 1, -1, -1):
        s = k2[:, None] - evals[j][None, :]         # (nk, n) real
        w = np.sqrt(np.abs(s))
        arg = h * w
        c = np.where(s >= 0, np.cos(arg), np.cosh(arg))
        with np.errstate(divide="ignore", invalid="ignore"):
            sn = np.where(s >= 0, np.sin(arg), np.sinh(arg)) / np.where(w == 0, 1.0, w)
        tiny = np.abs(s) * h * h < 1e-12
        if np.any(tiny):
            st = s[tiny]
            c[tiny] = 1.0 - st * h * h / 2.0
            sn[tiny] = h * (1.0 - st * h * h / 6.0)
        u = evecs[j]
        # C = U diag(c) U^dag, SN = U diag(sn) U^dag, D2 = U diag(s*sn) U^dag
        uc = u.conj().T
        cmat = np.einsum("ab,kb,bc->kac", u, c, uc, optimize=True)
        snmat = np.einsum("ab,kb,bc->kac", u, sn, uc, optimize=True)
        d2mat = np.einsum("ab,kb,bc->kac", u, s * sn, uc, optimize=True)
        f, fp = cmat @ f - snmat @ fp, d2mat @ f + cmat @ fp
        if j in keep_set:
            out_f[:, pos[j]] = f
            out_fp[:, pos[j]] = fp

    return JostBatch(ks=ks, edge_indices=keep, h=h, f=out_f, fp=out_fp)


@dataclass(frozen=True, eq=False)
class JostSample:
    """f(k, .) at a single wavenumber, with the optional full trajectory."""

    k: complex
    f0: np.ndarray
    fp0: np.ndarray
    trajectory: JostBatch | None = None


def jost_sample(k, pg: PotentialGrid, trajectory: bool = False) -> JostSample:
    keep = "all" if trajectory else None
    batch = propagate_jost([k], pg, keep_edges=keep)
    f0, fp0 = batch.at_edge(0)
    return JostSample(k=complex(np.atleast_1d(batch.ks)[0]), f0=f0[0], fp0=fp0[0],
                      trajectory=batch if trajectory else None)


def jost_matrix_from_slices(f0_conjpoint, fp0_conjpoint, bp: BoundaryPair) -> np.ndarray:
    """J(k) = f(-k*, 0)^dag B - f'(-k*, 0)^dag A, given slices at -k*."""
    fd = np.conj(np.swapaxes(f0_conjpoint, -1, -2))
    fpd = np.conj(np.swapaxes(fp0_conjpoint, -1, -2))
    return fd @ bp.B - fpd @ bp.A


def jost_matrix(sample: JostSample, bp: BoundaryPair,
                conj_sample: JostSample | None = None) -> np.ndarray:
    """Jost matrix at sample.k.  Real k needs the companion sample at -k."""
    k = sample.k
    if k.imag > 0:
        src = sample
    else:
        if conj_sample is None or abs(conj_sample.k + k) > 1e-14 * max(1.0, abs(k)):
            raise MissingConjugateSample(
                f"J({k}) needs the Jost sample at {-k}; propagate it first")
        src = conj_sample
    return jost_matrix_from_slices(src.f0, src.fp0, bp)


@dataclass(frozen=True, eq=False)
class ScatteringTable:
    """J(k) and S(k) on a symmetric half-offset grid, plus the high-energy limit."""

    kgrid: KGrid
    J: np.ndarray          # (nk, n, n)
    S: np.ndarray          # (nk, n, n)
    S_inf: np.ndarray
    normal_form: NormalForm
    potential_digest: str
    unitarity_residual: float
    symmetry_residual: float

    @property
    def n(self) -> int:
        return self.J.shape[-1]


def build_scattering_table(pg: PotentialGrid, bp: BoundaryPair,
                           k_max: float = 40.0, dk: float = 0.05,
                           kgrid: KGrid | None = None,
                           batch: JostBatch | None = None) -> ScatteringTable:
    """Propagate the k-sweep and assemble J, S with their exactness residuals."""
    kg = kgrid if kgrid is not None else symmetric_kgrid(k_max, dk)
    if batch is None:
        batch = propagate_jost(kg.ks, pg, keep_edges=[0])
    f0, fp0 = batch.at_edge(0)
    rev = kg.reversed_indices()
    jmat = jost_matrix_from_slices(f0[rev], fp0[rev], bp)
    smat = scattering_from_jost(jmat, rev)
    nf = normalize_boundary(bp)
    s_inf = s_infinity(nf)
    eye = np.eye(pg.n)
    uni = np.linalg.norm(smat @ np.conj(np.swapaxes(smat, 1, 2)) - eye, axis=(1, 2))
    sym = np.linalg.norm(smat[rev] - np.conj(np.swapaxes(smat, 1, 2)), axis=(1, 2))
    return ScatteringTable(
        kgrid=kg, J=jmat, S=smat, S_inf=s_inf, normal_form=nf,
        potential_digest=pg.digest(),
        unitarity_residual=float(uni.max()),
        symmetry_residual=float(sym.max()),
    )


def scattering_from_jost(jmat: np.ndarray, rev: np.ndarray) -> np.ndarray:
    """S(k) = -J(-k) J(k)^{-1} on a symmetric grid; J must be invertible."""
    try:
        xt = np.linalg.solve(np.swapaxes(jmat, 1, 2), np.swapaxes(jmat[rev], 1, 2))
    except np.linalg.LinAlgError as exc:
        raise SingularJost("J(k) numerically singular at a real k != 0") from exc
    return -np.swapaxes(xt, 1, 2)


def physical_solution(table: ScatteringTable, traj: JostBatch, edges) -> np.ndarray:
    """Psi(k, x) = f(-k, x) + f(k, x) S(k) on stored trajectory edges.

    Returns (nk, ne, n, n) for the table's k-grid ordering.
    """
    rev = table.kgrid.reversed_indices()
    edges = np.asarray(list(edges), dtype=int)
    cols_f = np.stack([traj.at_edge(e)[0] for e in edges], axis=1)
    return cols_f[rev] + np.einsum("kexy,kyz->kexz", cols_f, table.S, optimize=True)


def free_region_start(pg: PotentialGrid) -> int:
    """First edge index beyond which the stored potential is numerically zero.

    From that edge outward f(k, x) = exp(ikx) I holds exactly for the
    truncated problem, so trajectories need not be stored there.
    """
    sigma, _ = moments(pg)
    edges = pg.edges
    tail = sigma(edges)
    thresh = 1e-12 * max(1.0, float(sigma(np.array(0.0))))
    idx = np.nonzero(tail <= thresh)[0]
    return int(idx[0]) if len(idx) else pg.n_cells
