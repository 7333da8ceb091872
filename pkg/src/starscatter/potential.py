"""Matrix potentials on a truncated half-line grid.

Potentials are sampled at cell midpoints and treated as cell-constant, which
pairs with the exact per-cell propagator used downstream.  The truncation at
x_max contributes an error governed by the stored tail weight sigma(x_max);
presets choose x_max so at least 20% of the grid lies beyond the support.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import hashlib

import numpy as np

from .errors import NotHermitian, ParseError, UnknownPreset

HERMITICITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PotentialGrid:
    n: int
    x_max: float
    h: float
    samples: np.ndarray  # (n_cells, n, n) complex, Hermitian per cell

    @property
    def n_cells(self) -> int:
        return self.samples.shape[0]

    @cached_property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.h

    @cached_property
    def edges(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.h

    @cached_property
    def cell_norms(self) -> np.ndarray:
        """Spectral norm |V(x_i)| per cell."""
        if self.n == 1:
            return np.abs(self.samples[:, 0, 0])
        return np.linalg.norm(self.samples, ord=2, axis=(1, 2))

    @cached_property
    def faddeev_norm(self) -> float:
        """sum (1 + x_i) |V(x_i)| h over the grid."""
        return float(np.sum((1.0 + self.midpoints) * self.cell_norms) * self.h)

    @cached_property
    def support_end(self) -> float:
        """Last x beyond which every stored sample is numerically zero."""
        nz = np.nonzero(self.cell_norms > 1e-14 * max(1.0, self.cell_norms.max()))[0]
        if len(nz) == 0:
            return 0.0
        return float((nz[-1] + 1) * self.h)

    def digest(self) -> str:
        hasher = hashlib.sha256()
        hasher.update(np.int64(self.n).tobytes())
        hasher.update(np.float64([self.x_max, self.h]).tobytes())
        hasher.update(np.ascontiguousarray(self.samples).tobytes())
        return hasher.hexdigest()[:16]


def make_grid(samples, x_max: float, h: float) -> PotentialGrid:
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim == 1:
        samples = samples[:, None, None]
    n = samples.shape[1]
    herm = np.linalg.norm(samples - np.conj(np.swapaxes(samples, 1, 2)), axis=(1, 2))
    scale = np.linalg.norm(samples, axis=(1, 2))
    bad = herm > HERMITICITY_TOL * np.maximum(scale, 1e-300)
    if np.any(bad & (scale > 0)):
        i = int(np.nonzero(bad & (scale > 0))[0][0])
        raise NotHermitian(f"sample {i} violates Hermiticity: residual {herm[i]:.2e}")
    return PotentialGrid(n=n, x_max=float(x_max), h=float(h), samples=samples)


def moments(pg: PotentialGrid):
    """Tail weights sigma(x) = int_x^inf |V| and sigma1(x) = int_x^inf y |V(y)| dy.

    Exact for the cell-constant representation; both vanish at x >= x_max.
    Returns two vectorized callables.
    """
    norms = pg.cell_norms
    h = pg.h
    edges = pg.edges
    # cumulative from the right, at cell edges
    sig_edges = np.concatenate([np.cumsum((norms * h)[::-1])[::-1], [0.0]])
    cell_sig1 = norms * 0.5 * (edges[1:] ** 2 - edges[:-1] ** 2)
    sig1_edges = np.concatenate([np.cumsum(cell_sig1[::-1])[::-1], [0.0]])

    def sigma(x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, 0.0, pg.x_max)
        idx = np.minimum((xc / h).astype(int), pg.n_cells - 1)
        partial = (edges[idx + 1] - xc) * norms[idx]
        out = partial + sig_edges[idx + 1]
        return np.where(x >= pg.x_max, 0.0, out)

    def sigma1(x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, 0.0, pg.x_max)
        idx = np.minimum((xc / h).astype(int), pg.n_cells - 1)
        partial = 0.5 * (edges[idx + 1] ** 2 - xc ** 2) * norms[idx]
        out = partial + sig1_edges[idx + 1]
        return np.where(x >= pg.x_max, 0.0, out)

    return sigma, sigma1


DEFAULT_X_MAX = 8.0
DEFAULT_H = 0.02


def preset(name: str, n: int = 1, x_max: float = DEFAULT_X_MAX, h: float = DEFAULT_H,
           **params) -> PotentialGrid:
    """Deterministic preset potentials.

    zero, square_well(depth, width), square_barrier(height, width),
    exp_decay(amp, ell), coupled_channels(g, width) with n = 2.
    """
    name = name.lower()
    n_cells = int(round(x_max / h))
    xs = (np.arange(n_cells) + 0.5) * h
    if name == "zero":
        vals = np.zeros((n_cells, n, n), dtype=complex)
    elif name == "square_well":
        depth = params.pop("depth", -2.0)
        width = params.pop("width", 1.0)
        prof = np.where(xs < width, depth, 0.0)
        vals = prof[:, None, None] * np.eye(n)
    elif name == "square_barrier":
        height = params.pop("height", 2.0)
        width = params.pop("width", 1.0)
        prof = np.where(xs < width, height, 0.0)
        vals = prof[:, None, None] * np.eye(n)
    elif name == "exp_decay":
        amp = params.pop("amp", -1.5)
        ell = params.pop("ell", 0.7)
        prof = amp * np.exp(-xs / ell)
        vals = prof[:, None, None] * np.eye(n)
    elif name == "coupled_channels":
        if n == 1:
            n = 2
        if n != 2:
            raise UnknownPreset("coupled_channels is a two-channel preset")
        g = params.pop("g", 0.5)
        width = params.pop("width", 1.0)
        v_cell = np.array([[0.0, g], [np.conj(g), 0.0]], dtype=complex)
        prof = (xs < width).astype(float)
        vals = prof[:, None, None] * v_cell
    else:
        raise UnknownPreset(f"unknown potential preset {name!r}")
    if params:
        raise UnknownPreset(f"unused parameters for preset {name!r}: {sorted(params)}")
    return make_grid(vals, x_max=x_max, h=h)


# ---------------------------------------------------------------------------
# text format: n, X_max, h, then one line per sample, row-major (re, im) pairs

def save_potential(path, pg: PotentialGrid) -> None:
    lines = [
        "# starscatter potential v1",
        f"n {pg.n}",
        f"X_max {pg.x_max:.17e}",
        f"h {pg.h:.17e}",
        "samples",
    ]
    for cell in pg.samples:
        flat = cell.ravel()
        pairs = " ".join(f"{v.real:.17e} {v.imag:.17e}" for v in flat)
        lines.append(pairs)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_potential(path) -> PotentialGrid:
    header = {}
    rows = []
    in_samples = False
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if in_samples:
                rows.append([float(v) for v in line.split()])
            elif line == "samples":
                in_samples = True
            else:
                key, _, rest = line.partition(" ")
                header[key] = rest
    try:
        n = int(header["n"])
        x_max = float(header["X_max"])
        h = float(header["h"])
        flat = np.array(rows, dtype=float)
        if flat.shape[1] != 2 * n * n:
            raise ValueError(f"expected {2 * n * n} columns, got {flat.shape[1]}")
        samples = (flat[:, 0::2] + 1j * flat[:, 1::2]).reshape(-1, n, n)
    except (KeyError, ValueError, IndexError) as exc:
        raise ParseError(f"malformed potential file {path}: {exc}") from exc
    return make_grid(samples, x_max=x_max, h=h)
