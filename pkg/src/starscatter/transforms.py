"""Fourier machinery shared by the kernel and scattering tables.

Wavenumber grids are symmetric half-offset grids k_j = +-(j + 1/2) dk, which
avoid the exceptional point k = 0.  When dk = 2 pi / (N h) the grid pairs with
the spatial step h so the inverse transform onto s = m h is a single FFT.

Slowly decaying 1/k tails (a jump of the transformed function at a known
location) are handled by fitting a one-sided exponential model on the
high-|k| band and transforming the residual only; the model transforms in
closed form.  This removes the Gibbs error that a plain windowed FFT leaves
at the jump.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np

TAIL_GAMMA = 1.0          # decay rate of the exponential tail model
TAIL_BAND_FRAC = 2.0 / 3  # fit the model on |k| >= frac * k_max
TAPER_FRAC = 0.2          # cosine-squared taper on the top fraction of the band


@dataclass(frozen=True)
class KGrid:
    """Symmetric half-offset wavenumber grid."""

    dk: float
    m_half: int

    @cached_property
    def ks(self) -> np.ndarray:
        j = np.arange(-self.m_half, self.m_half)
        return (j + 0.5) * self.dk

    @property
    def nk(self) -> int:
        return 2 * self.m_half

    @property
    def k_max(self) -> float:
        return self.m_half * self.dk

    def reversed_indices(self) -> np.ndarray:
        """Index map sending the sample at k to the sample at -k."""
        return np.arange(self.nk)[::-1]


def symmetric_kgrid(k_max: float, dk: float) -> KGrid:
    m_half = max(1, int(round(k_max / dk)))
    return KGrid(dk=dk, m_half=m_half)


def kernel_kgrid(h: float, y_extent: float, k_cap: float = 200.0) -> KGrid:
    """Grid matched to spatial step h with dk small enough to trust |y| <= y_extent.

    Uses N = 2^p samples with dk = 2 pi / (N h); the grid then spans
    (-pi/h, pi/h), capped at k_cap.
    """
    n_min = max(64, int(math.ceil(8.0 * y_extent / h)))
    n_fft = 1 << int(math.ceil(math.log2(n_min)))
    dk = 2.0 * np.pi / (n_fft * h)
    while n_fft * dk / 2.0 > k_cap and n_fft > n_min:
        n_fft //= 2
        dk = 2.0 * np.pi / (n_fft * h)
    return KGrid(dk=dk, m_half=n_fft // 2)


def halfoffset_transform(values: np.ndarray, kg: KGrid, h: float, sign: int):
    """(dk / 2 pi) sum_j values(k_j) exp(sign * i k_j m h) for m = -N/2 .. N/2 - 1.

    ``values`` has the k axis first; extra trailing axes pass through.
    Returns (out, m_index) with out ordered by ascending m.
    Requires dk * h = 2 pi / N, which kernel_kgrid guarantees.
    """
    n = kg.nk
    if abs(kg.dk * h * n - 2.0 * np.pi) > 1e-9:
        raise ValueError("k-grid is not matched to the spatial step")
    ms = np.arange(-n // 2, n // 2)
    # k_j m h = (j - N/2 + 1/2)(2 pi m / N)
    if sign == -1:
        core = np.fft.fft(values, axis=0)
    else:
        core = np.fft.ifft(values, axis=0) * n
    phase = np.exp(sign * 1j * np.pi * ms * (1.0 / n - 1.0))
    idx = np.mod(ms, n)
    out = core[idx]
    shape = (n,) + (1,) * (values.ndim - 1)
    out = out * phase.reshape(shape)
    return out * (kg.dk / (2.0 * np.pi)), ms


def taper_window(kg: KGrid, frac: float = TAPER_FRAC) -> np.ndarray:
    """Cosine-squared roll-off over the top ``frac`` of the band."""
    ks = np.abs(kg.ks)
    a = (1.0 - frac) * kg.k_max
    w = np.ones_like(ks)
    m = ks > a
    w[m] = np.cos(0.5 * np.pi * (ks[m] - a) / (kg.k_max - a)) ** 2
    return w


def _tail_basis(ks: np.ndarray, gamma: float, side: int, order: int,
                sign: int) -> np.ndarray:
    """Model columns for a one-sided exponential branch.

    Under the inversion g(s) = (1/2pi) int ghat(k) exp(sign i k s) dk, the
    branch exp(-gamma s) 1_{s>0} has ghat = 1/(gamma + sign i k); side=-1 is
    the mirror branch on s < 0.
    """
    base = 1.0 / (gamma + 1j * sign * side * ks)
    return np.stack([base ** (m + 1) for m in range(order)], axis=1)


def fit_tail_model(ghat: np.ndarray, kg: KGrid, *, sign: int, sides=(1,),
                   gamma: float = TAIL_GAMMA,
                   order: int = 2, band_frac: float = TAIL_BAND_FRAC):
    """Least-squares fit of exponential tail models on the high-|k| band.

    ghat: (nk, ...) samples; sign is the inversion convention the table will
    be built with.  Returns (coeffs, model) where coeffs has shape
    (n_basis, ...) and model is the fitted tail evaluated on the full grid.
    """
    ks = kg.ks
    band = np.abs(ks) >= band_frac * kg.k_max
    basis_cols = [
        _tail_basis(ks, gamma, side, order, sign) for side in sides
    ]
    basis = np.concatenate(basis_cols, axis=1)          # (nk, nb)
    bb = basis[band]
    flat = ghat.reshape(kg.nk, -1)
    coeffs, *_ = np.linalg.lstsq(bb, flat[band], rcond=None)
    model = basis @ coeffs
    extra = ghat.shape[1:]
    return coeffs.reshape((basis.shape[1],) + extra), model.reshape(ghat.shape)


def eval_tail_model(coeffs: np.ndarray, s: np.ndarray, *, sides=(1,),
                    gamma: float = TAIL_GAMMA, order: int = 2,
                    average_at_zero: bool = False) -> np.ndarray:
    """Spatial-side model: sum_m c_m s^m exp(-gamma s) / m! on each one-sided branch.

    With average_at_zero the sample at s = 0 carries the mean of the one-sided
    limits, which makes plain Riemann sums across the jump trapezoid-accurate.
    """
    s = np.asarray(s, dtype=float)
    extra = coeffs.shape[1:]
    out = np.zeros(s.shape + extra, dtype=complex)
    i = 0
    for side in sides:
        if average_at_zero:
            mask = np.where(s == 0, 0.5, (s >= 0. if side == 1 else s < 0.))
        else:
            mask = ((s >= 0) if side == 1 else (s < 0)).astype(float)
        u = np.abs(s)
        for m in range(order):
            prof = mask * u ** m * np.exp(-gamma * u) / math.factorial(m)
            out += prof.reshape(s.shape + (1,) * len(extra)) * coeffs[i]
            i += 1
    return out


def fresnel_kernel(t: float, z: np.ndarray) -> np.ndarray:
    """exp(i z^2 / 4t) / sqrt(4 pi i t); valid for either sign of t != 0."""
    z = np.asarray(z, dtype=float)
    return np.exp(1j * z * z / (4.0 * t)) / np.sqrt(4j * np.pi * t)


def simpson_weights(n_nodes: int) -> np.ndarray:
    """Composite Simpson weights for an odd number of equispaced nodes (unit step)."""
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ValueError("Simpson rule needs an odd number of nodes >= 3")
    w = np.ones(n_nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def loglog_fit(ts, values):
    """Least-squares slope/intercept of log(values) vs log(t) with R^2 and stderr."""
    lt = np.log(np.asarray(ts, dtype=float))
    lv = np.log(np.asarray(values, dtype=float))
    n = len(lt)
    design = np.stack([lt, np.ones(n)], axis=1)
    coef, res, *_ = np.linalg.lstsq(design, lv, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    fitted = design @ coef
    ss_res = float(np.sum((lv - fitted) ** 2))
    ss_tot = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    if n > 2:
        var = ss_res / (n - 2) / float(np.sum((lt - lt.mean()) ** 2))
        stderr = math.sqrt(max(var, 0.0))
    else:
        stderr = float("nan")
    return slope, intercept, r2, stderr
