"""One- and two-point transition kernels and the two-point map.

Pairs ``(x, x')`` are flattened to ``x * s + x'``.  Measures on pairs are
kept as ``(s, s)`` arrays; ``.ravel()`` gives the flat row-vector form used
against the ``(s*s, s*s)`` kernel matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import RtpModel


class ConsistencyError(RuntimeError):
    """An internal invariant (e.g. marginal preservation) was violated."""


@dataclass(frozen=True)
class PairIndex:
    s: int

    @property
    def size(self) -> int:
        return self.s * self.s

    @property
    def diagonal(self) -> np.ndarray:
        return np.arange(self.s) * (self.s + 1)

    @property
    def off_diagonal(self) -> np.ndarray:
        flat = np.arange(self.size)
        return flat[flat // self.s != flat % self.s]

    def pair(self, k: int) -> tuple[int, int]:
        return divmod(int(k), self.s)

    def swap(self, k):
        x, y = np.divmod(k, self.s)
        return y * self.s + x

    def off_swap(self) -> np.ndarray:
        """Swap involution expressed on positions within ``off_diagonal``."""
        off = self.off_diagonal
        pos = np.empty(self.size, dtype=np.int64)
        pos[off] = np.arange(len(off))
        return pos[self.swap(off)]

    def labels(self, states) -> list[str]:
        return [f"({states[i // self.s]},{states[i % self.s]})" for i in range(self.size)]


@dataclass(frozen=True)
class PairKernel:
    index: PairIndex
    P2: np.ndarray
    Pminus: np.ndarray


def one_point_kernel(model: RtpModel) -> np.ndarray:
    """``P[x0, y] = sum_{x1,z} mu(x1) nu(z) [phi(x0,x1,z) = y]``."""
    s = model.s
    P = np.zeros((s, s))
    w = model.mu[:, None] * model.nu[None, :]
    for x0 in range(s):
        P[x0] = np.bincount(model.phi[x0].ravel(), weights=w.ravel(), minlength=s)
    return P


def two_point_kernel(model: RtpModel) -> PairKernel:
    s = model.s
    idx = PairIndex(s)
    w = model.mu[:, None] * model.nu[None, :]
    P2 = np.zeros((s * s, s * s))
    for x0 in range(s):
        for x0p in range(s):
            target = model.phi[x0] * s + model.phi[x0p]
            P2[x0 * s + x0p] = np.bincount(target.ravel(), weights=w.ravel(), minlength=s * s)
    off = idx.off_diagonal
    return PairKernel(idx, P2, P2[np.ix_(off, off)].copy())


def _one_hot(model: RtpModel) -> np.ndarray:
    """``H[z, x0*s + x1, y] = [phi(x0, x1, z) = y]``."""
    s, e = model.s, model.e
    H = np.zeros((e, s * s, s))
    flat = model.phi.reshape(s * s, e)
    rows = np.arange(s * s)
    for z in range(e):
        H[z, rows, flat[:, z]] = 1.0
    return H


def apply_T2(model: RtpModel, lam0, lam1) -> np.ndarray:
    """Image of ``lam0 x lam1 x nu`` under the two-point map (bilinear, signed ok).

    ``lam0`` and ``lam1`` are ``(s, s)`` arrays indexed ``[x, x']``.
    """
    s = model.s
    lam0 = np.asarray(lam0)
    lam1 = np.asarray(lam1)
    # K[(x0,x1), (x0',x1')] = lam0[x0,x0'] * lam1[x1,x1']
    K = np.einsum("ab,cd->acbd", lam0, lam1).reshape(s * s, s * s)
    H = _one_hot(model)
    out = np.zeros((s, s), dtype=np.result_type(lam0, lam1, float))
    for z in range(model.e):
        if model.nu[z] == 0:
            continue
        out += model.nu[z] * (H[z].T @ K @ H[z])
    return out


def diagonal_coupling(mu) -> np.ndarray:
    return np.diag(np.asarray(mu, dtype=float))


def product_coupling(mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    return np.outer(mu, mu)


def off_diagonal_mass(lam) -> float:
    lam = np.asarray(lam)
    # summing the off-diagonal entries directly avoids cancellation near the diagonal
    return float(lam.sum(where=~np.eye(lam.shape[0], dtype=bool)))


@dataclass
class BivariateTrace:
    masses: list[float]
    terminal: np.ndarray
    decay_ratio: float | None


def decay_ratio(masses, window: int = 5) -> float | None:
    """Geometric mean of the last ``window`` successive ratios ``d[k+1]/d[k]``."""
    d = np.asarray(masses, dtype=float)
    ratios = []
    for k in range(len(d) - 1, 0, -1):
        if d[k - 1] > 0 and d[k] > 0:
            ratios.append(d[k] / d[k - 1])
        if len(ratios) == window:
            break
    if not ratios:
        return None
    return float(np.exp(np.mean(np.log(ratios))))


def bivariate_iterate(model: RtpModel, lam0, n_max: int, tol: float = 0.0,
                      stall: float | None = None) -> BivariateTrace:
    """Iterate ``lam <- T2(lam, lam)`` from a coupling of ``mu`` with itself.

    Stops early once the off-diagonal mass drops below ``tol``, or when it
    changes by less than ``stall`` between steps (if given).

    The one-point map can double mean-zero perturbations of ``mu``, so each
    step rescales rows and columns back onto the marginals after checking
    that the step itself drifted by less than ``1e-8``.
    """
    mu = model.mu
    lam = np.asarray(lam0, dtype=float)
    _check_marginals(lam, mu)
    masses = [off_diagonal_mass(lam)]
    for _ in range(n_max):
        if masses[-1] < tol:
            break
        lam = _project_marginals(apply_T2(model, lam, lam), mu)
        masses.append(off_diagonal_mass(lam))
        if stall is not None and abs(masses[-1] - masses[-2]) < stall:
            break
    return BivariateTrace(masses, lam, decay_ratio(masses))


def _project_marginals(lam, mu):
    _check_marginals(lam, mu)
    rows = lam.sum(axis=1)
    lam = lam * np.divide(mu, rows, out=np.zeros_like(mu), where=rows > 0)[:, None]
    cols = lam.sum(axis=0)
    return lam * np.divide(mu, cols, out=np.zeros_like(mu), where=cols > 0)[None, :]


def _check_marginals(lam, mu, tol: float = 1e-8):
    dev = max(np.abs(lam.sum(axis=1) - mu).max(), np.abs(lam.sum(axis=0) - mu).max())
    if dev > tol:
        raise ConsistencyError(f"coupling marginals drifted from mu by {dev:.3g}")


def pair_function(f, g=None) -> np.ndarray:
    """``h(x, x') = (f(x) - f(x')) (g(x) - g(x')) / 2`` as an ``(s, s)`` array."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    return 0.5 * np.subtract.outer(f, f) * np.subtract.outer(g, g)


def number_form(model: RtpModel, f, n: int, g=None, kernel: PairKernel | None = None) -> float:
    """``2^n (mu x mu) P2^n h`` with ``h`` from :func:`pair_function`.

    With ``g`` omitted this is the quadratic form of the level-n number
    operator at the root observable ``f``.
    """
    kernel = kernel or two_point_kernel(model)
    row = product_coupling(model.mu).ravel()
    for _ in range(n):
        row = row @ kernel.P2
    return float(2.0**n * row @ pair_function(f, g).ravel())


def write_matrix_csv(path, matrix, row_labels, col_labels=None):
    col_labels = row_labels if col_labels is None else col_labels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(col_labels))
        for label, row in zip(row_labels, np.atleast_2d(matrix)):
            w.writerow([label] + [repr(float(v)) for v in row])
