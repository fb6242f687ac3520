"""Perron-Frobenius data of the off-diagonal two-point kernel."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .kernels import PairIndex, PairKernel


class PerronError(RuntimeError):
    def __init__(self, msg, bracket=None):
        super().__init__(msg)
        self.bracket = bracket


@dataclass
class SpectralData:
    rho: float
    kappa: np.ndarray | None
    theta: np.ndarray | None
    kappa_star: np.ndarray | None
    irreducible: bool
    primitive: bool
    period: int
    normalized: bool = False
    kappa_unique: bool = True
    notes: list[str] = field(default_factory=list)

    def to_dict(self, index: PairIndex | None = None, states=None) -> dict:
        out = {
            "rho": self.rho,
            "two_rho": 2 * self.rho,
            "irreducible": self.irreducible,
            "primitive": self.primitive,
            "period": self.period,
            "normalized": self.normalized,
            "kappa_unique": self.kappa_unique,
            "notes": list(self.notes),
        }
        if self.kappa is not None:
            if index is not None and states is not None:
                labels = index.labels(states)
                off = index.off_diagonal
                out["kappa"] = {labels[k]: float(v) for k, v in zip(off, self.kappa)}
                out["theta"] = {labels[k]: float(v) for k, v in zip(off, self.theta)}
                out["kappa_star"] = {labels[k]: float(v)
                                     for k, v in enumerate(self.kappa_star.ravel())}
            else:
                out["kappa"] = self.kappa.tolist()
                out["theta"] = self.theta.tolist()
                out["kappa_star"] = self.kappa_star.tolist()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=1)


def _classes(A: np.ndarray):
    """Strongly connected classes of the support digraph, with their labels."""
    ncomp, labels = connected_components(csr_matrix(A > 0), directed=True, connection="strong")
    return [np.flatnonzero(labels == c) for c in range(ncomp)], labels


def _class_period(A: np.ndarray, members: np.ndarray) -> int:
    """gcd of cycle lengths inside an irreducible class (0 if it has no edges)."""
    sub = A[np.ix_(members, members)] > 0
    level = np.full(len(members), -1)
    level[0] = 0
    queue = deque([0])
    p = 0
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(sub[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
            else:
                p = gcd(p, int(level[u] + 1 - level[v]))
    return p


def _power_root(B: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray]:
    """Spectral radius of an irreducible nonnegative ``B`` with positive diagonal.

    Uses Collatz-Wielandt bounds ``min(Bx/x) <= r <= max(Bx/x)`` on the
    power iterates and stops once the bracket is narrower than ``tol``
    relative to ``max(1, r)``.  The start vector is the dense eigenvector,
    so the bracket usually closes within a few steps.
    """
    vals, vecs = np.linalg.eig(B)
    x = np.abs(vecs[:, np.argmax(vals.real)].real)
    x = np.maximum(x / x.sum(), np.finfo(float).tiny) if x.sum() > 0 else np.ones(len(B))
    lo, hi = 0.0, np.inf
    for _ in range(max_iter):
        y = B @ x
        with np.errstate(over="ignore"):
            ratio = y / x
        lo, hi = max(lo, ratio.min()), min(hi, ratio.max())
        if hi - lo <= tol * max(1.0, hi):
            return 0.5 * (lo + hi), y / y.sum()
        x = y / y.sum()
    raise PerronError(f"power iteration did not converge in {max_iter} steps", (lo, hi))


def _class_root(sub: np.ndarray, tol: float, max_iter: int) -> float:
    """Perron root of one irreducible class, computed on ``sub / c + I`` with
    ``c`` its largest row sum so the shift matches the scale of the class."""
    c = sub.sum(axis=1).max()
    try:
        r, _ = _power_root(sub / c + np.eye(len(sub)), tol, max_iter)
    except PerronError as exc:
        lo, hi = exc.bracket
        raise PerronError(str(exc), ((lo - 1.0) * c, (hi - 1.0) * c)) from None
    return (r - 1.0) * c


def perron_root(Pminus, tol: float = 1e-13, max_iter: int = 200_000) -> float:
    """Spectral radius of a nonnegative matrix (0 for the empty matrix).

    Each strongly connected class is handled separately on a shifted copy, where
    power iteration cannot stall on periodicity; the largest root wins.
    """
    A = np.asarray(Pminus, dtype=float)
    if A.size == 0:
        return 0.0
    if (A < 0).any():
        raise ValueError("matrix has negative entries")
    rho = 0.0
    for members in _classes(A)[0]:
        sub = A[np.ix_(members, members)]
        if not (sub > 0).any():
            continue
        rho = max(rho, _class_root(sub, tol, max_iter))
    return rho


def structure_flags(Pminus) -> tuple[bool, bool, int]:
    """(irreducible, primitive, period) of the support digraph.

    The empty matrix and a single class without edges count as reducible
    with period 1.
    """
    A = np.asarray(Pminus, dtype=float)
    if A.size == 0:
        return False, False, 1
    classes, _ = _classes(A)
    if len(classes) != 1:
        return False, False, 1
    period = _class_period(A, classes[0])
    if period == 0:
        return False, False, 1
    return True, period == 1, period


def _reach(adj: np.ndarray, start: np.ndarray) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    frontier = list(start)
    while frontier:
        nxt = np.flatnonzero(adj[frontier].any(axis=0) & ~seen)
        seen[nxt] = True
        frontier = list(nxt)
    return seen


def _null_vector(M: np.ndarray) -> np.ndarray:
    """Solve ``M v = 0`` with ``sum(v) = 1`` in the least-squares sense."""
    n = M.shape[0]
    aug = np.vstack([M, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    v, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return v


def _left_vector(A: np.ndarray, rho: float, tol: float, max_iter: int):
    """Nonnegative ``v`` with ``v A = rho v``.

    Built from every dominant class that cannot reach another dominant
    class, each extended to the classes downstream of it.  Returns the
    vector and the number of classes used (more than one means the choice
    is not canonical).
    """
    n = A.shape[0]
    classes, labels = _classes(A)
    adj = A > 0
    roots = []
    for members in classes:
        sub = A[np.ix_(members, members)]
        r = 0.0
        if (sub > 0).any():
            r = _class_root(sub, tol, max_iter)
        roots.append(r)
    scale = max(1.0, rho)
    dominant = [c for c, r in enumerate(roots) if abs(r - rho) <= 1e3 * tol * scale]
    chosen = []
    for c in dominant:
        down = _reach(adj, classes[c])
        if not any(down[classes[d][0]] for d in dominant if d != c):
            chosen.append(c)
    total = np.zeros(n)
    for c in chosen:
        down = np.flatnonzero(_reach(adj, classes[c]))
        M = (A[np.ix_(down, down)] - rho * np.eye(len(down))).T
        v = _null_vector(M)
        v = np.clip(v, 0.0, None)
        total[down] += v / v.sum()
    return total, len(chosen)


def eigenvectors(Pminus, mu, index: PairIndex | None = None, rho: float | None = None,
                 tol: float = 1e-13, max_iter: int = 200_000):
    """Perron vectors ``(kappa, theta, kappa_star, info)``.

    ``kappa`` is the left vector, symmetrised under the pair swap; ``theta``
    the right vector.  Scaling: ``sum theta mu mu = 1`` over off-diagonal
    pairs, then ``sum theta kappa = 1``.  ``info`` carries ``normalized`` and
    ``kappa_unique`` flags.
    """
    A = np.asarray(Pminus, dtype=float)
    mu = np.asarray(mu, dtype=float)
    s = len(mu)
    index = index or PairIndex(s)
    rho = perron_root(A, tol, max_iter) if rho is None else rho
    if rho <= 0:
        raise PerronError("no Perron eigenvector: rho = 0")
    kappa, nk = _left_vector(A, rho, tol, max_iter)
    theta, nt = _left_vector(A.T, rho, tol, max_iter)
    swap = index.off_swap()
    kappa = 0.5 * (kappa + kappa[swap])

    off = index.off_diagonal
    xs, ys = np.divmod(off, s)
    mumu = mu[xs] * mu[ys]
    theta = theta / (theta @ mumu)
    overlap = theta @ kappa
    normalized = overlap > 0
    if normalized:
        kappa = kappa / overlap
    else:
        kappa = kappa / kappa.sum()

    star = np.zeros((s, s))
    star[xs, ys] = kappa
    np.fill_diagonal(star, -star.sum(axis=1))
    return kappa, theta, star, {"normalized": bool(normalized),
                                "kappa_unique": nk == 1 and nt == 1}


def analyze(kernel: PairKernel, mu, tol: float = 1e-13) -> SpectralData:
    """Collect Perron root, flags and (when rho > 0) the eigenvectors."""
    A = kernel.Pminus
    rho = perron_root(A, tol)
    irreducible, primitive, period = structure_flags(A)
    notes = []
    if rho > 1 + 1e-12:
        raise PerronError(f"rho = {rho} exceeds 1 for a substochastic matrix")
    if rho <= 0:
        return SpectralData(rho, None, None, None, irreducible, primitive, period,
                            notes=["rho = 0: no Perron eigenvector"])
    kappa, theta, star, info = eigenvectors(A, mu, kernel.index, rho, tol)
    if not info["kappa_unique"]:
        notes.append("reducible P(-): kappa is one symmetric choice among several")
    if not info["normalized"]:
        notes.append("theta and kappa have disjoint supports; kappa scaled to unit sum")
    return SpectralData(rho, kappa, theta, star, irreducible, primitive, period,
                        normalized=info["normalized"], kappa_unique=info["kappa_unique"],
                        notes=notes)


def check_con_limit(Pminus, spectral: SpectralData, n: int) -> float:
    """``max |rho^-n P(-)^n - theta kappa^T|`` for a primitive ``P(-)``."""
    if not spectral.primitive or spectral.rho <= 0:
        raise ValueError("the rank-one limit needs a primitive P(-) with rho > 0")
    A = np.asarray(Pminus, dtype=float) / spectral.rho
    Mn = np.linalg.matrix_power(A, n)
    return float(np.abs(Mn - np.outer(spectral.theta, spectral.kappa)).max())


def two_rho_boundedness_probe(Pminus, n_max: int) -> tuple[float, int]:
    """Running max over ``n <= n_max`` of the row-sum norm of ``(2 P(-))^n``.

    Returns the maximum and the first ``n`` attaining it.
    """
    A = 2.0 * np.asarray(Pminus, dtype=float)
    if A.size == 0:
        return 0.0, 0
    M = np.eye(A.shape[0])
    best, arg = 1.0, 0
    for n in range(1, n_max + 1):
        M = M @ A
        val = float(np.abs(M).sum(axis=1).max())
        if val > best:
            best, arg = val, n
    return best, arg
