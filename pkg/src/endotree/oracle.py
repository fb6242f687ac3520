"""Exact computations on the finite trees of depth ``n`` by brute force.

The root state is held as a dense tensor over all inputs.  Axis order:
leaves of level ``n`` in lexicographic path order, then the innovations of
levels ``0..n-1`` in breadth-first order (root first).  Heap numbering is
used for vertices: vertex ``v`` has daughters ``2v+1`` and ``2v+2``, so the
breadth-first order and the lexicographic order within a level coincide.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import RtpModel

ENUMERATION_CAP = 10**8
TENSOR_CAP = 2 * 10**7


class ResourceError(RuntimeError):
    """Requested enumeration exceeds the hard budget."""


def assignment_count(model: RtpModel, n: int) -> int:
    return model.s ** (2**n) * model.e ** (2**n - 1)


def _check_budget(model: RtpModel, n: int, cap: int):
    count = assignment_count(model, n)
    if count > cap:
        raise ResourceError(f"level {n} needs {count} assignments (cap {cap})")
    return count


@dataclass(frozen=True)
class TreeAssignment:
    level: int
    leaves: tuple[int, ...]
    innovations: tuple[int, ...]
    states: tuple[int, ...]  # heap order, root first
    weight: float

    @property
    def root(self) -> int:
        return self.states[0]


def propagate(phi, n: int, leaves, innovations) -> list[int]:
    """Fill internal states bottom-up; returns all vertex states in heap order."""
    first_leaf = 2**n - 1
    states = [0] * (2 ** (n + 1) - 1)
    states[first_leaf:] = list(leaves)
    for v in range(first_leaf - 1, -1, -1):
        states[v] = int(phi[states[2 * v + 1], states[2 * v + 2], innovations[v]])
    return states


def enumerate_trees(model: RtpModel, n: int, cap: int = ENUMERATION_CAP):
    """Yield every level-``n`` assignment with its probability weight."""
    _check_budget(model, n, cap)
    nl, ni = 2**n, 2**n - 1
    for leaves in itertools.product(range(model.s), repeat=nl):
        wl = float(np.prod(model.mu[list(leaves)]))
        for eps in itertools.product(range(model.e), repeat=ni):
            w = wl * float(np.prod(model.nu[list(eps)])) if ni else wl
            yield TreeAssignment(n, leaves, eps, tuple(propagate(model.phi, n, leaves, eps)), w)


def root_tensor(model: RtpModel, n: int) -> np.ndarray:
    """Root state as an integer tensor over (leaves..., innovations...)."""
    _check_budget(model, n, TENSOR_CAP)
    nl, ni = 2**n, 2**n - 1
    ndim = nl + ni
    first_leaf = ni

    def axis_values(axis, size):
        shape = [1] * ndim
        shape[axis] = size
        return np.arange(size).reshape(shape)

    states = {}
    for k in range(nl):
        states[first_leaf + k] = axis_values(k, model.s)
    for v in range(first_leaf - 1, -1, -1):
        eps = axis_values(nl + v, model.e)
        states[v] = model.phi[states[2 * v + 1], states[2 * v + 2], eps]
        del states[2 * v + 1], states[2 * v + 2]
    shape = (model.s,) * nl + (model.e,) * ni
    return np.broadcast_to(states[0], shape)


def _weights(model: RtpModel, n: int) -> list[np.ndarray]:
    return [model.mu] * 2**n + [model.nu] * (2**n - 1)


def _integrate(T: np.ndarray, weights, axes=None) -> np.ndarray:
    """Integrate the given axes (all by default) against their weights."""
    axes = range(T.ndim) if axes is None else axes
    for ax in sorted(axes, reverse=True):
        T = np.tensordot(T, weights[ax], axes=([ax], [0]))
    return T


def _leaf_mean(T, w, axis):
    return np.expand_dims(np.tensordot(T, w, axes=([axis], [0])), axis)


def exact_subset_norms(model: RtpModel, f, n: int) -> dict[frozenset, float]:
    """Squared norms of the components of ``f(root)`` in each subset space.

    Keys are frozensets of leaf positions (0-based, lexicographic).
    """
    f = np.asarray(f, dtype=float)
    F = f[root_tensor(model, n)]
    w = _weights(model, n)
    parts = {frozenset(): F}
    for leaf in range(2**n):
        nxt = {}
        for key, T in parts.items():
            mean = np.broadcast_to(_leaf_mean(T, model.mu, leaf), T.shape)
            nxt[key] = mean
            nxt[key | {leaf}] = T - mean
        parts = nxt
    return {key: float(_integrate(T * T, w)) for key, T in parts.items()}


def exact_spectral_measure(model: RtpModel, f, n: int) -> np.ndarray:
    """Masses ``mu_f^(n)(k)`` for ``k = 0..2^n``."""
    masses = np.zeros(2**n + 1)
    for key, val in exact_subset_norms(model, f, n).items():
        masses[len(key)] += val
    return masses


def exact_pgf(model: RtpModel, f, n: int, z):
    masses = exact_spectral_measure(model, f, n)
    return np.polynomial.polynomial.polyval(z, masses)


def conditional_root_law(model: RtpModel, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Root law given each innovation assignment.

    Returns ``(h, w)`` with ``h`` of shape ``(e,)*(2^n-1) + (s,)`` and ``w``
    the matching innovation weights.
    """
    R = root_tensor(model, n)
    nl = 2**n
    onehot = (R[..., None] == np.arange(model.s)).astype(float)
    h = onehot
    for ax in reversed(range(nl)):
        h = np.tensordot(h, model.mu, axes=([ax], [0]))
    w = np.ones(())
    for _ in range(2**n - 1):
        w = np.multiply.outer(w, model.nu)
    return h, w


def exact_kn_residual(model: RtpModel, f, n: int) -> tuple[float, float]:
    """``(||(I - P_Kn) f||^2, (f, A_n f))`` for the root observable ``f``."""
    f = np.asarray(f, dtype=float)
    h, w = conditional_root_law(model, n)
    cond_mean = h @ f
    norm2 = float(model.mu @ (f * f))
    residual = norm2 - float(np.sum(w * cond_mean**2))
    masses = exact_spectral_measure(model, f, n)
    return residual, float(np.arange(len(masses)) @ masses)


def exact_coupling_disagreement(model: RtpModel, n: int) -> float:
    """P(roots differ) for two independent leaf sets sharing the innovations."""
    h, w = conditional_root_law(model, n)
    return float(np.sum(w * (1.0 - np.sum(h * h, axis=-1))))


def exact_qn_square_form(model: RtpModel, Q, rho: float, f, n: int) -> float:
    """``||Q_n f||^2`` with ``Q_n = (2 rho)^-n sum_u Q at leaf u``."""
    f = np.asarray(f, dtype=float)
    F = f[root_tensor(model, n)]
    Q = np.asarray(Q, dtype=float)
    out = np.zeros(F.shape)
    for leaf in range(2**n):
        out += np.moveaxis(np.tensordot(Q, F, axes=([1], [leaf])), 0, leaf)
    out *= (2 * rho) ** -n
    return float(_integrate(out * out, _weights(model, n)))
