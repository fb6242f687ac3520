"""Endogeny verdicts from the Perron root of the off-diagonal pair kernel.

The strict regimes are decided by ``2 rho`` alone.  In the critical band
the verdict needs irreducibility of ``P(-)`` and a positive lower bound
on ``(f, P_Km f) / (f, f)`` over mean-zero root observables; the latter is
the smallest generalised eigenvalue of an innovation-conditioned Gram
matrix, computed by exhaustive enumeration for small ``m``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigh

from .kernels import (PairKernel, bivariate_iterate, product_coupling,
                      two_point_kernel)
from .model import RtpModel
from .oracle import ResourceError
from .spectral import SpectralData, analyze, two_rho_boundedness_probe

SUBCRITICAL, SUPERCRITICAL, CRITICAL = "Subcritical", "Supercritical", "Critical"
ENDOGENOUS = "Endogenous"
NON_ENDOGENOUS = "NonEndogenous"
ENDOGENOUS_CRITICAL = "EndogenousCritical"
INDETERMINATE = "Indeterminate"

GRAM_CAP = 2 * 10**7


@dataclass
class Nondegen1Result:
    resolved: bool
    m: int | None
    epsilon_min: float
    sequence: list[float]


@dataclass
class CriticalEvidence:
    nondegen2: bool
    nondegen1: Nondegen1Result | None
    boundedness_max: float | None = None


@dataclass
class EndogenyVerdict:
    regime: str
    decision: str
    rho: float
    two_rho: float
    critical_evidence: CriticalEvidence | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def decided(self) -> bool:
        return self.decision != INDETERMINATE

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def nondegen2(spectral: SpectralData) -> bool:
    return bool(spectral.irreducible)


def conditional_root_distribution(model: RtpModel, assignment) -> np.ndarray:
    """Root law given innovations on the internal vertices (breadth-first order).

    Leaves are i.i.d. ``mu``; ``len(assignment)`` must be ``2^m - 1``.
    """
    assignment = list(assignment)
    count = len(assignment)
    m = (count + 1).bit_length() - 1
    if 2**m - 1 != count or m < 1:
        raise ValueError("assignment length must be 2^m - 1 with m >= 1")
    hot = _one_hot(model)
    # heap layout: vertex v has daughters 2v+1, 2v+2; leaves follow the internal vertices
    h = [model.mu] * (2 * count + 1)
    for v in range(count - 1, -1, -1):
        h[v] = np.einsum("a,b,aby->y", h[2 * v + 1], h[2 * v + 2], hot[:, :, assignment[v]])
    return h[0]


def _one_hot(model: RtpModel) -> np.ndarray:
    """``H[x0, x1, z, y] = [phi(x0, x1, z) = y]``."""
    return (model.phi[..., None] == np.arange(model.s)).astype(float)


def innovation_root_laws(model: RtpModel, m: int, cap: int = GRAM_CAP):
    """All conditional root laws at depth ``m`` with their probabilities.

    Returns ``(H, W)``: ``H[i]`` is the root law under the i-th innovation
    assignment and ``W[i]`` its weight.
    """
    count = model.e ** (2**m - 1)
    if count * model.s > cap:
        raise ResourceError(f"depth {m} needs {count} innovation assignments (cap {cap // model.s})")
    hot = _one_hot(model)
    H = model.mu[None, :]
    W = np.ones(1)
    for _ in range(m):
        H = np.einsum("ia,jb,abzy->ijzy", H, H, hot).reshape(-1, model.s)
        W = np.multiply.outer(np.multiply.outer(W, W), model.nu).ravel()
    return H, W


def gram_matrix(model: RtpModel, m: int, cap: int = GRAM_CAP) -> np.ndarray:
    """``G[x, y] = sum_eps w(eps) h_eps(x) h_eps(y)``, so that
    ``f^T G f = ||P_Km f||^2`` for root observables."""
    H, W = innovation_root_laws(model, m, cap)
    return (H * W[:, None]).T @ H


def smallest_ratio(model: RtpModel, G: np.ndarray) -> float:
    """Smallest eigenvalue of ``G`` relative to ``diag(mu)`` on mean-zero vectors."""
    if model.s == 1:
        return 1.0
    vals, vecs = eigh(G, np.diag(model.mu))
    # the constant vector is an eigenvector with eigenvalue 1; drop it
    const = np.abs(model.mu @ vecs)
    keep = np.argsort(const)[: model.s - 1]
    return float(vals[keep].min())


def nondegen1(model: RtpModel, m_max: int = 3, tol: float = 1e-10,
              cap: int = GRAM_CAP) -> Nondegen1Result:
    seq = []
    for m in range(1, m_max + 1):
        eps = smallest_ratio(model, gram_matrix(model, m, cap))
        seq.append(eps)
        if eps > tol:
            return Nondegen1Result(True, m, eps, seq)
    return Nondegen1Result(False, None, seq[-1] if seq else 0.0, seq)


@dataclass
class MonteCarloGram:
    m: int
    samples: int
    gram: np.ndarray
    gram_se: np.ndarray
    epsilon_min: float
    epsilon_se: float


def nondegen1_mc(model: RtpModel, m: int, rng, samples: int = 10**5,
                 batches: int = 32) -> MonteCarloGram:
    """Sampled Gram matrix for depths beyond exhaustive enumeration (approximate)."""
    nodes = 2**m - 1
    eps = np.searchsorted(np.cumsum(model.nu), rng.random((samples, nodes)), side="right")
    eps = np.minimum(eps, model.e - 1)
    hot = _one_hot(model)
    level = np.broadcast_to(model.mu, (samples, 2**m, model.s))
    for depth in range(m - 1, -1, -1):
        width = 2**depth
        first = width - 1
        left, right = level[:, 0::2], level[:, 1::2]
        z = eps[:, first:first + width]
        nxt = np.zeros((samples, width, model.s))
        for sym in range(model.e):
            mask = (z == sym)[..., None]
            nxt += mask * np.einsum("kwa,kwb,aby->kwy", left, right, hot[:, :, sym])
        level = nxt
    h = level[:, 0]
    outer = h[:, :, None] * h[:, None, :]
    G = outer.mean(axis=0)
    se = outer.std(axis=0, ddof=1) / np.sqrt(samples)
    per_batch = [smallest_ratio(model, b.mean(axis=0))
                 for b in np.array_split(outer, batches)]
    return MonteCarloGram(m, samples, G, se, smallest_ratio(model, G),
                          float(np.std(per_batch, ddof=1) / np.sqrt(batches)))


def classify(model: RtpModel, spectral: SpectralData | None = None, tol_crit: float = 1e-9,
             m_max: int = 3, kernel: PairKernel | None = None) -> EndogenyVerdict:
    if spectral is None:
        kernel = kernel or two_point_kernel(model)
        spectral = analyze(kernel, model.mu)
    rho = spectral.rho
    two_rho = 2 * rho
    notes = []
    if two_rho < 1 - tol_crit:
        regime, decision = SUBCRITICAL, ENDOGENOUS
    elif two_rho > 1 + tol_crit:
        regime, decision = SUPERCRITICAL, NON_ENDOGENOUS
    else:
        regime, decision = CRITICAL, INDETERMINATE
    if abs(two_rho - 1) <= 1e3 * tol_crit and regime != CRITICAL:
        notes.append(f"2*rho = {two_rho!r} lies close to the critical line")

    evidence = None
    if regime == CRITICAL:
        kernel = kernel or two_point_kernel(model)
        nd2 = nondegen2(spectral)
        nd1 = nondegen1(model, m_max)
        bound, _ = two_rho_boundedness_probe(kernel.Pminus, 64)
        evidence = CriticalEvidence(nd2, nd1, bound)
        if nd2 and nd1.resolved:
            decision = ENDOGENOUS_CRITICAL
        else:
            if not nd2:
                notes.append("P(-) is reducible; the critical-case criterion does not apply")
            if not nd1.resolved:
                notes.append(
                    f"a mean-zero root observable is orthogonal to the innovations up to "
                    f"depth {m_max} (smallest ratio {nd1.epsilon_min:.3g}); if this persists "
                    "at every depth the process is not endogenous")

    if not model.is_symmetric():
        decision = INDETERMINATE
        notes.append("phi is not symmetric; the Perron-root criterion assumes symmetry")
    return EndogenyVerdict(regime, decision, rho, two_rho, evidence, notes)


def random_coupling(mu, rng, iters: int = 10_000, tol: float = 1e-15) -> np.ndarray:
    """Random coupling of ``mu`` with itself (Sinkhorn scaling of a random matrix)."""
    mu = np.asarray(mu, dtype=float)
    K = rng.random((len(mu), len(mu))) + 1e-3
    for _ in range(iters):
        K *= (mu / K.sum(axis=1))[:, None]
        K *= (mu / K.sum(axis=0))[None, :]
        if np.abs(K.sum(axis=1) - mu).max() < tol:
            break
    return K


@dataclass
class ProbeReport:
    terminal_masses: list[float]
    steps: list[int]
    evidence_for_uniqueness: bool
    traces: list[list[float]]


def bivariate_uniqueness_probe(model: RtpModel, starts=None, n: int = 200,
                               tol: float = 1e-8, rng=None,
                               n_random: int = 10) -> ProbeReport:
    """Iterate the two-point recursion from several couplings of ``mu``.

    Default starts: the product coupling plus ``n_random`` random couplings.
    Uniqueness evidence (never proof) iff every run ends below ``tol``.
    """
    if starts is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        starts = [product_coupling(model.mu)]
        starts += [random_coupling(model.mu, rng) for _ in range(n_random)]
    traces, terminal, steps = [], [], []
    for lam in starts:
        tr = bivariate_iterate(model, lam, n, tol=tol, stall=1e-16)
        traces.append(tr.masses)
        terminal.append(tr.masses[-1])
        steps.append(len(tr.masses) - 1)
    return ProbeReport(terminal, steps, all(d < tol for d in terminal), traces)

