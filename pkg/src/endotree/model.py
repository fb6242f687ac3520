"""Finite recursive tree process models.

A model is the tuple (S, E, mu, nu, phi): finite state and innovation
alphabets, a probability vector on each, and a recursion table
``phi[x0, x1, z]`` holding the index of the output state.  ``mu`` must be
invariant, i.e. the image of ``mu x mu x nu`` under ``phi`` is ``mu``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

MASS_TOL = 1e-12
INVARIANCE_TOL = 1e-10


class ModelError(ValueError):
    """Malformed model input (schema, labels, or an incomplete phi table)."""


@dataclass(frozen=True, eq=False)
class RtpModel:
    states: tuple[str, ...]
    innovations: tuple[str, ...]
    mu: np.ndarray
    nu: np.ndarray
    phi: np.ndarray
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        nu = np.array(self.nu, dtype=float)
        phi = np.array(self.phi, dtype=np.int64)
        s, e = len(self.states), len(self.innovations)
        if s < 1 or e < 1:
            raise ModelError("need at least one state and one innovation")
        if len(set(self.states)) != s:
            raise ModelError("duplicate state labels")
        if len(set(self.innovations)) != e:
            raise ModelError("duplicate innovation labels")
        if mu.shape != (s,) or nu.shape != (e,):
            raise ModelError("mu/nu length does not match the alphabets")
        if phi.shape != (s, s, e):
            raise ModelError(f"phi must have shape {(s, s, e)}, got {phi.shape}")
        if phi.size and (phi.min() < 0 or phi.max() >= s):
            raise ModelError("phi has a target outside the state set")
        for arr in (mu, nu, phi):
            arr.flags.writeable = False
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "innovations", tuple(self.innovations))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "phi", phi)

    @property
    def s(self) -> int:
        return len(self.states)

    @property
    def e(self) -> int:
        return len(self.innovations)

    def __eq__(self, other):
        if not isinstance(other, RtpModel):
            return NotImplemented
        return (
            self.states == other.states
            and self.innovations == other.innovations
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.nu, other.nu)
            and np.array_equal(self.phi, other.phi)
        )

    __hash__ = None

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.phi, self.phi.transpose(1, 0, 2)))

    def relabel(self, state_perm, innovation_perm) -> "RtpModel":
        """Return the same model with states/innovations listed in a new order.

        ``state_perm[i]`` is the old index of the new i-th state.
        """
        sp = np.asarray(state_perm)
        ip = np.asarray(innovation_perm)
        inv = np.empty_like(sp)
        inv[sp] = np.arange(len(sp))
        phi = inv[self.phi[np.ix_(sp, sp, ip)]]
        return RtpModel(
            tuple(self.states[i] for i in sp),
            tuple(self.innovations[i] for i in ip),
            self.mu[sp],
            self.nu[ip],
            phi,
        )


@dataclass
class ValidationReport:
    ok: bool
    symmetric: bool
    invariance_residual: float
    trimmed_states: list[str]
    messages: list[str]
    mass_residual: float = 0.0
    model: RtpModel | None = None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "symmetric": self.symmetric,
            "invariance_residual": self.invariance_residual,
            "mass_residual": self.mass_residual,
            "trimmed_states": list(self.trimmed_states),
            "messages": list(self.messages),
        }


def pushforward(phi: np.ndarray, a: np.ndarray, b: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Image of ``a x b x nu`` under ``phi``."""
    s = phi.shape[0]
    w = a[:, None, None] * b[None, :, None] * nu[None, None, :]
    return np.bincount(phi.ravel(), weights=w.ravel(), minlength=s)


def _trim(model: RtpModel, keep: np.ndarray) -> tuple[RtpModel, list[str]]:
    """Drop states outside ``keep`` and innovations that would leave the kept set."""
    msgs = []
    sub = model.phi[np.ix_(keep, keep, np.arange(model.e))]
    kept_set = np.zeros(model.s, dtype=bool)
    kept_set[keep] = True
    z_ok = kept_set[sub].all(axis=(0, 1))
    if not z_ok.all():
        dropped = [model.innovations[z] for z in np.flatnonzero(~z_ok)]
        if np.any(model.nu[~z_ok] > 0):
            raise ModelError("phi maps positive-mass inputs to zero-mass states")
        msgs.append(f"dropped zero-mass innovations {dropped} that target trimmed states")
    remap = np.full(model.s, -1)
    remap[keep] = np.arange(len(keep))
    trimmed = RtpModel(
        tuple(model.states[i] for i in keep),
        tuple(model.innovations[z] for z in np.flatnonzero(z_ok)),
        model.mu[keep],
        model.nu[z_ok],
        remap[sub[:, :, z_ok]],
        notes=model.notes,
    )
    return trimmed, msgs


def validate(model: RtpModel, mass_tol: float = MASS_TOL,
             invariance_tol: float = INVARIANCE_TOL) -> ValidationReport:
    """Check the measures and invariance of ``model``, trimming zero-mass states.

    The trimmed model is attached as ``report.model`` when trimming succeeds.
    A non-symmetric phi only produces a warning.
    """
    messages = list(model.notes)
    ok = True
    mass_residual = max(abs(model.mu.sum() - 1.0), abs(model.nu.sum() - 1.0))
    if (model.mu < 0).any() or (model.nu < 0).any():
        ok = False
        messages.append("negative probability entry")
    if mass_residual > mass_tol:
        ok = False
        messages.append(f"mu/nu do not sum to 1 (residual {mass_residual:.3g})")

    image = pushforward(model.phi, model.mu, model.mu, model.nu)
    residual = float(np.abs(image - model.mu).max())
    if residual > invariance_tol:
        ok = False
        messages.append(f"mu is not invariant under phi (residual {residual:.3g})")

    trimmed_states: list[str] = []
    out = model
    keep = np.flatnonzero(model.mu > 0)
    if ok and len(keep) < model.s:
        trimmed_states = [model.states[i] for i in range(model.s) if model.mu[i] <= 0]
        try:
            out, msgs = _trim(model, keep)
            messages.extend(msgs)
            messages.append(f"trimmed zero-mass states {trimmed_states}")
        except ModelError as exc:
            ok = False
            messages.append(str(exc))
            out = model

    symmetric = model.is_symmetric()
    if not symmetric:
        messages.append("warning: phi is not symmetric in its first two arguments")
    return ValidationReport(
        ok=ok,
        symmetric=symmetric,
        invariance_residual=residual,
        trimmed_states=trimmed_states,
        messages=messages,
        mass_residual=float(mass_residual),
        model=out if ok else None,
    )


def checked(model: RtpModel) -> RtpModel:
    """Validated, trimmed model; raises ModelError when validation fails."""
    report = validate(model)
    if not report.ok:
        raise ModelError("; ".join(report.messages))
    return report.model


def find_invariant(phi, nu, max_iter: int = 10_000, tol: float = 1e-13, start=None):
    """Iterate ``mu <- T(mu, mu)`` from the uniform vector.

    The second half of the budget uses the damped map ``(mu + T(mu, mu)) / 2``,
    which has the same fixed points but breaks periodic orbits.
    Returns ``(mu, residual)``; raises RuntimeError if ``tol`` is not reached.
    A failure says nothing about existence of an invariant measure.
    """
    phi = np.asarray(phi)
    nu = np.asarray(nu, dtype=float)
    nu = nu / nu.sum()
    s = phi.shape[0]
    mu = np.full(s, 1.0 / s) if start is None else np.asarray(start, dtype=float)
    residual = np.inf
    for k in range(max_iter):
        image = pushforward(phi, mu, mu, nu)
        image /= image.sum()
        residual = float(np.abs(image - mu).max())
        if residual <= tol:
            return image, residual
        mu = image if 2 * k < max_iter else 0.5 * (mu + image)
    raise RuntimeError(f"no invariant measure found in {max_iter} iterations "
                       f"(last residual {residual:.3g})")


def _table(states, innovations, rule):
    idx = {x: i for i, x in enumerate(states)}
    return np.array([[[idx[rule(a, b, z)] for z in innovations]
                      for b in states] for a in states])


BUILTINS = ("SELECT", "CONST", "PURE-INNOVATION", "XOR", "ANDOR", "ANDOR-NOISE")


def builtin(name: str) -> RtpModel:
    name = name.upper()
    if name == "SELECT":
        S, E = ("-1", "+1"), ("0", "1")
        phi = _table(S, E, lambda a, b, z: a if z == "0" else b)
        return RtpModel(S, E, [0.5, 0.5], [0.5, 0.5], phi)
    if name == "CONST":
        # the second state carries no mass and is removed by validate()
        S, E = ("c", "d"), ("0", "1")
        return RtpModel(S, E, [1.0, 0.0], [0.5, 0.5], _table(S, E, lambda a, b, z: "c"))
    if name == "PURE-INNOVATION":
        S = E = ("a", "b", "c")
        w = [0.5, 0.25, 0.25]
        return RtpModel(S, E, w, w, _table(S, E, lambda a, b, z: z))
    if name == "XOR":
        S = E = ("-1", "+1")
        sign = {"-1": -1, "+1": 1}
        phi = _table(S, E, lambda a, b, z: "+1" if sign[a] * sign[b] * sign[z] > 0 else "-1")
        return RtpModel(S, E, [0.5, 0.5], [0.5, 0.5], phi)
    if name == "ANDOR":
        S, E = ("0", "1"), ("and", "or")
        phi = _table(S, E, lambda a, b, z: min(a, b) if z == "and" else max(a, b))
        return RtpModel(S, E, [0.5, 0.5], [0.5, 0.5], phi)
    if name == "ANDOR-NOISE":
        S, E = ("0", "1"), ("and", "or", "fresh0", "fresh1")
        rules = {
            "and": lambda a, b: min(a, b),
            "or": lambda a, b: max(a, b),
            "fresh0": lambda a, b: "0",
            "fresh1": lambda a, b: "1",
        }
        phi = _table(S, E, lambda a, b, z: rules[z](a, b))
        return RtpModel(S, E, [0.5, 0.5], [0.25] * 4, phi)
    raise ModelError(f"unknown builtin model {name!r}; choose from {', '.join(BUILTINS)}")


# -- file format -----------------------------------------------------------

def _parse_prob(value, where: str, notes: list[str]) -> float:
    if isinstance(value, bool):
        raise ModelError(f"{where}: boolean is not a probability")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            frac = Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ModelError(f"{where}: cannot parse {value!r}") from exc
        x = float(frac)
        if Fraction(x) != frac:
            notes.append(f"{where}: {value!r} rounded to nearest double {x!r}")
        return x
    raise ModelError(f"{where}: expected number or rational string, got {type(value).__name__}")


def from_dict(data: dict) -> RtpModel:
    if not isinstance(data, dict):
        raise ModelError("model file must hold a JSON object")
    missing = {"states", "innovations", "mu", "nu", "phi"} - set(data)
    if missing:
        raise ModelError(f"missing keys: {sorted(missing)}")
    states = data["states"]
    innovations = data["innovations"]
    for key, labels in (("states", states), ("innovations", innovations)):
        if not isinstance(labels, list) or not all(isinstance(v, str) for v in labels):
            raise ModelError(f"{key} must be an array of strings")
        if len(set(labels)) != len(labels):
            raise ModelError(f"duplicate labels in {key}")
    notes: list[str] = []
    if not isinstance(data["mu"], list) or not isinstance(data["nu"], list):
        raise ModelError("mu and nu must be arrays")
    mu = [_parse_prob(v, f"mu[{i}]", notes) for i, v in enumerate(data["mu"])]
    nu = [_parse_prob(v, f"nu[{i}]", notes) for i, v in enumerate(data["nu"])]
    s, e = len(states), len(innovations)
    idx = {x: i for i, x in enumerate(states)}
    raw = data["phi"]
    phi = np.empty((s, s, e), dtype=np.int64)
    try:
        if len(raw) != s:
            raise ModelError("phi is not total: wrong first dimension")
        for a in range(s):
            if len(raw[a]) != s:
                raise ModelError(f"phi is not total: phi[{a}] has wrong length")
            for b in range(s):
                if not isinstance(raw[a][b], list) or len(raw[a][b]) != e:
                    raise ModelError(f"phi is not total: phi[{a}][{b}] has wrong length")
                for z in range(e):
                    target = raw[a][b][z]
                    if target not in idx:
                        raise ModelError(f"phi[{a}][{b}][{z}] = {target!r} is not a state")
                    phi[a, b, z] = idx[target]
    except TypeError as exc:
        raise ModelError("phi must be a nested array of state labels") from exc
    return RtpModel(tuple(states), tuple(innovations), mu, nu, phi, notes=tuple(notes))


def to_dict(model: RtpModel) -> dict:
    S = model.states
    return {
        "states": list(S),
        "innovations": list(model.innovations),
        "mu": [float(v) for v in model.mu],
        "nu": [float(v) for v in model.nu],
        "phi": [[[S[t] for t in row] for row in plane] for plane in model.phi],
    }


def load(path) -> RtpModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def save(model: RtpModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model), indent=1) + "\n", encoding="utf-8")
