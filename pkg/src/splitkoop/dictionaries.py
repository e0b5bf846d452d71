"""Observable dictionaries: lifting maps, analytic Jacobians, row structure.

A dictionary maps a state/control pair (and a buffer of past states) to a
lifted vector. The lifted vector is laid out in fixed blocks:

* ``linear`` form:    [base(x), base(x_-1), ..., base(x_-d), u]
* ``bilinear`` form:  [stack, u_1 * stack, ..., u_m * stack] where
  ``stack = [base(x), base(x_-1), ..., base(x_-d)]``

``base`` is the monomial map of total degree 1..degree (degree-1 terms first,
so the leading ``state_dim`` entries of every lift are the raw state).

Rows of a fitted operator split into *learned* rows (regressed from data) and
*structural* rows (fixed pass-through: delay shift and control identity).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DictionarySpec",
    "DelayBuffer",
    "RowStructure",
    "lift",
    "lift_many",
    "jacobian_x",
    "row_structure",
    "install_structure",
    "extract_state",
]


def _monomial_exponents(n: int, degree: int) -> np.ndarray:
    rows = []
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), deg):
            e = np.zeros(n, dtype=int)
            for i in combo:
                e[i] += 1
            rows.append(e)
    return np.array(rows, dtype=int)


@dataclass(frozen=True)
class DictionarySpec:
    """Shape and kind of an observable dictionary.

    ``delay_rows`` selects the pass-through semantics of the delay blocks in
    fitted operators: ``"shift"`` advances each lag block from the previous
    one (delay-coordinate semantics), ``"identity"`` freezes them.
    """

    state_dim: int
    control_dim: int
    form: str = "linear"
    delays: int = 0
    degree: int = 1
    delay_rows: str = "shift"
    _exponents: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ValueError("state_dim and control_dim must be >= 1")
        if self.form not in ("linear", "bilinear"):
            raise ValueError(f"unknown form {self.form!r}")
        if self.delays < 0 or self.degree < 1:
            raise ValueError("delays must be >= 0 and degree >= 1")
        if self.delay_rows not in ("shift", "identity"):
            raise ValueError(f"unknown delay_rows {self.delay_rows!r}")
        object.__setattr__(
            self, "_exponents", _monomial_exponents(self.state_dim, self.degree)
        )

    @property
    def base_dim(self) -> int:
        return len(self._exponents)

    @property
    def stack_dim(self) -> int:
        return (self.delays + 1) * self.base_dim

    @property
    def lifted_dim(self) -> int:
        if self.form == "linear":
            return self.stack_dim + self.control_dim
        return (self.control_dim + 1) * self.stack_dim

    def base_eval(self, x: np.ndarray) -> np.ndarray:
        """Monomial block for one state (or a batch with states as columns)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.prod(x[None, :] ** self._exponents, axis=1)
        # x is (n, N): evaluate each monomial across columns
        return np.prod(x[None, :, :] ** self._exponents[:, :, None], axis=1)

    def base_jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.state_dim
        jac = np.zeros((self.base_dim, n))
        for r, e in enumerate(self._exponents):
            for j in range(n):
                if e[j] == 0:
                    continue
                e_red = e.copy()
                e_red[j] -= 1
                jac[r, j] = e[j] * np.prod(x ** e_red)
        return jac

    def to_dict(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "control_dim": self.control_dim,
            "form": self.form,
            "delays": self.delays,
            "degree": self.degree,
            "delay_rows": self.delay_rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DictionarySpec":
        return cls(**d)


class DelayBuffer:
    """The ``d`` most recent past states, newest first. Single-writer."""

    def __init__(self, capacity: int, states=None):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._states: list[np.ndarray] = []
        for s in states or []:
            self.push(s)

    def push(self, x) -> None:
        if self.capacity == 0:
            return
        self._states.insert(0, np.asarray(x, dtype=float).copy())
        del self._states[self.capacity:]

    def __len__(self) -> int:
        return len(self._states)

    def history(self, fallback) -> list[np.ndarray]:
        """Exactly ``capacity`` past states, newest first.

        Missing lags are padded with the oldest available state (``fallback``
        if the buffer is empty), which makes a lift at trajectory start
        consistent with the delay-shift structural rows.
        """
        oldest = self._states[-1] if self._states else np.asarray(fallback, dtype=float)
        hist = list(self._states)
        hist.extend([oldest] * (self.capacity - len(hist)))
        return hist


def _stack(spec: DictionarySpec, x: np.ndarray, history) -> np.ndarray:
    blocks = [spec.base_eval(x)]
    blocks.extend(spec.base_eval(h) for h in history)
    return np.concatenate(blocks) if len(blocks) > 1 else blocks[0]


def lift(spec: DictionarySpec, x, u, buf: DelayBuffer | None = None) -> np.ndarray:
    """Lifted vector for one sample."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (spec.state_dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({spec.state_dim},)")
    if u.shape != (spec.control_dim,):
        raise ValueError(f"control has shape {u.shape}, expected ({spec.control_dim},)")
    history = (buf or DelayBuffer(spec.delays)).history(x)[: spec.delays]
    stack = _stack(spec, x, history)
    if spec.form == "linear":
        return np.concatenate([stack, u])
    return np.concatenate([stack] + [ui * stack for ui in u])


def lift_many(spec: DictionarySpec, xs, us, histories=None) -> np.ndarray:
    """Lift a batch of samples into an M x N data matrix.

    ``xs`` is (n, N), ``us`` is (m, N). ``histories``, when given, is a list
    of N lists of past states (newest first); phase-space samples carry no
    history and their delay blocks back-fill with the current state.
    """
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    n_samples = xs.shape[1]
    out = np.empty((spec.lifted_dim, n_samples))
    for i in range(n_samples):
        buf = DelayBuffer(spec.delays, histories[i] if histories else None)
        out[:, i] = lift(spec, xs[:, i], us[:, i], buf)
    return out


def jacobian_x(spec: DictionarySpec, x, u) -> np.ndarray:
    """Analytic Jacobian of the lift with respect to the current state only.

    Delay blocks and plain control rows are constants of the current state,
    so their rows are zero; control-scaled blocks in the bilinear form carry
    the scaled base Jacobian.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (spec.state_dim,) or u.shape != (spec.control_dim,):
        raise ValueError("state/control dimensions do not match spec")
    base_jac = spec.base_jacobian(x)
    stack_jac = np.zeros((spec.stack_dim, spec.state_dim))
    stack_jac[: spec.base_dim] = base_jac
    if spec.form == "linear":
        jac = np.zeros((spec.lifted_dim, spec.state_dim))
        jac[: spec.stack_dim] = stack_jac
        return jac
    return np.concatenate([stack_jac] + [ui * stack_jac for ui in u], axis=0)


@dataclass(frozen=True)
class RowStructure:
    """Partition of operator rows into learned and structural pass-through."""

    lifted_dim: int
    learned_rows: np.ndarray
    structural_rows: dict[int, tuple[int, float]]

    def __post_init__(self):
        covered = set(self.learned_rows.tolist()) | set(self.structural_rows)
        if covered != set(range(self.lifted_dim)):
            raise ValueError("learned and structural rows must partition all rows")


def row_structure(spec: DictionarySpec) -> RowStructure:
    """Learned/structural row map for a dictionary.

    Learned rows are the current-state block (plus every control-scaled block
    in the bilinear form). Structural rows implement the delay pass-through
    (shift or identity per the spec) and the control identity.
    """
    nb, d, m = spec.base_dim, spec.delays, spec.control_dim
    structural: dict[int, tuple[int, float]] = {}
    learned = list(range(nb))
    for k in range(1, d + 1):
        for j in range(nb):
            row = k * nb + j
            src = row if spec.delay_rows == "identity" else (k - 1) * nb + j
            structural[row] = (src, 1.0)
    if spec.form == "linear":
        for i in range(m):
            row = spec.stack_dim + i
            structural[row] = (row, 1.0)
    else:
        learned.extend(range(spec.stack_dim, spec.lifted_dim))
    return RowStructure(
        lifted_dim=spec.lifted_dim,
        learned_rows=np.array(learned, dtype=int),
        structural_rows=structural,
    )


def install_structure(k: np.ndarray, structure: RowStructure,
                      mode: str = "map") -> np.ndarray:
    """Overwrite structural rows of an operator with exact pass-through rows.

    ``mode="map"`` installs the declared row map (shift/identity);
    ``mode="identity"`` installs plain identity rows regardless of the map,
    which is the correct pass-through for a half-step factor (the delay shift
    happens once per full step).
    """
    k = np.array(k, dtype=float, copy=True)
    for row, (src, w) in structure.structural_rows.items():
        k[row, :] = 0.0
        k[row, src if mode == "map" else row] = w if mode == "map" else 1.0
    return k


def extract_state(spec: DictionarySpec, z) -> np.ndarray:
    """Recover the raw state from a lifted vector (leading degree-1 block)."""
    return np.asarray(z, dtype=float)[: spec.state_dim].copy()
