"""Operator identification: EDMDc baselines, generator fits, and the
physics-informed split method, plus lifted rollout prediction.

All fits share one convention: data matrices are column-per-sample and a
fitted operator K satisfies ``lift(x', u) ~= K @ lift(x, u)`` over one time
step of length ``dt``. Learned rows come from an L1-regularized least-squares
solve; structural rows (delay pass-through, control identity) are installed
exactly, never regressed.

The split method factors the one-step operator symmetrically as
``K = Kf_half @ Kh @ Kf_half``: a half-step operator for the known term,
obtained from phase-space samples via a generator fit and the matrix
exponential (or directly from the known flow map), and a full-step operator
for the unknown term, regressed from trajectory data against the
half-step-corrected targets.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from splitkoop import numkit
from splitkoop.dictionaries import (
    DelayBuffer,
    DictionarySpec,
    RowStructure,
    extract_state,
    install_structure,
    jacobian_x,
    lift,
    lift_many,
    row_structure,
)
from splitkoop.systems import PhaseDataset, TrajectoryDataset, rk4_step

__all__ = [
    "FitOptions",
    "SpectralReport",
    "KoopmanModel",
    "RolloutResult",
    "edmd_fit",
    "gedmd_fit",
    "kf_from_generator",
    "kf_from_flowmap",
    "kh_fit",
    "compose_split",
    "split_fit",
    "rollout",
    "save_model",
    "load_model",
]

MODEL_FORMAT = "splitkoop-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class FitOptions:
    """Knobs shared by all fits.

    ``alpha=None`` applies the default regularization rule 0.01 * N with N
    the sample count of each individual least-squares problem; an explicit
    value (including 0) overrides it.
    """

    alpha: float | None = None
    normalize_rows: bool = True
    rank_tol: float = 0.0
    lasso_max_iter: int = 2000
    lasso_tol: float = 1e-10
    kh_row_mask: tuple[int, ...] = ()
    kh_center: str = "identity"   # identity | zero
    kf_source: str = "generator"  # generator | flowmap | auto
    tol_spectral: float = 1e-6
    flow_substeps: int = 4

    def resolve_alpha(self, n_samples: int) -> float:
        return 0.01 * n_samples if self.alpha is None else self.alpha


@dataclass(frozen=True)
class SpectralReport:
    spectral_radius: float
    unstable: bool


@dataclass(frozen=True)
class KoopmanModel:
    """A fitted one-step operator over lifted coordinates.

    ``method`` is "l" (linear EDMDc), "b" (bilinear EDMDc) or "pi"
    (physics-informed split); split models additionally store their
    half-step and unknown-term factors.
    """

    method: str
    dt: float
    spec: DictionarySpec
    K: np.ndarray
    Kf_half: np.ndarray | None = None
    Kh: np.ndarray | None = None
    spectral: SpectralReport | None = None
    lasso_converged: bool = True

    def __post_init__(self):
        m = self.spec.lifted_dim
        if self.K.shape != (m, m):
            raise ValueError(f"K has shape {self.K.shape}, expected ({m}, {m})")


def _fit_learned_rows(g: np.ndarray, y: np.ndarray, structure: RowStructure,
                      opts: FitOptions, structural_value: str = "map",
                      structural_zero: bool = False):
    """Regress learned rows of an M x M operator; install the rest exactly.

    ``structural_zero`` leaves structural rows at zero (generator fits);
    otherwise ``structural_value`` picks the pass-through mode.
    """
    m = structure.lifted_dim
    alpha = opts.resolve_alpha(g.shape[1])
    targets = y[structure.learned_rows]
    if opts.normalize_rows and alpha > 0.0:
        # row-separable problem: scale each target row to unit RMS so one
        # alpha regularizes rows of very different physical magnitude evenly
        sig = np.sqrt(np.mean(targets ** 2, axis=1))
        sig = np.where(sig > 1e-300, sig, 1.0)
    else:
        sig = np.ones(len(structure.learned_rows))
    res = numkit.lasso_solve(g, targets / sig[:, None], alpha,
                             max_iter=opts.lasso_max_iter, tol=opts.lasso_tol)
    k = np.zeros((m, m))
    k[structure.learned_rows] = res.coef * sig[:, None]
    if not structural_zero:
        k = install_structure(k, structure, mode=structural_value)
    return k, res.converged


def _trajectory_lifts(spec: DictionarySpec, d1: TrajectoryDataset):
    """Lift every D1 record into (G, Y) with per-trajectory delay history."""
    if len(d1) == 0:
        raise ValueError("trajectory dataset is empty")
    m_lift = spec.lifted_dim
    g = np.empty((m_lift, len(d1)))
    y = np.empty((m_lift, len(d1)))
    buf: DelayBuffer | None = None
    current_id = None
    for i in range(len(d1)):
        if d1.traj_id[i] != current_id:
            current_id = d1.traj_id[i]
            buf = DelayBuffer(spec.delays)
        x, xp, u = d1.x[:, i], d1.xp[:, i], d1.u[:, i]
        g[:, i] = lift(spec, x, u, buf)
        buf.push(x)
        y[:, i] = lift(spec, xp, u, buf)
    return g, y


def edmd_fit(spec: DictionarySpec, d1: TrajectoryDataset,
             opts: FitOptions = FitOptions()) -> KoopmanModel:
    """Plain EDMDc fit from trajectory data (linear or bilinear per spec)."""
    g, y = _trajectory_lifts(spec, d1)
    structure = row_structure(spec)
    k, converged = _fit_learned_rows(g, y, structure, opts)
    rho = float(np.max(np.abs(np.linalg.eigvals(k))))
    return KoopmanModel(
        method="b" if spec.form == "bilinear" else "l",
        dt=d1.dt, spec=spec, K=k,
        spectral=SpectralReport(rho, rho > 1.0 + opts.tol_spectral),
        lasso_converged=converged,
    )


def gedmd_fit(spec: DictionarySpec, d2: PhaseDataset,
              f: Callable | None = None,
              opts: FitOptions = FitOptions()) -> np.ndarray:
    """Generator fit from phase-space samples and the known vector field.

    Columns of the target matrix are ``jacobian_x(x, u) @ f(x, u)``. When the
    known term cannot be evaluated from the learning state alone, ``d2``
    may carry precomputed values in ``d2.fvals`` and ``f`` may be None.
    Structural rows of the generator are zero (their coordinates are
    constant under the known flow between samples).
    """
    if len(d2) == 0:
        raise ValueError("phase dataset is empty")
    if f is None and d2.fvals is None:
        raise ValueError("need a callable known term or precomputed d2.fvals")
    g = lift_many(spec, d2.x, d2.u)
    j = np.empty_like(g)
    for i in range(len(d2)):
        x, u = d2.x[:, i], d2.u[:, i]
        if d2.fvals is not None:
            fval = d2.fvals[:, i]
        else:
            try:
                fval = np.asarray(f(x, u), dtype=float)
            except Exception as exc:
                raise RuntimeError(f"known term failed on phase sample {i}") from exc
        j[:, i] = jacobian_x(spec, x, u) @ fval
    structure = row_structure(spec)
    gen, _ = _fit_learned_rows(g, j, structure, opts, structural_zero=True)
    return gen


def _spectral_report(k: np.ndarray, tol: float) -> SpectralReport:
    rho = float(np.max(np.abs(np.linalg.eigvals(k))))
    return SpectralReport(spectral_radius=rho, unstable=rho > 1.0 + tol)


def kf_from_generator(gen: np.ndarray, dt: float, spec: DictionarySpec,
                      opts: FitOptions = FitOptions()):
    """Half-step operator for the known term: exp(dt/2 * generator).

    Structural rows are overwritten with exact identity pass-through: the
    delay/control coordinates do not move under the known flow within a
    step, and the delay shift is applied once per full step by the
    unknown-term factor.
    """
    kf = numkit.matexp(0.5 * dt * gen)
    kf = install_structure(kf, row_structure(spec), mode="identity")
    return kf, _spectral_report(kf, opts.tol_spectral)


def kf_from_flowmap(spec: DictionarySpec, d2: PhaseDataset, flow: Callable,
                    dt: float, opts: FitOptions = FitOptions()):
    """Half-step operator fitted directly from the known flow map.

    ``flow(x, u, t)`` integrates the known term over ``t``. Pairs
    ``(x_i, flow(x_i, u_i, dt/2))`` built from phase samples are lifted and
    fitted like an EDMD problem; structural rows are installed as identity
    pass-through, as in the generator route.
    """
    if len(d2) == 0:
        raise ValueError("phase dataset is empty")
    m_lift = spec.lifted_dim
    g = np.empty((m_lift, len(d2)))
    y = np.empty((m_lift, len(d2)))
    for i in range(len(d2)):
        x, u = d2.x[:, i], d2.u[:, i]
        xh = np.asarray(flow(x, u, 0.5 * dt), dtype=float)
        g[:, i] = lift(spec, x, u)
        y[:, i] = lift(spec, xh, u, DelayBuffer(spec.delays, [x]))
    structure = row_structure(spec)
    kf, _ = _fit_learned_rows(g, y, structure, opts, structural_value="identity")
    return kf, _spectral_report(kf, opts.tol_spectral)


def kh_fit(kf_half: np.ndarray, spec: DictionarySpec, d1: TrajectoryDataset,
           opts: FitOptions = FitOptions()) -> np.ndarray:
    """Full-step operator for the unknown term, regressed from trajectories.

    Solves the rearranged one-step equality: regressor ``Kf_half @ lift(X)``
    against target ``pinv(Kf_half) @ lift(X')``. With the default
    ``opts.kh_center`` the regularization is centered on the identity: the
    learned rows are written I + C with C regressed against the residual
    target, so shrinkage pulls the operator toward pass-through rather than
    annihilation (the unknown term is a perturbation of the identity over
    one step; centering at zero destroys the fit in the low-data limit).
    Rows listed in ``opts.kh_row_mask`` are forced to exact identity rows
    instead of being fitted (for components of the unknown term known to be
    zero or small).
    """
    if opts.kh_center not in ("identity", "zero"):
        raise ValueError(f"unknown kh_center {opts.kh_center!r}")
    g0, y0 = _trajectory_lifts(spec, d1)
    g = kf_half @ g0
    y = numkit.pinv(kf_half, opts.rank_tol) @ y0
    structure = row_structure(spec)
    if opts.kh_center == "identity":
        kh, _ = _fit_learned_rows(g, y - g, structure, opts,
                                  structural_zero=True)
        kh[structure.learned_rows, structure.learned_rows] += 1.0
        kh = install_structure(kh, structure, mode="map")
    else:
        kh, _ = _fit_learned_rows(g, y, structure, opts)
    for row in opts.kh_row_mask:
        if not 0 <= row < spec.lifted_dim:
            raise ValueError(f"kh_row_mask index {row} out of range")
        kh[row, :] = 0.0
        kh[row, row] = 1.0
    return kh


def compose_split(kf_half: np.ndarray, kh: np.ndarray) -> np.ndarray:
    """Symmetric composition of the two factors into a full-step operator."""
    if kf_half.shape != kh.shape or kf_half.shape[0] != kf_half.shape[1]:
        raise ValueError("factors must be square and conformable")
    return kf_half @ kh @ kf_half


def flow_from_rhs(f: Callable, substeps: int = 4) -> Callable:
    """Turn a right-hand side into a fixed-substep RK4 flow map."""

    def flow(x, u, t):
        h = t / substeps
        for _ in range(substeps):
            x = rk4_step(f, x, u, h)
        return x

    return flow


def split_fit(spec: DictionarySpec, d1: TrajectoryDataset, d2: PhaseDataset,
              f_known: Callable | None, dt: float,
              opts: FitOptions = FitOptions()) -> KoopmanModel:
    """Physics-informed split identification.

    Fits the known-term half-step operator from phase samples (generator
    route by default, known-flow route on request, automatic fallback with
    ``kf_source="auto"`` when the generator route is flagged unstable), then
    the unknown-term operator from trajectories, and composes them. The
    composed operator has the declared structural rows installed exactly.
    """
    if opts.kf_source not in ("generator", "flowmap", "auto"):
        raise ValueError(f"unknown kf_source {opts.kf_source!r}")
    use_flow = opts.kf_source == "flowmap"
    kf = report = None
    if not use_flow:
        try:
            gen = gedmd_fit(spec, d2, f_known, opts)
            kf, report = kf_from_generator(gen, dt, spec, opts)
        except numkit.NumericalError:
            if opts.kf_source != "auto":
                raise
            report = None
        if opts.kf_source == "auto" and (report is None or report.unstable):
            use_flow = True
    if use_flow:
        if f_known is None:
            raise ValueError("known-flow route requires a callable known term")
        flow = flow_from_rhs(f_known, opts.flow_substeps)
        kf, report = kf_from_flowmap(spec, d2, flow, dt, opts)
    kh = kh_fit(kf, spec, d1, opts)
    k = compose_split(kf, kh)
    k = install_structure(k, row_structure(spec), mode="map")
    return KoopmanModel(method="pi", dt=dt, spec=spec, K=k,
                        Kf_half=kf, Kh=kh, spectral=report)


@dataclass(frozen=True)
class RolloutResult:
    states: np.ndarray        # (steps_completed + 1, n), row 0 is x0
    diverged_at: int | None   # step index of the first non-finite prediction


def rollout(model: KoopmanModel, x0, u_seq) -> RolloutResult:
    """Predict a trajectory by re-lifting the projected state every step.

    Re-lifting keeps delay blocks (and the control-scaled blocks of bilinear
    dictionaries) consistent by construction; only the current-state rows of
    the operator drive the prediction.
    """
    u_seq = np.asarray(u_seq, dtype=float)
    if u_seq.ndim == 1:
        u_seq = u_seq[None, :]
    steps = u_seq.shape[1]
    if steps == 0:
        raise ValueError("control sequence is empty")
    spec = model.spec
    x = np.asarray(x0, dtype=float).copy()
    buf = DelayBuffer(spec.delays)
    states = [x.copy()]
    diverged_at = None
    # overflow on the way to a detected divergence is expected, not an error
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            z = lift(spec, x, u_seq[:, k], buf)
            z_next = model.K @ z
            x_next = extract_state(spec, z_next)
            if not np.all(np.isfinite(x_next)):
                diverged_at = k
                break
            buf.push(x)
            x = x_next
            states.append(x.copy())
    return RolloutResult(states=np.array(states), diverged_at=diverged_at)


def _encode_matrix(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"rows": a.shape[0], "cols": a.shape[1],
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_matrix(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["rows"], d["cols"]).copy()


def save_model(model: KoopmanModel, path) -> None:
    """Write a versioned model container (JSON with little-endian payloads)."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "method": model.method,
        "dt": model.dt,
        "dictionary": model.spec.to_dict(),
        "lasso_converged": model.lasso_converged,
        "spectral": None if model.spectral is None else {
            "spectral_radius": model.spectral.spectral_radius,
            "unstable": model.spectral.unstable,
        },
        "matrices": {"K": _encode_matrix(model.K)},
    }
    if model.Kf_half is not None:
        doc["matrices"]["Kf_half"] = _encode_matrix(model.Kf_half)
    if model.Kh is not None:
        doc["matrices"]["Kh"] = _encode_matrix(model.Kh)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> KoopmanModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a model container")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    mats = doc["matrices"]
    spectral = doc.get("spectral")
    return KoopmanModel(
        method=doc["method"],
        dt=doc["dt"],
        spec=DictionarySpec.from_dict(doc["dictionary"]),
        K=_decode_matrix(mats["K"]),
        Kf_half=_decode_matrix(mats["Kf_half"]) if "Kf_half" in mats else None,
        Kh=_decode_matrix(mats["Kh"]) if "Kh" in mats else None,
        spectral=None if spectral is None else SpectralReport(**spectral),
        lasso_converged=doc.get("lasso_converged", True),
    )
