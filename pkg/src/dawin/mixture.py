"""Beta and Dirichlet mixtures for compressing per-sample coefficients.

EM with method-of-moments M-steps. For a component with responsibility
weights gamma over values lambda_i:

    mean  = sum gamma_i lambda_i / sum gamma_i
    s^2   = sum gamma_i (lambda_i - mean)^2 / sum gamma_i
    C     = mean (1 - mean) / s^2 - 1
    a     = C mean + eps,   b = C (1 - mean) + eps,   eps = 1e-6.

Degenerate variances fall back by cause: s^2 < 1e-12 (a point mass) uses
C = 1e2 so the component concentrates at the mean; C <= 0 (variance at or
above Bernoulli level) uses C = 1e-2, the diffuse limit. Values are clipped
into [1e-6, 1 - 1e-6] before fitting, memberships come from K-means on the
raw values, and components are returned sorted by mean. Method-of-moments
updates carry no monotonicity guarantee, so a step that would lower the
log-likelihood is rolled back and the fit stops there.

The Dirichlet variant runs the same skeleton on simplex rows; the component
precision comes from the first coordinate's variance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DataFormatError, InsufficientSamplesError
from .util import atomic_write

VALUE_CLIP = 1e-6
SHAPE_EPS = 1e-6
POINT_MASS_VAR = 1e-12
CONCENTRATION_POINT_MASS = 1e2
CONCENTRATION_DIFFUSE = 1e-2
RESP_FLOOR_FRACTION = 1e-8
PI_FLOOR = 1e-12
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200
MIXTURE_SCHEMA_VERSION = 1


def kmeans_1d(values: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Lloyd's algorithm on scalars, centers seeded at evenly spaced quantiles.

    Deterministic: quantile initialization needs no randomness (the seed is
    accepted for interface uniformity). Iterates to an assignment fixpoint or
    100 rounds; empty clusters keep their previous center. Returned labels are
    remapped so cluster centers increase with the label.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("kmeans_1d expects a vector")
    n = values.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise InsufficientSamplesError(f"need at least {k} values, got {n}")
    centers = np.quantile(values, (np.arange(k) + 0.5) / k)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        dist = np.abs(values[:, None] - centers[None, :])
        new_labels = dist.argmin(axis=1)
        for j in range(k):
            mask = new_labels == j
            if mask.any():
                centers[j] = values[mask].mean()
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    order = np.argsort(centers, kind="stable")
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return remap[labels]


def mom_estimate(values: np.ndarray, resp: np.ndarray) -> tuple[float, float]:
    """Method-of-moments Beta shapes from responsibility-weighted moments."""
    values = np.asarray(values, dtype=np.float64)
    resp = np.asarray(resp, dtype=np.float64)
    if values.shape != resp.shape or values.ndim != 1:
        raise ValueError("values and responsibilities must be equal-length vectors")
    if np.any(resp < 0.0):
        raise ValueError("responsibilities must be non-negative")
    total = resp.sum()
    if total <= 0.0:
        raise ValueError("zero effective weight")
    mean = float((resp * values).sum() / total)
    var = float((resp * (values - mean) ** 2).sum() / total)
    if var < POINT_MASS_VAR:
        conc = CONCENTRATION_POINT_MASS
    else:
        conc = mean * (1.0 - mean) / var - 1.0
        if conc <= 0.0:
            conc = CONCENTRATION_DIFFUSE
    a = conc * mean + SHAPE_EPS
    b = conc * (1.0 - mean) + SHAPE_EPS
    return a, b


def beta_log_pdf(x: np.ndarray | float, a: float, b: float) -> np.ndarray | float:
    """Log Beta(a, b) density; x is clipped into [1e-6, 1 - 1e-6]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    x = np.clip(np.asarray(x, dtype=np.float64), VALUE_CLIP, 1.0 - VALUE_CLIP)
    out = (
        gammaln(a + b)
        - gammaln(a)
        - gammaln(b)
        + (a - 1.0) * np.log(x)
        + (b - 1.0) * np.log(1.0 - x)
    )
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BetaComponent:
    a: float
    b: float
    pi: float

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class BetaMixtureModel:
    components: tuple[BetaComponent, ...]
    loglik_trace: tuple[float, ...]
    converged: bool
    iterations: int
    seed: int
    clip: float = VALUE_CLIP

    @property
    def k(self) -> int:
        return len(self.components)


def _log_joint_beta(values: np.ndarray, comps: list[tuple[float, float, float]]) -> np.ndarray:
    """(n, K) matrix of ln pi_k + ln Beta(x_i; a_k, b_k)."""
    cols = [
        np.log(max(pi, PI_FLOOR)) + beta_log_pdf(values, a, b) for a, b, pi in comps
    ]
    return np.stack(cols, axis=1)


def em_fit(
    values: np.ndarray,
    k: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> BetaMixtureModel:
    """Fit a K-component Beta mixture to scalar coefficients."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("em_fit expects a vector of coefficients")
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise ValueError("coefficients must lie in [0, 1]")
    n = values.shape[0]
    if n < max(k, 2):
        raise InsufficientSamplesError(f"need at least {max(k, 2)} values, got {n}")
    if k < 1:
        raise ValueError("k must be positive")
    values = np.clip(values, VALUE_CLIP, 1.0 - VALUE_CLIP)

    labels = kmeans_1d(values, k, seed)
    comps: list[tuple[float, float, float]] = []
    global_shapes = mom_estimate(values, np.ones(n))
    for j in range(k):
        mask = labels == j
        pi = mask.sum() / n
        # An empty init cluster still needs parameters; the global fit keeps
        # it harmless until responsibilities decide its fate.
        shapes = mom_estimate(values, mask.astype(np.float64)) if mask.any() else global_shapes
        comps.append((shapes[0], shapes[1], pi))
    comps = _renormalize(comps)

    trace: list[float] = []
    converged = False
    iterations = 0
    for it in range(max_iter):
        log_joint = _log_joint_beta(values, comps)
        log_norm = logsumexp(log_joint, axis=1)
        loglik = float(log_norm.sum())
        if trace and loglik < trace[-1] - 1e-10:
            # Moment-matching step lowered the likelihood; undo and stop.
            comps = prev_comps
            converged = True
            break
        trace.append(loglik)
        iterations = it + 1
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
        gamma = np.exp(log_joint - log_norm[:, None])
        prev_comps = comps
        new_comps = []
        for j in range(k):
            mass = gamma[:, j].sum()
            if mass < RESP_FLOOR_FRACTION * n:
                # Starved component: freeze parameters, floor its weight.
                a, b, _ = comps[j]
                new_comps.append((a, b, PI_FLOOR))
                continue
            a, b = mom_estimate(values, gamma[:, j])
            new_comps.append((a, b, mass / n))
        comps = _renormalize(new_comps)

    comps = sorted(comps, key=lambda c: c[0] / (c[0] + c[1]))
    return BetaMixtureModel(
        components=tuple(BetaComponent(a=a, b=b, pi=pi) for a, b, pi in comps),
        loglik_trace=tuple(trace),
        converged=converged,
        iterations=iterations,
        seed=int(seed),
    )


def _renormalize(comps: list[tuple[float, float, float]]) -> list[tuple[float, float, float]]:
    total = sum(max(pi, PI_FLOOR) for _, _, pi in comps)
    return [(a, b, max(pi, PI_FLOOR) / total) for a, b, pi in comps]


def infer_membership(
    model: BetaMixtureModel, lam: np.ndarray | float, posterior: bool = False
) -> np.ndarray | int:
    """Component index per value: argmax of the Beta density, ties to the
    lower index. posterior=True weighs densities by the mixing proportions."""
    lam = np.asarray(lam, dtype=np.float64)
    scores = np.stack(
        [
            beta_log_pdf(lam, c.a, c.b) + (np.log(max(c.pi, PI_FLOOR)) if posterior else 0.0)
            for c in model.components
        ],
        axis=-1,
    )
    member = scores.argmax(axis=-1)
    return int(member) if np.ndim(member) == 0 else member


def component_mean(model: BetaMixtureModel, k: int) -> float:
    if not 0 <= k < model.k:
        raise IndexError(f"component index {k} out of range for K={model.k}")
    return model.components[k].mean


# ----- Dirichlet variant --------------------------------------------------------

@dataclass(frozen=True)
class DirichletComponent:
    alpha: tuple[float, ...]
    pi: float

    @property
    def mean(self) -> tuple[float, ...]:
        total = sum(self.alpha)
        return tuple(a / total for a in self.alpha)


@dataclass(frozen=True)
class DirichletMixtureModel:
    components: tuple[DirichletComponent, ...]
    loglik_trace: tuple[float, ...]
    converged: bool
    iterations: int
    seed: int
    clip: float = VALUE_CLIP

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def n_models(self) -> int:
        return len(self.components[0].alpha)


def dirichlet_log_pdf(rows: np.ndarray, alpha: np.ndarray) -> np.ndarray | float:
    """Log Dirichlet density per row; coordinates clipped like the Beta case."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0.0):
        raise ValueError("concentration parameters must be positive")
    rows = np.clip(np.asarray(rows, dtype=np.float64), VALUE_CLIP, 1.0 - VALUE_CLIP)
    out = (
        gammaln(alpha.sum())
        - gammaln(alpha).sum()
        + ((alpha - 1.0) * np.log(rows)).sum(axis=-1)
    )
    return float(out) if np.ndim(out) == 0 else out


def _dirichlet_mom(rows: np.ndarray, resp: np.ndarray) -> np.ndarray:
    total = resp.sum()
    if total <= 0.0:
        raise ValueError("zero effective weight")
    mean = (resp[:, None] * rows).sum(axis=0) / total
    var1 = float((resp * (rows[:, 0] - mean[0]) ** 2).sum() / total)
    if var1 < POINT_MASS_VAR:
        conc = CONCENTRATION_POINT_MASS
    else:
        conc = mean[0] * (1.0 - mean[0]) / var1 - 1.0
        if conc <= 0.0:
            conc = CONCENTRATION_DIFFUSE
    return conc * mean + SHAPE_EPS


def dirichlet_em_fit(
    rows: np.ndarray,
    k: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> DirichletMixtureModel:
    """Fit a K-component Dirichlet mixture to simplex rows.

    Same EM skeleton as em_fit; K-means initialization runs on the last
    coordinate, and the per-component precision comes from the first
    coordinate's variance. With two columns this reproduces em_fit exactly
    (alpha = (b, a))."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] < 2:
        raise ValueError("expected (n, M) rows with M >= 2")
    if np.any(rows < -1e-9) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("rows must lie on the probability simplex within 1e-6")
    n = rows.shape[0]
    if n < max(k, 2):
        raise InsufficientSamplesError(f"need at least {max(k, 2)} rows, got {n}")
    if k < 1:
        raise ValueError("k must be positive")
    rows = np.clip(rows, VALUE_CLIP, 1.0 - VALUE_CLIP)

    labels = kmeans_1d(rows[:, -1], k, seed)
    global_alpha = _dirichlet_mom(rows, np.ones(n))
    comps: list[tuple[np.ndarray, float]] = []
    for j in range(k):
        mask = labels == j
        pi = mask.sum() / n
        alpha = _dirichlet_mom(rows, mask.astype(np.float64)) if mask.any() else global_alpha
        comps.append((alpha, pi))
    comps = _renormalize_dir(comps)

    trace: list[float] = []
    converged = False
    iterations = 0
    for it in range(max_iter):
        log_joint = np.stack(
            [np.log(max(pi, PI_FLOOR)) + dirichlet_log_pdf(rows, alpha) for alpha, pi in comps],
            axis=1,
        )
        log_norm = logsumexp(log_joint, axis=1)
        loglik = float(log_norm.sum())
        if trace and loglik < trace[-1] - 1e-10:
            comps = prev_comps
            converged = True
            break
        trace.append(loglik)
        iterations = it + 1
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
        gamma = np.exp(log_joint - log_norm[:, None])
        prev_comps = comps
        new_comps = []
        for j in range(k):
            mass = gamma[:, j].sum()
            if mass < RESP_FLOOR_FRACTION * n:
                new_comps.append((comps[j][0], PI_FLOOR))
                continue
            new_comps.append((_dirichlet_mom(rows, gamma[:, j]), mass / n))
        comps = _renormalize_dir(new_comps)

    comps = sorted(comps, key=lambda c: c[0][-1] / c[0].sum())
    return DirichletMixtureModel(
        components=tuple(
            DirichletComponent(alpha=tuple(float(a) for a in alpha), pi=pi)
            for alpha, pi in comps
        ),
        loglik_trace=tuple(trace),
        converged=converged,
        iterations=iterations,
        seed=int(seed),
    )


def _renormalize_dir(comps: list[tuple[np.ndarray, float]]) -> list[tuple[np.ndarray, float]]:
    total = sum(max(pi, PI_FLOOR) for _, pi in comps)
    return [(alpha, max(pi, PI_FLOOR) / total) for alpha, pi in comps]


def dirichlet_membership(
    model: DirichletMixtureModel, rows: np.ndarray, posterior: bool = False
) -> np.ndarray | int:
    rows = np.asarray(rows, dtype=np.float64)
    single = rows.ndim == 1
    rows2 = np.atleast_2d(rows)
    scores = np.stack(
        [
            dirichlet_log_pdf(rows2, np.asarray(c.alpha))
            + (np.log(max(c.pi, PI_FLOOR)) if posterior else 0.0)
            for c in model.components
        ],
        axis=1,
    )
    member = scores.argmax(axis=1)
    return int(member[0]) if single else member


def dirichlet_component_mean(model: DirichletMixtureModel, k: int) -> np.ndarray:
    if not 0 <= k < model.k:
        raise IndexError(f"component index {k} out of range for K={model.k}")
    return np.asarray(model.components[k].mean)


# ----- persistence --------------------------------------------------------------

def mixture_to_dict(model: BetaMixtureModel | DirichletMixtureModel) -> dict:
    if isinstance(model, BetaMixtureModel):
        family = "beta"
        comps = [{"a": c.a, "b": c.b, "pi": c.pi} for c in model.components]
    else:
        family = "dirichlet"
        comps = [{"alpha": list(c.alpha), "pi": c.pi} for c in model.components]
    return {
        "schema_version": MIXTURE_SCHEMA_VERSION,
        "family": family,
        "components": comps,
        "loglik_trace": list(model.loglik_trace),
        "converged": model.converged,
        "iterations": model.iterations,
        "seed": model.seed,
        "clip": model.clip,
        "shape_eps": SHAPE_EPS,
    }


def mixture_from_dict(data: dict) -> BetaMixtureModel | DirichletMixtureModel:
    try:
        if data.get("schema_version") != MIXTURE_SCHEMA_VERSION:
            raise DataFormatError(
                f"unsupported mixture schema version {data.get('schema_version')!r}"
            )
        family = data["family"]
        common = {
            "loglik_trace": tuple(float(v) for v in data["loglik_trace"]),
            "converged": bool(data["converged"]),
            "iterations": int(data["iterations"]),
            "seed": int(data["seed"]),
            "clip": float(data["clip"]),
        }
        if family == "beta":
            comps = tuple(
                BetaComponent(a=float(c["a"]), b=float(c["b"]), pi=float(c["pi"]))
                for c in data["components"]
            )
            return BetaMixtureModel(components=comps, **common)
        if family == "dirichlet":
            dcomps = tuple(
                DirichletComponent(
                    alpha=tuple(float(a) for a in c["alpha"]), pi=float(c["pi"])
                )
                for c in data["components"]
            )
            return DirichletMixtureModel(components=dcomps, **common)
        raise DataFormatError(f"unknown mixture family {family!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed mixture payload: {exc}") from exc


def save_mixture(model: BetaMixtureModel | DirichletMixtureModel, path: str) -> None:
    atomic_write(path, json.dumps(mixture_to_dict(model), sort_keys=True, indent=2) + "\n")


def load_mixture(path: str) -> BetaMixtureModel | DirichletMixtureModel:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    return mixture_from_dict(data)
