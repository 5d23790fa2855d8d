"""Quantile Fourier regression of hourly demand.

Each quantile curve is ``mu + sum_n a_n sin(2 pi n t / 24) + b_n cos(2 pi n t / 24)``
fitted by minimizing the mean pinball loss, posed as an LP with split
positive/negative residuals.

At hourly sampling a 24-hour basis holds only 24 independent functions:
harmonic ``n`` aliases onto ``n mod 24`` (and ``24 - n`` with a sign flip on
the sine). Fitting therefore uses harmonics ``1..min(n_waves, 12)``; the
remaining coefficients are zero, which leaves the optimum unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data_io import HOURS_PER_DAY, LoadSeries
from .lp_core import LpProblem, LpStatus, solve_lp

DEFAULT_BETAS = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_N_WAVES = 100
DEFAULT_CANDIDATES = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
PERIOD_HOURS = HOURS_PER_DAY
# highest harmonic that is distinct at hourly sampling of a 24 h period
NYQUIST = PERIOD_HOURS // 2


class QuantileFitError(RuntimeError):
    pass


def pinball_loss(e, beta: float):
    """``beta * max(e, 0) + (1 - beta) * max(-e, 0)``, elementwise."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie strictly between 0 and 1")
    e = np.asarray(e, dtype=float)
    out = beta * np.maximum(e, 0.0) + (1.0 - beta) * np.maximum(-e, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuantileModel:
    beta: float
    mu: float
    amplitudes_a: tuple[float, ...]  # sine
    amplitudes_b: tuple[float, ...]  # cosine
    n_waves: int
    objective: float = float("nan")
    base_frequency: float = 1.0 / PERIOD_HOURS

    def __post_init__(self):
        if self.n_waves < 0:
            raise ValueError("n_waves must be non-negative")
        if len(self.amplitudes_a) != self.n_waves or len(self.amplitudes_b) != self.n_waves:
            raise ValueError("coefficient lists must have length n_waves")

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "mu": self.mu,
            "n_waves": self.n_waves,
            "sine": list(self.amplitudes_a),
            "cosine": list(self.amplitudes_b),
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileModel":
        return cls(
            beta=float(d["beta"]),
            mu=float(d["mu"]),
            amplitudes_a=tuple(float(v) for v in d["sine"]),
            amplitudes_b=tuple(float(v) for v in d["cosine"]),
            n_waves=int(d["n_waves"]),
            objective=float(d.get("objective", float("nan"))),
        )


@dataclass(frozen=True)
class QuantileSet:
    models: tuple[QuantileModel, ...] = field(default_factory=tuple)

    def __post_init__(self):
        betas = [m.beta for m in self.models]
        if not self.models:
            raise ValueError("a quantile set needs at least one model")
        if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("quantile levels must be strictly increasing")

    def __len__(self) -> int:
        return len(self.models)

    @property
    def betas(self) -> list[float]:
        return [m.beta for m in self.models]

    def curves(self, hours=None) -> np.ndarray:
        """Fitted values, shape (n_models, len(hours)); defaults to one day 0..23."""
        hours = np.arange(PERIOD_HOURS) if hours is None else np.asarray(hours)
        return np.vstack([evaluate(m, hours) for m in self.models])

    def to_json(self) -> str:
        return json.dumps({"models": [m.to_dict() for m in self.models]}, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "QuantileSet":
        data = json.loads(text)
        return cls(tuple(QuantileModel.from_dict(d) for d in data["models"]))

    @classmethod
    def load(cls, path) -> "QuantileSet":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _phase(n: np.ndarray, t: np.ndarray) -> np.ndarray:
    # reduce n*t modulo the period before scaling so aliasing/periodicity are exact
    return 2.0 * np.pi * np.mod(np.multiply.outer(t, n), PERIOD_HOURS) / PERIOD_HOURS


def design_matrix(t, n_waves: int) -> np.ndarray:
    """Columns ``[1, sin_1, cos_1, ..., sin_n, cos_n]`` evaluated at hours ``t``."""
    t = np.asarray(t, dtype=float)
    n = np.arange(1, n_waves + 1, dtype=float)
    ph = _phase(n, t)
    X = np.empty((t.size, 1 + 2 * n_waves))
    X[:, 0] = 1.0
    X[:, 1::2] = np.sin(ph)
    X[:, 2::2] = np.cos(ph)
    return X


def evaluate(model: QuantileModel, t):
    """Fitted curve at hour(s) ``t`` (hours since midnight of the first day)."""
    t_arr = np.asarray(t, dtype=float)
    if model.n_waves == 0:
        out = np.full(t_arr.shape, model.mu)
    else:
        n = np.arange(1, model.n_waves + 1, dtype=float)
        ph = _phase(n, t_arr.ravel())
        a = np.asarray(model.amplitudes_a)
        b = np.asarray(model.amplitudes_b)
        out = (model.mu + np.sin(ph) @ a + np.cos(ph) @ b).reshape(t_arr.shape)
    return float(out) if out.ndim == 0 else out


def _polish_constant(x: np.ndarray, mu: float, beta: float) -> float:
    """Snap a constant-only LP fit to the data value meeting the exact optimality condition.

    ``v`` minimizes the pinball loss iff #(x < v) <= beta*N <= #(x <= v); counting is exact where the
    LP's tolerance cannot tell apart data values a few ulps from ``mu``.
    """
    tol = 1e-9 * max(1.0, float(np.abs(x).max()))
    target = beta * x.size
    for v in np.unique(x[np.abs(x - mu) <= tol]):
        if (x < v).sum() <= target <= (x <= v).sum():
            return float(v)
    return mu


def _fit_arrays(x: np.ndarray, t: np.ndarray, beta: float, n_waves: int, method: str):
    """Solve the pinball LP; returns (mu, sine, cosine, objective) on the effective harmonics."""
    coef, loss = _solve_pinball(x, t, beta, n_waves, method)
    if coef.size == 1:
        coef[0] = _polish_constant(x, coef[0], beta)
        loss = float(np.mean(pinball_loss(x - coef[0], beta)))
    return coef, loss


def _solve_pinball(x: np.ndarray, t: np.ndarray, beta: float, n_waves: int, method: str):
    N = x.size
    n_eff = min(n_waves, NYQUIST)
    X = design_matrix(t, n_eff)
    # sin(pi t) vanishes at integer hours; drop it rather than carry a zero column
    keep = np.ones(X.shape[1], bool)
    if n_eff == NYQUIST:
        keep[2 * NYQUIST - 1] = False
    Xk = X[:, keep]
    p = Xk.shape[1]

    # Dual of the pinball LP: max x.w/N s.t. X^T w = 0, beta-1 <= w <= beta.
    # Only p equality rows, so it solves far faster than the primal. At a
    # vertex the multipliers strictly inside their box mark zero residuals,
    # which pins the coefficients down by interpolation.
    dual = LpProblem(-x / N, sp.csr_matrix(Xk.T), np.zeros(p), np.zeros(p), beta - 1.0, beta)
    dsol = solve_lp(dual, method=method)
    if dsol.status is LpStatus.OPTIMAL:
        w = dsol.values
        dual_obj = -dsol.objective
        candidates = []
        interior = (w > beta - 1.0 + 1e-9) & (w < beta - 1e-9)
        if interior.sum() >= p:
            candidates.append(np.linalg.lstsq(Xk[interior], x[interior], rcond=None)[0])
        if dsol.row_duals is not None:
            # degenerate vertices (e.g. N*beta integral) leave too few interior
            # multipliers; the row duals of the small LP are the coefficients
            candidates.append(-N * dsol.row_duals)
            candidates.append(N * dsol.row_duals)
        for theta in candidates:
            loss = float(np.mean(pinball_loss(x - Xk @ theta, beta)))
            if loss <= dual_obj + 1e-9 * max(1.0, abs(dual_obj)):
                coef = np.zeros(X.shape[1])
                coef[keep] = theta
                return coef, loss

    A = sp.hstack([sp.csr_matrix(Xk), sp.identity(N, format="csr"), -sp.identity(N, format="csr")]).tocsr()
    c = np.concatenate([np.zeros(p), np.full(N, beta / N), np.full(N, (1.0 - beta) / N)])
    lower = np.concatenate([np.full(p, -np.inf), np.zeros(2 * N)])
    problem = LpProblem(c, A, x, x, lower, np.inf)
    sol = solve_lp(problem, method=method)
    if sol.status is not LpStatus.OPTIMAL:
        raise QuantileFitError(f"pinball LP ended with status {sol.status.value}")
    coef = np.zeros(X.shape[1])
    coef[keep] = sol.values[:p]
    return coef, sol.objective


def fit(train: LoadSeries | np.ndarray, beta: float, n_waves: int = DEFAULT_N_WAVES,
        hours=None, method: str = "highs") -> QuantileModel:
    """Fit one quantile curve minimizing the mean pinball loss.

    ``train`` may be a LoadSeries or a raw array (then ``hours`` gives each
    sample's hour index, default ``0, 1, 2, ...``). ``n_waves=0`` fits the
    constant only.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie strictly between 0 and 1")
    if n_waves < 0:
        raise ValueError("n_waves must be non-negative")
    x = np.asarray(train.values if isinstance(train, LoadSeries) else train, dtype=float)
    if x.size == 0:
        raise ValueError("cannot fit an empty series")
    t = np.arange(x.size, dtype=float) if hours is None else np.asarray(hours, dtype=float)
    if not x.any():
        return QuantileModel(beta, 0.0, (0.0,) * n_waves, (0.0,) * n_waves, n_waves, objective=0.0)
    coef, obj = _fit_arrays(x, t, beta, n_waves, method)
    n_eff = min(n_waves, NYQUIST)
    sine = np.zeros(n_waves)
    cosine = np.zeros(n_waves)
    sine[:n_eff] = coef[1::2]
    cosine[:n_eff] = coef[2::2]
    return QuantileModel(beta, float(coef[0]), tuple(sine.tolist()), tuple(cosine.tolist()), n_waves,
                         objective=float(obj))


def fit_quantile_set(train: LoadSeries, betas=DEFAULT_BETAS, n_waves: int = DEFAULT_N_WAVES) -> QuantileSet:
    return QuantileSet(tuple(fit(train, b, n_waves) for b in betas))


def mean_pinball(model: QuantileModel, x, t) -> float:
    return float(np.mean(pinball_loss(np.asarray(x) - evaluate(model, np.asarray(t, float)), model.beta)))


def assign_quantile(qset: QuantileSet, observation: float, t) -> int:
    """1-based index of the curve nearest to ``observation`` at hour ``t`` (ties go low)."""
    vals = np.array([evaluate(m, t) for m in qset.models])
    return int(np.argmin(np.abs(vals - observation))) + 1


def assign_quantiles(qset: QuantileSet, series: LoadSeries | np.ndarray, hours=None) -> np.ndarray:
    """Vectorized :func:`assign_quantile` over a whole series."""
    x = np.asarray(series.values if isinstance(series, LoadSeries) else series, dtype=float)
    t = np.arange(x.size) if hours is None else np.asarray(hours)
    curves = qset.curves(np.mod(t, PERIOD_HOURS))
    # argmin picks the first minimum, i.e. the lower index on ties
    return np.argmin(np.abs(curves - x[None, :]), axis=0) + 1


def select_n_waves(train: LoadSeries | np.ndarray, candidates=DEFAULT_CANDIDATES, beta: float = 0.5,
                   holdout_every: int = 5) -> int:
    """Pick the harmonic count with the lowest held-out pinball loss.

    Every ``holdout_every``-th day is held out; ties go to the smaller count.
    """
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ValueError("need at least one candidate")
    if len(candidates) == 1:
        return candidates[0]
    x = np.asarray(train.values if isinstance(train, LoadSeries) else train, dtype=float)
    t = np.arange(x.size)
    day = t // PERIOD_HOURS
    held = (day % holdout_every) == holdout_every - 1
    if not held.any() or held.all():
        raise ValueError("series too short to hold out whole days")
    best, best_loss = candidates[0], np.inf
    for n in candidates:
        model = fit(x[~held], beta, n, hours=t[~held])
        loss = mean_pinball(model, x[held], t[held])
        if loss < best_loss - 1e-12 * max(1.0, abs(best_loss)):
            best, best_loss = n, loss
    return best
