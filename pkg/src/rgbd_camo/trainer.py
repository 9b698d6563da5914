"""Quasi-Newton training: BFGS directions, Brent step lengths, restoration of the
minimum-validation parameters, restarts, and hidden-size selection."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DataError
from .mlp import (
    CamouflageDataset,
    MlpArchitecture,
    MlpParameters,
    Objective,
    Scaling,
    forward,
    init_params,
)
from .seeding import substream

GOLDEN = 0.3819660112501051
CURVATURE_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    min_improvement: float = 1e-12
    restarts: int = 5
    seed: int = 0
    brent_tol: float = 1e-10
    brent_max_iter: int = 100
    initial_rate: float = 1e-2
    rate_max: float = 1e4
    threads: int = 1

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if not self.min_improvement > 0:
            raise ValueError("min_improvement must be positive")
        if self.restarts < 1:
            raise ValueError("at least one restart is required")


# --- line search ---------------------------------------------------------------


def brent_minimize(f: Callable[[float], float], a: float, b: float, x: float | None = None,
                   fx: float | None = None, tol: float = 1e-10, max_iter: int = 100):
    """Brent's method on [a, b]: golden section plus successive parabolic interpolation.

    Returns ``(x, f(x), iterations)``.
    """
    if a > b:
        a, b = b, a
    if x is None:
        x = a + GOLDEN * (b - a)
        fx = f(x)
    elif fx is None:
        fx = f(x)
    w = v = x
    fw = fv = fx
    d = e = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        m = 0.5 * (a + b)
        tol1 = tol * abs(x) + 1e-14
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            break
        parabolic = False
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            if abs(p) < abs(0.5 * q * e) and q * (a - x) < p < q * (b - x):
                e, d = d, p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol1 if x < m else -tol1
                parabolic = True
        if not parabolic:
            e = (b - x) if x < m else (a - x)
            d = GOLDEN * e
        u = x + d if abs(d) >= tol1 else x + (tol1 if d > 0 else -tol1)
        fu = f(u)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x, fx, it


class RateResult(NamedTuple):
    rate: float
    value: float
    bracket: tuple[float, float]
    at_max: bool


def brent_rate(phi: Callable[[float], float], initial: float = 1e-2, rate_max: float = 1e4,
               tol: float = 1e-10, max_iter: int = 100, phi0: float | None = None) -> RateResult:
    """Step length minimising ``phi`` along a search direction.

    The bracket is grown by doubling from ``initial`` until phi rises; a phi still
    decreasing at ``rate_max`` returns ``rate_max`` with ``at_max`` set. The
    returned rate never does worse than rate 0.
    """
    f0 = phi(0.0) if phi0 is None else phi0
    x_prev = 0.0
    r = min(initial, rate_max)
    fr = phi(r)
    if fr >= f0:
        x, fx, _ = brent_minimize(phi, 0.0, r, tol=tol, max_iter=max_iter)
        bracket = (0.0, r)
    else:
        while True:
            if r >= rate_max:
                return RateResult(r, fr, (x_prev, r), True)
            nxt = min(2.0 * r, rate_max)
            fn = phi(nxt)
            if fn >= fr:
                bracket = (x_prev, nxt)
                x, fx, _ = brent_minimize(phi, x_prev, nxt, r, fr, tol=tol, max_iter=max_iter)
                break
            x_prev, r, fr = r, nxt, fn
    if not fx <= f0:
        return RateResult(0.0, f0, bracket, False)
    return RateResult(x, fx, bracket, False)


# --- BFGS ----------------------------------------------------------------------


def bfgs_update(H: np.ndarray, step: np.ndarray, dgrad: np.ndarray) -> tuple[np.ndarray, bool]:
    """Inverse-Hessian BFGS update. Returns ``(H, reset)``; resets to identity when
    the curvature condition fails or positive definiteness is lost."""
    n = len(step)
    ys = float(dgrad @ step)
    if not ys > CURVATURE_EPS:
        return np.eye(n), True
    rho = 1.0 / ys
    Hy = H @ dgrad
    Hn = H - rho * (np.outer(step, Hy) + np.outer(Hy, step)) \
        + (rho * rho * float(dgrad @ Hy) + rho) * np.outer(step, step)
    Hn = 0.5 * (Hn + Hn.T)
    try:
        np.linalg.cholesky(Hn)
    except np.linalg.LinAlgError:
        return np.eye(n), True
    return Hn, False


def bfgs_step(H: np.ndarray | None, grad: np.ndarray, prev_grad: np.ndarray | None = None,
              prev_step: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Search direction ``-H g`` and the updated inverse-Hessian approximation.

    ``H`` is the identity on the first call (``H`` or history missing).
    """
    g = np.asarray(grad, float)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    if H is None or prev_grad is None or prev_step is None:
        H = np.eye(len(g))
    else:
        H, _ = bfgs_update(H, prev_step, g - prev_grad)
    d = -H @ g
    if not float(d @ g) < 0.0:
        H = np.eye(len(g))
        d = -g
    return d, H


class MinimizeResult(NamedTuple):
    x: np.ndarray
    fun: float
    iterations: int
    history: list[float]


def quasi_newton(fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
                 fun: Callable[[np.ndarray], float], x0: np.ndarray, config: TrainConfig,
                 on_epoch: Callable[[int, np.ndarray, float], None] | None = None,
                 gtol: float = 0.0) -> MinimizeResult:
    """BFGS with Brent step lengths; stops after ``max_epochs`` or when an epoch
    improves the objective by less than ``min_improvement``."""
    x = np.array(x0, float)
    fx, g = fun_grad(x)
    history = [fx]
    if on_epoch:
        on_epoch(0, x, fx)
    H = prev_g = prev_s = None
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        d, H = bfgs_step(H, g, prev_g, prev_s)
        base = x
        rr = brent_rate(lambda r: fun(base + r * d), config.initial_rate, config.rate_max,
                        config.brent_tol, config.brent_max_iter, phi0=fx)
        x_new = base + rr.rate * d
        f_new, g_new = fun_grad(x_new)
        improvement = fx - f_new
        prev_s, prev_g = x_new - x, g
        x, fx, g = x_new, f_new, g_new
        history.append(fx)
        if on_epoch:
            on_epoch(epoch, x, fx)
        if improvement < config.min_improvement or float(np.linalg.norm(g)) <= gtol:
            break
    return MinimizeResult(x, fx, epoch, history)


# --- training ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RestartSummary:
    index: int
    epochs: int
    best_epoch: int
    min_validation: float
    train_history: list[float]
    validation_history: list[float]
    params: MlpParameters


@dataclass(frozen=True, eq=False)
class TrainingResult:
    arch: MlpArchitecture
    params: MlpParameters
    epochs: int
    seconds: int
    train_history: list[float]
    validation_history: list[float]
    best_epoch: int
    restart: int
    param_norm: float
    grad_norm: float
    train_error: float
    validation_error: float
    restarts: list[RestartSummary] = field(default_factory=list)

    def predict(self, x):
        return forward(self.arch, self.params, x)


def _run_restart(arch, scaling, obj_t, obj_v, config: TrainConfig, k: int) -> RestartSummary:
    p0 = init_params(arch, scaling, substream(config.seed, "init", arch.hidden, k))
    ev_hist: list[float] = []
    best = {"ev": math.inf, "zeta": p0.zeta, "epoch": 0}

    def on_epoch(epoch, zeta, _et):
        ev = obj_v.value(zeta)
        ev_hist.append(ev)
        if ev < best["ev"]:
            best.update(ev=ev, zeta=zeta.copy(), epoch=epoch)

    res = quasi_newton(obj_t.value_and_grad, obj_t.value, p0.zeta, config, on_epoch)
    return RestartSummary(k, res.iterations, best["epoch"], best["ev"], res.history, ev_hist,
                          MlpParameters(best["zeta"], scaling))


def train(arch: MlpArchitecture, dataset: CamouflageDataset, config: TrainConfig = TrainConfig()) -> TrainingResult:
    started = time.perf_counter()
    x_t, t_t = dataset.subset("train")
    x_v, t_v = dataset.subset("validation")
    scaling = Scaling.fit(x_t, t_t)
    obj_t = Objective(arch, scaling, x_t, t_t)
    obj_v = Objective(arch, scaling, x_v, t_v)
    ks = range(config.restarts)
    if config.threads > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            runs = list(pool.map(lambda k: _run_restart(arch, scaling, obj_t, obj_v, config, k), ks))
    else:
        runs = [_run_restart(arch, scaling, obj_t, obj_v, config, k) for k in ks]
    chosen = min(runs, key=lambda r: (r.min_validation, r.index))
    zeta = chosen.params.zeta
    _, g = obj_t.value_and_grad(zeta)
    return TrainingResult(
        arch=arch,
        params=chosen.params,
        epochs=chosen.epochs,
        seconds=int(round(time.perf_counter() - started)),
        train_history=chosen.train_history,
        validation_history=chosen.validation_history,
        best_epoch=chosen.best_epoch,
        restart=chosen.index,
        param_norm=float(np.linalg.norm(zeta)),
        grad_norm=float(np.linalg.norm(g)),
        train_error=obj_t.value(zeta),
        validation_error=chosen.min_validation,
        restarts=runs,
    )


# --- regression diagnostics ----------------------------------------------------


def linear_regression(x, y) -> tuple[float, float]:
    """Least-squares intercept ``a`` and slope ``b`` of ``y = a + b x`` (closed forms)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.size < 2:
        raise DataError("need at least two paired values")
    if np.all(x == x[0]):
        raise DataError("inputs have zero variance")
    q = x.size
    sx, sy, sxx, sxy = x.sum(), y.sum(), (x * x).sum(), (x * y).sum()
    den = q * sxx - sx * sx
    a = (sy * sxx - sx * sxy) / den
    b = (q * sxy - sx * sy) / den
    return float(a), float(b)


def r_squared(x, y) -> float:
    """Squared Pearson correlation coefficient."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.size < 2:
        raise DataError("need at least two paired values")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DataError("zero variance")
    return min(1.0, float(dx @ dy) ** 2 / (sxx * syy))


@dataclass(frozen=True)
class RegressionReport:
    a: float
    b: float
    r2: float
    q: int


def regression_report(result: TrainingResult, dataset: CamouflageDataset) -> RegressionReport:
    """Regress network outputs on targets over the test split."""
    x, t = dataset.subset("test")
    y = np.asarray(result.predict(x))
    a, b = linear_regression(t, y)
    return RegressionReport(a, b, r_squared(t, y), int(t.size))


# --- model selection -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SizeRow:
    hidden: int
    a: float
    b: float
    r2: float
    train_error: float
    validation_error: float
    result: TrainingResult


@dataclass(frozen=True, eq=False)
class Selection:
    chosen: int
    rows: list[SizeRow]

    @property
    def best(self) -> SizeRow:
        return next(r for r in self.rows if r.hidden == self.chosen)


def select_hidden_size(validation_errors: dict[int, float]) -> int:
    if not validation_errors:
        raise ValueError("no candidate sizes")
    return min(validation_errors, key=lambda s: (validation_errors[s], s))


def model_selection(dataset: CamouflageDataset, sizes: Sequence[int] = (2, 3, 4),
                    config: TrainConfig = TrainConfig()) -> Selection:
    rows = []
    for s in sizes:
        res = train(MlpArchitecture(s), dataset, config)
        rep = regression_report(res, dataset)
        rows.append(SizeRow(s, rep.a, rep.b, rep.r2, res.train_error, res.validation_error, res))
    chosen = select_hidden_size({r.hidden: r.validation_error for r in rows})
    return Selection(chosen, rows)
