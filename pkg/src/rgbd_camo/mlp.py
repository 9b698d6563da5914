"""One-input, tanh-hidden, linear-output regression network.

The flat parameter vector is laid out as ``[w (s), b1 (s), v (s), b2]`` so that

    y = t_mean + t_std * (b2 + sum_j v_j * tanh(w_j * (x - x_mean) / x_std + b1_j))
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError


@dataclass(frozen=True)
class MlpArchitecture:
    hidden: int = 3
    inputs: int = 1
    outputs: int = 1

    def __post_init__(self):
        if self.inputs != 1 or self.outputs != 1:
            raise ValueError("only single-input, single-output networks are supported")
        if self.hidden < 1:
            raise ValueError("hidden layer needs at least one neuron")

    @property
    def n_params(self) -> int:
        return 3 * self.hidden + 1


@dataclass(frozen=True)
class Scaling:
    x_mean: float = 0.0
    x_std: float = 1.0
    t_mean: float = 0.0
    t_std: float = 1.0

    def __post_init__(self):
        if not (self.x_std > 0 and self.t_std > 0):
            raise DataError("scaling standard deviations must be positive")

    @classmethod
    def fit(cls, x, t) -> "Scaling":
        x = np.asarray(x, float)
        t = np.asarray(t, float)
        xs, ts = float(x.std()), float(t.std())
        if xs == 0.0 or ts == 0.0:
            raise DataError("training inputs and targets must both vary")
        return cls(float(x.mean()), xs, float(t.mean()), ts)


IDENTITY = Scaling()


@dataclass(frozen=True, eq=False)
class MlpParameters:
    zeta: np.ndarray
    scaling: Scaling = field(default_factory=Scaling)

    def __post_init__(self):
        z = np.array(self.zeta, dtype=float).reshape(-1)
        z.setflags(write=False)
        object.__setattr__(self, "zeta", z)

    def with_zeta(self, zeta) -> "MlpParameters":
        return MlpParameters(zeta, self.scaling)


def _check(arch: MlpArchitecture, params: MlpParameters) -> None:
    if params.zeta.shape != (arch.n_params,):
        raise ValueError(f"expected {arch.n_params} parameters for s={arch.hidden}, "
                         f"got {params.zeta.size}")


def _unpack(zeta: np.ndarray, s: int):
    return zeta[:s], zeta[s : 2 * s], zeta[2 * s : 3 * s], zeta[3 * s]


def _outputs(zeta: np.ndarray, s: int, xs: np.ndarray, sc: Scaling) -> np.ndarray:
    w, b1, v, b2 = _unpack(zeta, s)
    h = np.tanh(np.multiply.outer(xs, w) + b1)
    return sc.t_mean + sc.t_std * (b2 + h @ v)


def forward(arch: MlpArchitecture, params: MlpParameters, x):
    _check(arch, params)
    sc = params.scaling
    xa = np.asarray(x, dtype=float)
    y = _outputs(params.zeta, arch.hidden, (xa - sc.x_mean) / sc.x_std, sc)
    return float(y) if np.ndim(x) == 0 else y


def _target_spread(t: np.ndarray) -> float:
    if t.size == 0:
        raise DataError("empty subset")
    den = float(np.sum((t - t.mean()) ** 2))
    if den == 0.0:
        raise DataError("targets have zero variance")
    return den


class Objective:
    """Normalized squared error and its gradient on one fixed subset.

    Inputs are scaled once; used by the trainer for every line-search probe.
    """

    def __init__(self, arch: MlpArchitecture, scaling: Scaling, x, t):
        self.s = arch.hidden
        self.scaling = scaling
        x = np.asarray(x, float).reshape(-1)
        self.t = np.asarray(t, float).reshape(-1)
        if x.shape != self.t.shape:
            raise DataError("inputs and targets differ in length")
        self.xs = (x - scaling.x_mean) / scaling.x_std
        self.den = _target_spread(self.t)

    def value(self, zeta: np.ndarray) -> float:
        r = _outputs(zeta, self.s, self.xs, self.scaling) - self.t
        return float(r @ r) / self.den

    def value_and_grad(self, zeta: np.ndarray) -> tuple[float, np.ndarray]:
        s = self.s
        w, b1, v, b2 = _unpack(zeta, s)
        h = np.tanh(np.multiply.outer(self.xs, w) + b1)
        r = self.scaling.t_mean + self.scaling.t_std * (b2 + h @ v) - self.t
        e = float(r @ r) / self.den
        g_out = (2.0 * self.scaling.t_std / self.den) * r
        g_a = np.multiply.outer(g_out, v) * (1.0 - h * h)
        grad = np.empty_like(zeta)
        grad[:s] = self.xs @ g_a
        grad[s : 2 * s] = g_a.sum(axis=0)
        grad[2 * s : 3 * s] = g_out @ h
        grad[3 * s] = g_out.sum()
        return e, grad


def normalized_squared_error(arch: MlpArchitecture, params: MlpParameters, x, t) -> float:
    _check(arch, params)
    return Objective(arch, params.scaling, x, t).value(params.zeta)


def gradient(arch: MlpArchitecture, params: MlpParameters, x, t) -> np.ndarray:
    _check(arch, params)
    return Objective(arch, params.scaling, x, t).value_and_grad(params.zeta)[1]


def init_params(arch: MlpArchitecture, scaling: Scaling, rng: np.random.Generator) -> MlpParameters:
    return MlpParameters(rng.uniform(-1.0, 1.0, arch.n_params), scaling)


# --- dataset -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def tags(self, q: int) -> list[str]:
        out = [""] * q
        for name, idx in (("train", self.train), ("validation", self.validation), ("test", self.test)):
            for i in idx.tolist():
                out[i] = name
        return out

    @classmethod
    def from_tags(cls, tags: list[str]) -> "Split":
        arr = np.array(tags)
        bad = set(tags) - {"train", "validation", "test"}
        if bad:
            raise FormatError(f"unknown split tags {sorted(bad)}")
        return cls(*(np.flatnonzero(arr == k) for k in ("train", "validation", "test")))


def split_dataset(q: int, proportions=(0.5, 0.25, 0.25), seed: int | np.random.Generator = 0) -> Split:
    """Random split; validation and test sizes are floored, training takes the rest."""
    if len(proportions) != 3 or abs(sum(proportions) - 1.0) > 1e-9 or min(proportions) <= 0:
        raise DataError("proportions must be three positive fractions summing to 1")
    n_val = math.floor(q * proportions[1] + 1e-9)
    n_test = math.floor(q * proportions[2] + 1e-9)
    n_train = q - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"{q} instances cannot fill three non-empty splits")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(q)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train : n_train + n_val]),
                 np.sort(perm[n_train + n_val :]))


@dataclass(frozen=True, eq=False)
class CamouflageDataset:
    angle_in: np.ndarray
    angle_target: np.ndarray
    split: Split

    def __post_init__(self):
        a = np.array(self.angle_in, float)
        b = np.array(self.angle_target, float)
        if a.shape != b.shape or a.ndim != 1:
            raise DataError("angle arrays must be 1-D and of equal length")
        idx = np.concatenate([self.split.train, self.split.validation, self.split.test])
        if sorted(idx.tolist()) != list(range(len(a))):
            raise DataError("splits must be disjoint and cover every instance")
        object.__setattr__(self, "angle_in", a)
        object.__setattr__(self, "angle_target", b)

    def __len__(self) -> int:
        return len(self.angle_in)

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.split.train, "validation": self.split.validation,
               "test": self.split.test}[name]
        return self.angle_in[idx], self.angle_target[idx]


# --- model files -------------------------------------------------------------


def format_model(arch: MlpArchitecture, params: MlpParameters) -> str:
    _check(arch, params)
    sc = params.scaling
    lines = [f"mlp {arch.inputs} {arch.hidden} {arch.outputs}",
             "scaling " + " ".join("%.17g" % v for v in (sc.x_mean, sc.x_std, sc.t_mean, sc.t_std))]
    lines += ["%.17g" % z for z in params.zeta]
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> tuple[MlpArchitecture, MlpParameters]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    try:
        head = lines[0].split()
        if head[0] != "mlp":
            raise FormatError("model file must start with 'mlp'")
        arch = MlpArchitecture(int(head[2]), int(head[1]), int(head[3]))
        sc_tok = lines[1].split()
        if sc_tok[0] != "scaling":
            raise FormatError("second line must hold the scaling")
        scaling = Scaling(*map(float, sc_tok[1:5]))
        zeta = np.array([float(v) for v in lines[2:]])
    except (IndexError, ValueError, DataError) as exc:
        raise FormatError(f"bad model file: {exc}") from exc
    if zeta.size != arch.n_params:
        raise FormatError(f"model lists {zeta.size} parameters, expected {arch.n_params}")
    return arch, MlpParameters(zeta, scaling)


def save_model(path: str | Path, arch: MlpArchitecture, params: MlpParameters) -> None:
    Path(path).write_text(format_model(arch, params))


def load_model(path: str | Path) -> tuple[MlpArchitecture, MlpParameters]:
    try:
        return parse_model(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read model {path}: {exc}") from exc
