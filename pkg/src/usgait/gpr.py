"""Exact Gaussian process regression.

Single-output GP with either a rational quadratic kernel

    k(x, x') = sf2 * (1 + |x - x'|^2 / (2 * alpha * ell^2)) ** -alpha

or a degree-2 polynomial kernel

    k(x, x') = (bias + x.x' / ell^2) ** 2

plus i.i.d. observation noise ``noise_variance``.  Targets are z-scored
internally; the GP itself has zero prior mean in that space, so far from the
data predictions revert to the training-target mean.

Fitting factorizes ``K + noise*I`` by Cholesky, escalating a diagonal jitter
(0, 1e-10, 1e-8, 1e-6 times the mean diagonal) if the factorization fails.
Hyperparameters live in log-space and are chosen by maximizing the log
marginal likelihood with Nelder-Mead from a few seeded starting points.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .errors import (
    DegenerateTargets,
    DimensionMismatch,
    InputError,
    ModelFormatError,
    NotPositiveDefinite,
    UnsupportedVersion,
)
from .features import Standardization

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
LOG_2PI = np.log(2.0 * np.pi)
LOG_PARAM_BOUNDS = (-14.0, 14.0)


class KernelFamily(str, enum.Enum):
    RATIONAL_QUADRATIC = "rational_quadratic"
    POLYNOMIAL_DEGREE2 = "polynomial_degree2"


class Target(str, enum.Enum):
    KNEE_ANGLE = "knee_angle"
    KNEE_VELOCITY = "knee_velocity"


_LOG_FIELDS = {
    KernelFamily.RATIONAL_QUADRATIC: ("signal_variance", "length_scale", "alpha", "noise_variance"),
    KernelFamily.POLYNOMIAL_DEGREE2: ("bias", "length_scale", "noise_variance"),
}


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily = KernelFamily.RATIONAL_QUADRATIC
    signal_variance: float = 1.0
    length_scale: float = 1.0
    alpha: float = 1.0
    bias: float = 1.0
    noise_variance: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not (self.signal_variance > 0 and self.length_scale > 0 and self.alpha > 0):
            raise InputError("signal_variance, length_scale and alpha must be > 0")
        if not (self.bias >= 0 and self.noise_variance >= 0):
            raise InputError("bias and noise_variance must be >= 0")

    @property
    def param_names(self) -> tuple[str, ...]:
        return _LOG_FIELDS[self.family]

    def log_params(self) -> np.ndarray:
        return np.log([max(getattr(self, name), 1e-300) for name in self.param_names])

    @classmethod
    def from_log_params(cls, family, theta) -> "KernelSpec":
        family = KernelFamily(family)
        values = np.exp(np.clip(np.asarray(theta, dtype=np.float64), -700, 700))
        return cls(family, **dict(zip(_LOG_FIELDS[family], map(float, values))))


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    """Kernel value for a single pair of vectors (noise not included)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if x.shape != x2.shape:
        raise DimensionMismatch(f"{x.size} vs {x2.size} dims")
    if spec.family is KernelFamily.RATIONAL_QUADRATIC:
        r2 = float(np.sum((x - x2) ** 2))
        return spec.signal_variance * (1.0 + r2 / (2.0 * spec.alpha * spec.length_scale ** 2)) ** -spec.alpha
    return (spec.bias + float(x @ x2) / spec.length_scale ** 2) ** 2


def _sq_dists(x, x2):
    a = np.einsum("ij,ij->i", x, x)
    b = a if x2 is None else np.einsum("ij,ij->i", x2, x2)
    cross = x @ (x if x2 is None else x2).T
    d = a[:, None] + b[None, :] - 2.0 * cross
    np.maximum(d, 0.0, out=d)
    if x2 is None:
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
    return d


def _base_matrix(family: KernelFamily, x, x2=None) -> np.ndarray:
    """Hyperparameter-free part of the Gram matrix: squared distances or dot products."""
    if family is KernelFamily.RATIONAL_QUADRATIC:
        return _sq_dists(x, x2)
    dot = x @ (x if x2 is None else x2).T
    if x2 is None:
        dot = 0.5 * (dot + dot.T)
    return dot


def _gram_from_base(spec: KernelSpec, base: np.ndarray) -> np.ndarray:
    if spec.family is KernelFamily.RATIONAL_QUADRATIC:
        d = base * (1.0 / (2.0 * spec.alpha * spec.length_scale ** 2))
        d += 1.0
        return spec.signal_variance * d ** -spec.alpha
    return (spec.bias + base / spec.length_scale ** 2) ** 2


def gram(spec: KernelSpec, x, x2=None) -> np.ndarray:
    """Kernel matrix between rows of ``x`` and ``x2`` (``x`` with itself if None).

    The self-Gram matrix is exactly symmetric.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x2 is not None:
        x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
        if x2.shape[1] != x.shape[1]:
            raise DimensionMismatch(f"{x.shape[1]} vs {x2.shape[1]} dims")
    return _gram_from_base(spec, _base_matrix(spec.family, x, x2))


def _prior_diag(spec: KernelSpec, x) -> np.ndarray:
    if spec.family is KernelFamily.RATIONAL_QUADRATIC:
        return np.full(x.shape[0], spec.signal_variance)
    return (spec.bias + np.einsum("ij,ij->i", x, x) / spec.length_scale ** 2) ** 2


def cholesky_with_jitter(k: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``k``, adding diagonal jitter on failure."""
    scale = float(np.mean(np.diag(k)))
    if not np.isfinite(scale):
        raise NotPositiveDefinite("non-finite kernel matrix")
    for rel in JITTER_LADDER:
        jitter = rel * scale
        try:
            kk = k + jitter * np.eye(k.shape[0]) if jitter else k
            chol = linalg.cholesky(kk, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.diag(chol) > 0) and np.all(np.isfinite(chol)):
            return chol, jitter
    raise NotPositiveDefinite(
        f"Cholesky failed with jitter up to {JITTER_LADDER[-1]:g} x mean diagonal"
    )


def log_marginal_likelihood(chol: np.ndarray, y, weights) -> float:
    """``-0.5 y.w - sum(log diag L) - N/2 log(2 pi)``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    return float(-0.5 * y @ np.asarray(weights).ravel()
                 - np.sum(np.log(np.diag(chol))) - 0.5 * y.size * LOG_2PI)


@dataclass(frozen=True)
class GprModel:
    kernel: KernelSpec
    training_inputs: np.ndarray  # already in the model's input space
    target_mean: float
    target_sd: float
    chol: np.ndarray = field(repr=False)
    dual_weights: np.ndarray = field(repr=False)
    jitter_used: float
    target_name: Target | None = None
    input_scaling: Standardization | None = None
    targets_standardized: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_train(self) -> int:
        return self.training_inputs.shape[0]

    @property
    def dims(self) -> int:
        return self.training_inputs.shape[1]

    @property
    def standardized_targets(self) -> np.ndarray:
        if self.targets_standardized is not None:
            return self.targets_standardized
        # y = (K + noise I + jitter I) w
        return self.chol @ (self.chol.T @ self.dual_weights)

    @property
    def log_marginal_likelihood(self) -> float:
        return log_marginal_likelihood(self.chol, self.standardized_targets, self.dual_weights)


def _as_rows(x) -> np.ndarray:
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _target_scaling(y: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(y))
    sd = float(np.std(y))
    if not sd > 0:
        sd = 1.0
    return mean, sd


def _factorize(spec: KernelSpec, x: np.ndarray, ys: np.ndarray, base=None):
    k = gram(spec, x) if base is None else _gram_from_base(spec, base)
    k[np.diag_indices_from(k)] += spec.noise_variance
    chol, jitter = cholesky_with_jitter(k)
    w = linalg.cho_solve((chol, True), ys, check_finite=False)
    return chol, jitter, w


def fit(inputs, targets, spec: KernelSpec, target_name: Target | None = None,
        input_scaling: Standardization | None = None) -> GprModel:
    """Condition a GP on ``(inputs, targets)`` with fixed hyperparameters.

    With ``input_scaling`` the inputs are raw rows that the model z-scores
    (at fit and at prediction time).
    """
    x = _as_rows(inputs)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if x.shape[0] != y.size:
        raise DimensionMismatch(f"{x.shape[0]} input rows but {y.size} targets")
    if x.shape[0] < 2:
        raise InputError("at least 2 training rows are required")
    if not np.all(np.isfinite(y)):
        raise DegenerateTargets("targets contain NaN or Inf")
    if not np.all(np.isfinite(x)):
        raise InputError("inputs contain NaN or Inf")
    if input_scaling is not None:
        x = input_scaling.apply(x)
    mean, sd = _target_scaling(y)
    ys = (y - mean) / sd
    chol, jitter, w = _factorize(spec, x, ys)
    return GprModel(spec, x, mean, sd, chol, w, jitter,
                    Target(target_name) if target_name is not None else None, input_scaling, ys)


def predict(model: GprModel, query_rows, return_variance: bool = False):
    """Predictive mean (target units) and optionally the latent variance.

    The variance is ``k(q, q) - v.v`` with ``v = L^-1 k(train, q)``, floored at
    zero and scaled back to target units.
    """
    q = _as_rows(query_rows)
    if q.shape[1] != model.dims:
        raise DimensionMismatch(f"query has {q.shape[1]} dims, model {model.dims}")
    if model.input_scaling is not None:
        q = model.input_scaling.apply(q)
    kq = gram(model.kernel, q, model.training_inputs)
    mean = kq @ model.dual_weights * model.target_sd + model.target_mean
    if not return_variance:
        return mean
    v = linalg.solve_triangular(model.chol, kq.T, lower=True, check_finite=False)
    var = _prior_diag(model.kernel, q) - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0) * model.target_sd ** 2


def predict_mean(model: GprModel, query_rows) -> np.ndarray:
    return predict(model, query_rows)


# ------------------------------------------------------- hyperparameter search


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 3
    max_iter: int = 200
    rel_tol: float = 1e-6
    seed: int = 0
    #: optional explicit first starting point
    initial: KernelSpec | None = None
    #: log-space SD of the seeded perturbations around the first start
    spread: float = 1.0


def default_initial_spec(family, x: np.ndarray) -> KernelSpec:
    """Data-scaled starting point: length scale = median pairwise distance."""
    family = KernelFamily(family)
    sub = x[:: max(1, x.shape[0] // 200)]
    d = np.sqrt(_sq_dists(sub, None)[np.triu_indices(sub.shape[0], 1)])
    d = d[d > 0]
    ell = float(np.median(d)) if d.size else 1.0
    if family is KernelFamily.RATIONAL_QUADRATIC:
        return KernelSpec(family, signal_variance=1.0, length_scale=ell, alpha=1.0, noise_variance=0.1)
    return KernelSpec(family, bias=1.0, length_scale=max(ell, 1e-3), noise_variance=0.1)


def negative_lml(theta, family, x, ys, base=None) -> float:
    """``-LML`` at log-hyperparameters ``theta``; 1e300 where the fit fails.

    ``base`` optionally caches the hyperparameter-free matrix of ``x``.
    """
    try:
        spec = KernelSpec.from_log_params(family, theta)
        chol, _, w = _factorize(spec, x, ys, base)
    except (NotPositiveDefinite, InputError, FloatingPointError, ValueError):
        return 1e300
    val = -log_marginal_likelihood(chol, ys, w)
    return val if np.isfinite(val) else 1e300


def optimize_hyperparameters(inputs, targets, family=KernelFamily.RATIONAL_QUADRATIC,
                             config: OptimizerConfig = OptimizerConfig()) -> KernelSpec:
    """Maximize the log marginal likelihood over log-hyperparameters.

    Starts: ``config.initial`` (or a data-scaled default) plus
    ``restarts - 1`` seeded log-normal perturbations of it.  The best point
    seen, starts included, is returned.
    """
    x = _as_rows(inputs)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if x.shape[0] < 5:
        raise InputError("hyperparameter search needs at least 5 rows")
    if not np.all(np.isfinite(y)):
        raise DegenerateTargets("targets contain NaN or Inf")
    family = KernelFamily(family)
    mean, sd = _target_scaling(y)
    ys = (y - mean) / sd

    first = config.initial if config.initial is not None else default_initial_spec(family, x)
    if first.family is not family:
        raise InputError("initial spec family does not match")
    rng = np.random.default_rng(config.seed)
    theta0 = first.log_params()
    starts = [theta0] + [theta0 + config.spread * rng.standard_normal(theta0.size)
                         for _ in range(max(config.restarts, 1) - 1)]
    lo, hi = LOG_PARAM_BOUNDS
    base = _base_matrix(family, x)

    def objective(theta):
        return negative_lml(np.clip(theta, lo, hi), family, x, ys, base)

    best_theta, best_val = None, np.inf
    for start in starts:
        start = np.clip(start, lo, hi)
        f0 = objective(start)
        if f0 < best_val:
            best_theta, best_val = start, f0
        if f0 >= 1e300:
            continue
        res = optimize.minimize(
            objective, start, method="Nelder-Mead",
            options={"maxiter": config.max_iter, "xatol": 1e-6,
                     "fatol": config.rel_tol * max(1.0, abs(f0))},
        )
        if res.fun < best_val:
            best_theta, best_val = np.clip(res.x, lo, hi), float(res.fun)
    if best_theta is None or best_val >= 1e300:
        raise NotPositiveDefinite("no starting point produced a valid factorization")
    return KernelSpec.from_log_params(family, best_theta)


# ----------------------------------------------------------- serialization

MODEL_MAGIC = b"USGP"
MODEL_VERSION = 1
_MODEL_HEAD = struct.Struct("<4sHI")


def model_to_bytes(model: GprModel) -> bytes:
    header = {
        "family": model.kernel.family.value,
        "params": {n: getattr(model.kernel, n) for n in
                   ("signal_variance", "length_scale", "alpha", "bias", "noise_variance")},
        "log_params": [float(v) for v in model.kernel.log_params()],
        "target_name": model.target_name.value if model.target_name else None,
        "target_mean": model.target_mean,
        "target_sd": model.target_sd,
        "jitter_used": model.jitter_used,
        "n": model.n_train,
        "d": model.dims,
        "scaled": model.input_scaling is not None,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    parts = [_MODEL_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, len(hbytes)), hbytes,
             model.training_inputs.astype("<f8").tobytes(),
             model.dual_weights.astype("<f8").tobytes()]
    if model.input_scaling is not None:
        parts += [model.input_scaling.mean.astype("<f8").tobytes(),
                  model.input_scaling.sd.astype("<f8").tobytes()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def model_from_bytes(blob: bytes) -> GprModel:
    if len(blob) < _MODEL_HEAD.size + 32:
        raise ModelFormatError("model blob too short")
    body, digest = blob[:-32], blob[-32:]
    magic, version, hlen = _MODEL_HEAD.unpack_from(body)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise UnsupportedVersion(f"model version {version}, expected {MODEL_VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("checksum mismatch")
    off = _MODEL_HEAD.size
    header = json.loads(body[off:off + hlen])
    off += hlen
    n, d = header["n"], header["d"]

    def take(count):
        nonlocal off
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += 8 * count
        return arr

    x = take(n * d).reshape(n, d)
    w = take(n)
    scaling = Standardization(take(d), take(d)) if header["scaled"] else None
    if off != len(body):
        raise ModelFormatError("unexpected trailing bytes")
    spec = KernelSpec(KernelFamily(header["family"]), **header["params"])
    k = gram(spec, x)
    k[np.diag_indices_from(k)] += spec.noise_variance + header["jitter_used"]
    chol = linalg.cholesky(k, lower=True, check_finite=False)
    tn = header["target_name"]
    return GprModel(spec, x, header["target_mean"], header["target_sd"], chol, w,
                    header["jitter_used"], Target(tn) if tn else None, scaling)


def save_model(model: GprModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> GprModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def with_noise(spec: KernelSpec, noise_variance: float) -> KernelSpec:
    return replace(spec, noise_variance=noise_variance)
