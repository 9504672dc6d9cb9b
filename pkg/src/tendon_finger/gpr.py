"""Exact Gaussian-process regression for joint-torque estimation.

Kernel: squared-exponential plus white noise,

    k(x, x') = sf^2 exp(-|x - x'|^2 / (2 l^2)) + sn^2 delta(i, j)

where the delta is on training *indices*, not values, so repeated
measurements at the same input stay distinct observations.  The noise
variance is counted once in the training covariance ``K_rbf + sn^2 I``.

Inputs are z-scored per feature and targets z-scored, using training
statistics only; the hyperparameters therefore live in standardized units.
Hyperparameters maximise the log marginal likelihood with a bounded
Nelder-Mead search in log space from a scrambled Sobol grid of starts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.stats import qmc

from .errors import DataError, IllConditionedGramError, UndefinedMetricError, ValidationError

log = logging.getLogger(__name__)

FEATURES = ("motor_current", "motor_pos", "motor_vel", "joint_pos", "joint_vel", "temperature")
TARGET = "torque"
TEMPERATURE_BAND = (-20.0, 120.0)
FORMAT_NAME = "tendon-finger-gpr"
FORMAT_VERSION = 1

JITTER_START = 1e-10
JITTER_MAX = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FeatureVector:
    motor_current: float
    motor_pos: float
    motor_vel: float
    joint_pos: float
    joint_vel: float
    temperature: float

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise ValidationError("feature vector has non-finite components")
        lo, hi = TEMPERATURE_BAND
        if not lo <= self.temperature <= hi:
            raise ValidationError(f"temperature {self.temperature} outside sanity band [{lo}, {hi}]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURES], dtype=float)


@dataclass(frozen=True)
class SampleRecord:
    features: FeatureVector
    torque: float

    def __post_init__(self):
        if not np.isfinite(self.torque):
            raise ValidationError("torque label must be finite")


@dataclass(frozen=True)
class KernelHyperparams:
    signal_std: float
    length_scale: float | tuple
    noise_std: float

    def __post_init__(self):
        vals = np.concatenate([[self.signal_std, self.noise_std], np.atleast_1d(self.length_scale)])
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValidationError(f"hyperparameters must be positive, got {self}")

    @property
    def ard(self) -> bool:
        return np.ndim(self.length_scale) > 0

    def to_log(self) -> np.ndarray:
        return np.log(np.concatenate([[self.signal_std], np.atleast_1d(self.length_scale), [self.noise_std]]))

    @classmethod
    def from_log(cls, theta):
        theta = np.exp(np.asarray(theta, dtype=float))
        ls = theta[1:-1]
        length = float(ls[0]) if ls.size == 1 else tuple(float(v) for v in ls)
        return cls(float(theta[0]), length, float(theta[-1]))

    def as_dict(self) -> dict:
        ls = self.length_scale
        return {
            "signal_std": self.signal_std,
            "length_scale": list(ls) if self.ard else ls,
            "noise_std": self.noise_std,
        }


@dataclass(frozen=True)
class Prediction:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def from_data(cls, X, y):
        x_std = X.std(axis=0)
        x_std = np.where(x_std > 0, x_std, 1.0)
        y_std = float(y.std())
        return cls(X.mean(axis=0), x_std, float(y.mean()), y_std if y_std > 0 else 1.0)

    def transform_x(self, X):
        return (X - self.x_mean) / self.x_std

    def inverse_x(self, Z):
        return Z * self.x_std + self.x_mean

    def transform_y(self, y):
        return (y - self.y_mean) / self.y_std

    def inverse_y(self, z):
        return z * self.y_std + self.y_mean


def _sq_dists(A, B, length_scale):
    A = A / length_scale
    B = B / length_scale
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def rbf_gram(hp: KernelHyperparams, X1, X2) -> np.ndarray:
    """RBF part of the kernel between two sets of rows."""
    ls = np.asarray(hp.length_scale, dtype=float)
    return hp.signal_std**2 * np.exp(-0.5 * _sq_dists(np.atleast_2d(X1), np.atleast_2d(X2), ls))


def kernel_eval(hp: KernelHyperparams, x, x2, same_index: bool = False) -> float:
    """Scalar kernel value; the noise term applies only when ``same_index``."""
    x = np.asarray(getattr(x, "as_array", lambda: x)(), dtype=float)
    x2 = np.asarray(getattr(x2, "as_array", lambda: x2)(), dtype=float)
    diff = (x - x2) / np.asarray(hp.length_scale, dtype=float)
    value = hp.signal_std**2 * math.exp(-0.5 * float(diff @ diff))
    if same_index:
        value += hp.noise_std**2
    return value


def factorize(K: np.ndarray):
    """Lower Cholesky factor of ``K``, escalating diagonal jitter on failure.

    Tries no jitter, then 1e-10, 1e-9, ... up to 1e-4.  Returns the factor and
    the jitter that was needed.
    """
    jitter = 0.0
    while True:
        try:
            Kj = K if jitter == 0.0 else K + jitter * np.eye(K.shape[0])
            return linalg.cholesky(Kj, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise IllConditionedGramError(
                    f"Gram matrix not positive definite even with jitter {JITTER_MAX:g}"
                ) from None


def _train_cov(hp, X, count_noise_twice=False):
    K = rbf_gram(hp, X, X)
    noise = hp.noise_std**2 * (2.0 if count_noise_twice else 1.0)
    K[np.diag_indices_from(K)] += noise
    return K


def log_marginal_likelihood(X, y, hp: KernelHyperparams, count_noise_twice: bool = False) -> float:
    """Log evidence ``log p(y | X, hp)`` via a Cholesky factor.

    ``count_noise_twice`` adds the white-noise variance both through the
    kernel and through the explicit ``sn^2 I``; off by default.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 1:
        raise DataError("need at least one observation")
    L, _ = factorize(_train_cov(hp, X, count_noise_twice))
    a = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * y.size * _LOG_2PI)


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 8
    max_iter: int = 500
    tol: float = 1e-8
    seed: int = 0
    max_rows: int | None = 2000
    search_rows: int = 400
    ard: bool = False
    log_bounds: tuple = ((-7.0, 4.6), (-4.6, 4.6), (-11.5, 2.3))  # sf, l, sn
    start_box: tuple = ((-1.2, 1.1), (-1.2, 1.6), (-6.9, -1.2))

    def __post_init__(self):
        if self.restarts < 1 or self.max_iter < 1 or not self.tol > 0:
            raise ValidationError("need restarts >= 1, max_iter >= 1 and tol > 0")
        if self.search_rows < 2 or (self.max_rows is not None and self.max_rows < 2):
            raise ValidationError("search_rows and max_rows must be at least 2")


@dataclass(frozen=True, eq=False)
class GprModel:
    X: np.ndarray  # standardized training inputs
    y: np.ndarray  # standardized training targets
    hyperparams: KernelHyperparams
    standardizer: Standardizer
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    lml: float = float("nan")
    restart_log: tuple = field(default=())

    @property
    def n_train(self) -> int:
        return self.y.size


def _validate_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError(f"inputs {X.shape} and targets {y.shape} do not line up")
    bad = ~np.all(np.isfinite(X), axis=1) | ~np.isfinite(y)
    if np.any(bad):
        raise DataError(f"non-finite value in row {int(np.flatnonzero(bad)[0])}")
    return X, y


def condition(X, y, hp: KernelHyperparams, standardizer: Standardizer | None = None, **extra) -> GprModel:
    """Build a posterior for fixed hyperparameters (no optimisation)."""
    X, y = _validate_xy(X, y)
    if standardizer is None:
        standardizer = Standardizer.from_data(X, y)
    Xs = standardizer.transform_x(X)
    ys = standardizer.transform_y(y)
    L, jitter = factorize(_train_cov(hp, Xs))
    alpha = linalg.cho_solve((L, True), ys, check_finite=False)
    return GprModel(Xs, ys, hp, standardizer, L, alpha, jitter, **extra)


def _start_points(opts: FitOptions, dim: int) -> np.ndarray:
    sampler = qmc.Sobol(d=3, scramble=True, seed=opts.seed)
    # draw a full power-of-two block (keeps the Sobol balance) and use its head
    u = sampler.random_base2(max(0, math.ceil(math.log2(opts.restarts))))[: opts.restarts]
    box = np.array(opts.start_box)
    pts = box[:, 0] + u * (box[:, 1] - box[:, 0])
    if dim == 3:
        return pts
    return np.column_stack([pts[:, :1], np.repeat(pts[:, 1:2], dim - 2, axis=1), pts[:, 2:]])


def _bounds(opts: FitOptions, dim: int):
    sf, ls, sn = opts.log_bounds
    return [sf] + [ls] * (dim - 2) + [sn]


def _neg_lml(theta, X, y):
    try:
        return -log_marginal_likelihood(X, y, KernelHyperparams.from_log(theta))
    except (IllConditionedGramError, ValidationError):
        return 1e12


def _nelder_mead(x0, X, y, opts, dim):
    res = optimize.minimize(
        _neg_lml,
        x0,
        args=(X, y),
        method="Nelder-Mead",
        bounds=_bounds(opts, dim),
        options={"maxiter": opts.max_iter, "fatol": opts.tol, "xatol": 1e-4},
    )
    return res.x, -res.fun


def fit(X, y, options: FitOptions | None = None) -> GprModel:
    """Fit hyperparameters by maximum marginal likelihood and condition on the data.

    With more than ``max_rows`` rows a seeded uniform subsample is used.
    When the training set is larger than ``search_rows``, the multi-start
    search runs on a seeded subset first and the best candidate is then
    refined on the full training set; the returned optimum is never worse
    than any start point evaluated on the full set.
    """
    opts = options or FitOptions()
    X, y = _validate_xy(X, y)
    if y.size < 2:
        raise DataError(f"need at least 2 samples to fit, got {y.size}")
    if np.all(X == X[0]):
        raise DataError("all input rows are identical; nothing to learn")

    rng = np.random.default_rng(opts.seed)
    if opts.max_rows is not None and y.size > opts.max_rows:
        log.info("subsampling %d rows to %d (seed %d)", y.size, opts.max_rows, opts.seed)
        idx = np.sort(rng.choice(y.size, opts.max_rows, replace=False))
        X, y = X[idx], y[idx]

    std = Standardizer.from_data(X, y)
    Xs, ys = std.transform_x(X), std.transform_y(y)
    dim = 2 + (X.shape[1] if opts.ard else 1)
    starts = _start_points(opts, dim)

    if y.size > opts.search_rows:
        sub = np.sort(rng.choice(y.size, opts.search_rows, replace=False))
        candidates = [_nelder_mead(s, Xs[sub], ys[sub], opts, dim)[0] for s in starts]
        pool = list(starts) + candidates
        scores = [-_neg_lml(p, Xs, ys) for p in pool]
        initial = scores[: len(starts)]
        best = int(np.argmax(scores))
        theta, best_lml = _nelder_mead(pool[best], Xs, ys, opts, dim)
        if best_lml < scores[best]:
            theta, best_lml = pool[best], scores[best]
        restart_log = tuple((float(a), float(best_lml)) for a in initial)
    else:
        results = []
        for s in starts:
            theta_i, lml_i = _nelder_mead(s, Xs, ys, opts, dim)
            init_i = -_neg_lml(s, Xs, ys)
            if lml_i < init_i:
                theta_i, lml_i = s, init_i
            results.append((theta_i, lml_i, init_i))
        # ties go to the lowest restart index
        best = max(range(len(results)), key=lambda i: (results[i][1], -i))
        theta, best_lml = results[best][0], results[best][1]
        restart_log = tuple((float(r[2]), float(r[1])) for r in results)

    hp = KernelHyperparams.from_log(theta)
    return condition(X, y, hp, std, lml=float(best_lml), restart_log=restart_log)


def predict(model: GprModel, X, chunk: int = 4096) -> Prediction:
    """Posterior mean and standard deviation of the latent torque."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    std = model.standardizer
    hp = model.hyperparams
    means, sds = [], []
    for start in range(0, X.shape[0], chunk):
        Z = std.transform_x(X[start : start + chunk])
        Ks = rbf_gram(hp, Z, model.X)
        means.append(Ks @ model.alpha)
        v = linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
        var = hp.signal_std**2 - (v * v).sum(axis=0)
        sds.append(np.sqrt(np.maximum(var, 0.0)))
    mean = std.inverse_y(np.concatenate(means)) if means else np.empty(0)
    sd = np.concatenate(sds) * std.y_std if sds else np.empty(0)
    return Prediction(mean, sd)


def predict_mean(model: GprModel, X) -> np.ndarray:
    """Posterior mean only; skips the triangular solve (used inside control loops)."""
    Z = model.standardizer.transform_x(np.atleast_2d(np.asarray(X, dtype=float)))
    return model.standardizer.inverse_y(rbf_gram(model.hyperparams, Z, model.X) @ model.alpha)


def regression_metrics(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.size == 0:
        raise DataError("empty test set")
    resid = y_true - y_pred
    ss_res = float(resid @ resid)
    centred = y_true - y_true.mean()
    ss_tot = float(centred @ centred)
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 undefined: test targets have zero variance")
    return {"mse": ss_res / y_true.size, "r2": 1.0 - ss_res / ss_tot}


def evaluate(model: GprModel, X, y) -> dict:
    """MSE and R^2 of the posterior mean on a test set."""
    X, y = _validate_xy(X, y)
    return regression_metrics(y, predict(model, X).mean)


# -- serialization ---------------------------------------------------------


def model_to_dict(model: GprModel) -> dict:
    s = model.standardizer
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "features": list(FEATURES),
        "hyperparams": model.hyperparams.as_dict(),
        "jitter": model.jitter,
        "lml": model.lml,
        "standardization": {
            "x_mean": s.x_mean.tolist(),
            "x_std": s.x_std.tolist(),
            "y_mean": s.y_mean,
            "y_std": s.y_std,
        },
        "train_inputs": s.inverse_x(model.X).tolist(),
        "train_targets": s.inverse_y(model.y).tolist(),
        "train_inputs_standardized": model.X.tolist(),
        "train_targets_standardized": model.y.tolist(),
    }


def model_from_dict(doc: dict) -> GprModel:
    if doc.get("format") != FORMAT_NAME:
        raise ValidationError(f"not a {FORMAT_NAME} document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported model format version {doc.get('format_version')}")
    hpd = doc["hyperparams"]
    ls = hpd["length_scale"]
    hp = KernelHyperparams(hpd["signal_std"], tuple(ls) if isinstance(ls, list) else ls, hpd["noise_std"])
    sd = doc["standardization"]
    std = Standardizer(np.array(sd["x_mean"]), np.array(sd["x_std"]), sd["y_mean"], sd["y_std"])
    Xs = np.array(doc["train_inputs_standardized"], dtype=float)
    ys = np.array(doc["train_targets_standardized"], dtype=float)
    K = _train_cov(hp, Xs)
    if doc["jitter"]:
        K[np.diag_indices_from(K)] += doc["jitter"]
    L = linalg.cholesky(K, lower=True, check_finite=False)
    alpha = linalg.cho_solve((L, True), ys, check_finite=False)
    return GprModel(Xs, ys, hp, std, L, alpha, doc["jitter"], doc["lml"])


def save_model(model: GprModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path) -> GprModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValidationError(f"{path}: not a model file ({err})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: not a model file")
    try:
        return model_from_dict(doc)
    except KeyError as err:
        raise ValidationError(f"{path}: model file lacks field {err}") from None
