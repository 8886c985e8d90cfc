"""Gaussian-process regression of residual dynamics.

Fits one independent GP per state coordinate to residual measurements
y = x' - f(x) - g(x) u, predicts the posterior mean and standard deviation
at query points, and computes the confidence scalars

    beta_i = sqrt(2 ||w_i||_k^2 + 300 gamma_i ln^3((Q + 1) / delta))

that turn the posterior into a high-probability tube around the true
residual (the joint guarantee holds with probability (1 - delta)^n).

Only the squared-exponential kernel ships; the ``matern`` tag is reserved
in the config enum but unimplemented.  Coordinates with identical kernel
configuration share one Gram factorization (the Gram matrix depends only
on the inputs and the kernel, not on the targets).
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.linalg.lapack import dtrtri

from .backend import kernels as _k

KERNEL_KINDS = ("squared-exponential", "matern")  # matern reserved, not shipped

#: Jitter ladder relative to signal variance; 0 first so exact closed forms
#: survive when the factorization needs no regularization.
_JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class KernelConfigError(ValueError):
    """Invalid kernel configuration."""


class IllConditionedKernel(RuntimeError):
    """Gram factorization failed even after jitter escalation."""


@dataclass(frozen=True)
class KernelConfig:
    """Stationary kernel configuration (per coordinate)."""

    lengthscales: Tuple[float, ...]
    signal_variance: float = 1.0
    kind: str = "squared-exponential"

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelConfigError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.kind != "squared-exponential":
            raise NotImplementedError(f"kernel kind {self.kind!r} is reserved but not implemented")
        object.__setattr__(self, "lengthscales", tuple(float(l) for l in np.atleast_1d(self.lengthscales)))
        if any(l <= 0 for l in self.lengthscales):
            raise KernelConfigError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise KernelConfigError("signal_variance must be positive")

    @property
    def lengthscale_array(self) -> np.ndarray:
        return np.asarray(self.lengthscales, dtype=float)


def kernel_eval(cfg: KernelConfig, x, x2) -> float:
    """k(x, x2) = signal_variance * exp(-0.5 * sum_j ((x_j - x2_j)/l_j)^2)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    ls = cfg.lengthscale_array
    if x.shape != ls.shape or x2.shape != ls.shape:
        raise KernelConfigError(
            f"kernel inputs of shape {x.shape}/{x2.shape} do not match lengthscales {ls.shape}"
        )
    z = (x - x2) / ls
    return float(cfg.signal_variance * np.exp(-0.5 * float(z @ z)))


@dataclass(frozen=True)
class ResidualDataset:
    """Q residual measurements: inputs (Q, n) and targets (Q, n)."""

    inputs: np.ndarray
    targets: np.ndarray
    noise_std: float = 0.0

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        if inputs.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if targets.shape[0] != inputs.shape[0]:
            raise ValueError("inputs and targets must have the same number of rows")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("dataset entries must be finite")

    @property
    def q(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.targets.shape[1]


@dataclass(frozen=True)
class ErrorBoundConfig:
    """Inputs of the confidence-scalar formula.

    ``delta`` is the per-coordinate failure probability; the joint tube
    holds with probability (1 - delta)^n.  ``beta_override`` short-circuits
    the formula (the closed-form constants are very conservative at desk
    scale).
    """

    delta: float = 0.05
    rkhs_norms: Optional[Tuple[float, ...]] = None
    information_gains: Optional[Tuple[float, ...]] = None
    beta_override: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.beta_override is None:
            if self.rkhs_norms is None or self.information_gains is None:
                raise ValueError("need rkhs_norms and information_gains when beta_override is absent")
            if any(r < 0 for r in self.rkhs_norms) or any(g < 0 for g in self.information_gains):
                raise ValueError("rkhs_norms and information_gains must be nonnegative")


def beta_values(cfg: ErrorBoundConfig, q: int) -> np.ndarray:
    """Confidence scalars beta_i for a dataset of size q."""
    if cfg.beta_override is not None:
        return np.asarray(cfg.beta_override, dtype=float)
    norms = np.asarray(cfg.rkhs_norms, dtype=float)
    gains = np.asarray(cfg.information_gains, dtype=float)
    log_term = np.log((q + 1) / cfg.delta) ** 3
    return np.sqrt(2.0 * norms**2 + 300.0 * gains * log_term)


class _CoordinateGroup:
    """Coordinates sharing one kernel config, hence one Gram factor."""

    def __init__(self, cfg: KernelConfig, coord_indices, inputs, targets, noise_std):
        self.cfg = cfg
        self.indices = tuple(coord_indices)
        q = inputs.shape[0]
        gram = _k.se_gram(inputs, cfg.lengthscale_array, cfg.signal_variance)
        noise_var = noise_std**2
        self.jitter = None
        last_err = None
        for rel in _JITTER_LADDER:
            jitter = rel * cfg.signal_variance
            try:
                self.chol_lower = cholesky(
                    gram + (noise_var + jitter) * np.eye(q), lower=True, check_finite=False
                )
            except np.linalg.LinAlgError as err:
                last_err = err
                continue
            self.jitter = jitter
            break
        if self.jitter is None:
            cond = float(np.linalg.cond(gram + noise_var * np.eye(q)))
            raise IllConditionedKernel(
                f"Gram factorization failed after jitter escalation "
                f"(condition estimate {cond:.3e}): {last_err}"
            )
        # weights (Q, k): one column per coordinate in this group
        self.weights = cho_solve((self.chol_lower, True), targets[:, self.indices], check_finite=False)
        # Explicit inverse factor: turns the per-query variance into one
        # triangular matvec (||L^-1 k_*||^2) instead of a sequential solve.
        lower_inv, info = dtrtri(self.chol_lower, lower=1)
        if info != 0:  # pragma: no cover - cholesky already succeeded
            raise IllConditionedKernel(f"triangular inversion failed (dtrtri info={info})")
        self.tri = _k.prep_tri_factor(lower_inv)

    def log_marginal_likelihood(self, targets) -> float:
        """Sum of per-coordinate Gaussian log evidences for this group."""
        q = self.chol_lower.shape[0]
        logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol_lower))))
        total = 0.0
        for pos, coord in enumerate(self.indices):
            y = targets[:, coord]
            total += -0.5 * float(y @ self.weights[:, pos]) - 0.5 * logdet - 0.5 * q * np.log(2 * np.pi)
        return total


class GpPosterior:
    """Per-coordinate GP posteriors over the residual dynamics.

    Exposes the fitted pieces per coordinate (kernel config, stored inputs,
    lower-triangular factor of K + (noise^2 + jitter) I, and solved
    weights) plus vectorized prediction.
    """

    def __init__(self, data: ResidualDataset, configs: Sequence[KernelConfig]):
        if len(configs) != data.n:
            raise ValueError(f"need {data.n} kernel configs, got {len(configs)}")
        self.inputs = data.inputs
        self.noise_std = data.noise_std
        self.kernels = tuple(configs)
        self._groups = []
        self._group_of = [None] * data.n
        for cfg, idxs in _group_indices(configs):
            group = _CoordinateGroup(cfg, idxs, data.inputs, data.targets, data.noise_std)
            for pos, coord in enumerate(idxs):
                self._group_of[coord] = (group, pos)
            self._groups.append(group)

    @property
    def n(self) -> int:
        return len(self.kernels)

    @property
    def q(self) -> int:
        return self.inputs.shape[0]

    @property
    def jitters(self) -> Tuple[float, ...]:
        """Jitter actually added per coordinate (> 0 flags a rescued fit)."""
        return tuple(self._group_of[i][0].jitter for i in range(self.n))

    def factor(self, coord: int) -> np.ndarray:
        """Lower-triangular Cholesky factor for coordinate ``coord``."""
        return self._group_of[coord][0].chol_lower

    def weights(self, coord: int) -> np.ndarray:
        group, pos = self._group_of[coord]
        return group.weights[:, pos]

    def predict(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at one query point.

        Variance is clamped to [0, prior variance]; with shared kernel
        configs the cross-kernel vector and triangular solve are computed
        once per group.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        mean = np.empty(self.n)
        std = np.empty(self.n)
        for group in self._groups:
            cfg = group.cfg
            k_star = _k.se_cross(self.inputs, x, cfg.lengthscale_array, cfg.signal_variance)
            v = _k.tri_matvec(group.tri, k_star)
            var = cfg.signal_variance - float(v @ v)
            var = min(max(var, 0.0), cfg.signal_variance)
            s = np.sqrt(var)
            m = k_star @ group.weights
            for pos, coord in enumerate(group.indices):
                mean[coord] = m[pos]
                std[coord] = s
        return mean, std

    def predict_batch(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`predict` over the rows of X, shapes (M, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        means = np.empty((X.shape[0], self.n))
        stds = np.empty((X.shape[0], self.n))
        for i, x in enumerate(X):
            means[i], stds[i] = self.predict(x)
        return means, stds

    def log_marginal_likelihood(self, data: ResidualDataset) -> float:
        return sum(g.log_marginal_likelihood(data.targets) for g in self._groups)


def _group_indices(configs: Sequence[KernelConfig]):
    order = {}
    for i, cfg in enumerate(configs):
        order.setdefault(cfg, []).append(i)
    return list(order.items())


def fit_posterior(data: ResidualDataset, cfg) -> GpPosterior:
    """Fit the per-coordinate posteriors.

    ``cfg`` may be a single :class:`KernelConfig` (broadcast to all
    coordinates) or a sequence of one config per coordinate.
    """
    configs = [cfg] * data.n if isinstance(cfg, KernelConfig) else list(cfg)
    return GpPosterior(data, configs)


def predict(posterior: GpPosterior, x) -> Tuple[np.ndarray, np.ndarray]:
    """Functional alias for :meth:`GpPosterior.predict`."""
    return posterior.predict(x)


def build_measurements(samples, nominal, noise_std: float, seed: int,
                       times=None) -> ResidualDataset:
    """Turn (x, x_dot, u) samples into residual targets against a nominal model.

    targets = x_dot - f(x, t) - g(x) u + Gaussian noise of scale
    ``noise_std`` from a generator seeded with ``seed``.  ``times`` supplies
    the per-sample evaluation times of the nominal drift (default 0).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("samples must be non-empty")
    if times is None:
        times = np.zeros(len(samples))
    rng = np.random.default_rng(seed)
    inputs = []
    targets = []
    for (x, x_dot, u), t in zip(samples, times):
        x = np.asarray(x, dtype=float).reshape(-1)
        x_dot = np.asarray(x_dot, dtype=float).reshape(-1)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        resid = x_dot - nominal.f(x, float(t)) - nominal.g(x) @ u
        inputs.append(x)
        targets.append(resid)
    targets = np.asarray(targets)
    if noise_std > 0:
        targets = targets + noise_std * rng.standard_normal(targets.shape)
    return ResidualDataset(inputs=np.asarray(inputs), targets=targets, noise_std=noise_std)


def grid_search_kernel(data: ResidualDataset,
                       signal_variances=(1e-4, 1e-3, 1e-2, 1e-1, 1.0),
                       lengthscale_scales=(0.25, 0.5, 1.0, 2.0, 4.0)) -> KernelConfig:
    """Coarse log-space search for a shared kernel config.

    Candidates are (signal variance) x (scale factor on the per-dimension
    input range); the winner maximizes the summed log marginal likelihood.
    A convenience only; hyperparameters are normally config inputs.
    """
    span = np.ptp(data.inputs, axis=0)
    span[span == 0] = 1.0
    best = None
    best_score = -np.inf
    for sv, scale in itertools.product(signal_variances, lengthscale_scales):
        cfg = KernelConfig(lengthscales=tuple(scale * span), signal_variance=sv)
        try:
            post = fit_posterior(data, cfg)
        except IllConditionedKernel:
            continue
        score = post.log_marginal_likelihood(data)
        if score > best_score:
            best, best_score = cfg, score
    if best is None:
        raise IllConditionedKernel("no candidate kernel produced a stable fit")
    return best


# -- dataset CSV interchange ---------------------------------------------------


def dataset_to_csv(data: ResidualDataset, path) -> None:
    """Write the dataset as UTF-8 CSV with header x_1..x_n,y_1..y_n."""
    n = data.n
    n_in = data.inputs.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{i+1}" for i in range(n_in)] + [f"y_{i+1}" for i in range(n)])
        for x, y in zip(data.inputs, data.targets):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def dataset_from_csv(path, noise_std: float = 0.0) -> ResidualDataset:
    """Read a dataset written by :func:`dataset_to_csv` (header row required)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file, expected a header row")
        x_cols = [i for i, name in enumerate(header) if name.startswith("x_")]
        y_cols = [i for i, name in enumerate(header) if name.startswith("y_")]
        if not x_cols or not y_cols:
            raise ValueError(f"{path}: header must contain x_1..x_n and y_1..y_n columns")
        inputs, targets = [], []
        for row in reader:
            if not row:
                continue
            inputs.append([float(row[i]) for i in x_cols])
            targets.append([float(row[i]) for i in y_cols])
    return ResidualDataset(inputs=np.asarray(inputs), targets=np.asarray(targets), noise_std=noise_std)
