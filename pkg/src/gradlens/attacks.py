"""Malicious first-layer constructions and gradient inversion.

The basic observation: for a dense layer followed by anything, the gradient of
one sample's loss w.r.t. row ``i`` of the weights is ``(dL/db_i) * x``. Dividing
a weight-gradient row by its bias gradient therefore returns the input. If a
row was driven by several samples, the same division returns the affine
combination ``sum(c_j x_j) / sum(c_j)`` of the samples that activated it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractViolation, NonInvertible, PreconditionError
from .gradcore import GradientReport, MaliciousLayer
from .imaging import FieldImage, Image

EPS_ACT = 1e-12
DEDUP_TOL = 1e-9


@dataclass(frozen=True)
class ImprintConfig:
    measurement: np.ndarray
    cutoffs: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.measurement, dtype=np.float64).reshape(-1)
        c = np.asarray(self.cutoffs, dtype=np.float64).reshape(-1)
        if not np.linalg.norm(m) > 0:
            raise ConfigError("measurement vector must be nonzero")
        if c.size < 2 or np.any(np.diff(c) <= 0):
            raise ConfigError("cutoffs must be strictly increasing with at least two entries")
        object.__setattr__(self, "measurement", m)
        object.__setattr__(self, "cutoffs", c)


@dataclass(frozen=True)
class TrapConfig:
    seed: int = 0
    sigma: float = 1.0
    negative_fraction: float = 0.5
    # mean response on a typical image, as a fraction of its positive part
    margin: float = 0.05

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("trap sigma must be > 0")
        if not 0.0 < self.negative_fraction < 1.0:
            raise ConfigError("negative_fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Reconstruction:
    image: FieldImage
    provenance: tuple[int, ...]  # (neuron,) or (bin_low, bin_high)
    bias_grad: float


@dataclass
class ReconstructionSet:
    items: list[Reconstruction] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def images(self) -> list[FieldImage]:
        return [r.image for r in self.items]


def invert_neuron(dW_row, db: float, shape, eps: float = EPS_ACT) -> FieldImage:
    db = float(db)
    if not abs(db) > eps:
        raise NonInvertible(f"|bias gradient| = {abs(db):.3g} <= {eps:g}")
    return FieldImage(np.asarray(dW_row, dtype=np.float64).reshape(shape) / db)


def pixel_mean_measurement(d: int) -> np.ndarray:
    return np.full(d, 1.0 / d)


def craft_imprint_layer(n: int, d: int, calib: Sequence[Image], measurement="pixel-mean"):
    """Identical measurement rows with biases at calibration quantiles.

    Neuron ``i`` fires iff ``m . x > c_i``, so activation sets shrink as the
    index grows and adjacent neurons differ by exactly one measurement bin.
    Cutoffs are the ``i / (n + 1)`` quantiles (linear interpolation) of the
    calibration measurements.
    """
    if n < 2:
        raise ConfigError("imprint layer needs n >= 2")
    if isinstance(measurement, str):
        if measurement != "pixel-mean":
            raise ConfigError(f"unknown measurement {measurement!r}")
        m = pixel_mean_measurement(d)
    else:
        m = np.asarray(measurement, dtype=np.float64).reshape(-1)
        if m.shape[0] != d:
            raise ConfigError(f"measurement length {m.shape[0]} != d = {d}")
    if not calib:
        raise ConfigError("imprint calibration set is empty")
    values = np.array([float(m @ img.flat()) for img in calib])
    if np.ptp(values) == 0:
        raise ConfigError("calibration measurements are all equal; cannot place cutoffs")
    cutoffs = np.quantile(values, np.arange(1, n + 1) / (n + 1))
    # ties in the calibration data can repeat a quantile; nudge to keep order strict
    for i in range(1, n):
        if cutoffs[i] <= cutoffs[i - 1]:
            cutoffs[i] = np.nextafter(cutoffs[i - 1], np.inf)
    cfg = ImprintConfig(m, cutoffs)
    layer = MaliciousLayer(np.tile(m, (n, 1)), -cutoffs)
    return layer, cfg


def imprint_reconstruct(report: GradientReport, cfg: ImprintConfig, shape, eps: float = EPS_ACT) -> ReconstructionSet:
    dW, db = report.dW, report.db
    n = db.shape[0]
    out = ReconstructionSet()
    for i in range(n - 1):
        delta_b = db[i] - db[i + 1]
        if abs(delta_b) > eps:
            img = invert_neuron(dW[i] - dW[i + 1], delta_b, shape, eps)
            out.items.append(Reconstruction(img, (i, i + 1), abs(delta_b)))
    if abs(db[n - 1]) > eps:
        out.items.append(Reconstruction(invert_neuron(dW[n - 1], db[n - 1], shape, eps), (n - 1,), abs(db[n - 1])))
    return out


def craft_trap_layer(n: int, d: int, cfg: TrapConfig, typical=None) -> MaliciousLayer:
    """Random rows tilted so a typical image lands just below the ReLU threshold.

    Each row starts as i.i.d. ``N(0, sigma)``. A random ``negative_fraction``
    of coordinates is made negative, the rest positive, and the negative part
    is rescaled so that the response to ``typical`` (default: a flat mid-grey
    image) equals ``-margin`` times the positive part. Bias is zero.
    """
    if n < 1 or d < 1:
        raise ContractViolation("n and d must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    mu = np.full(d, 0.5) if typical is None else np.asarray(typical, dtype=np.float64).reshape(-1)
    weights = np.abs(rng.normal(0.0, cfg.sigma, size=(n, d)))
    n_neg = int(round(cfg.negative_fraction * d))
    for row in weights:
        neg = rng.permutation(d)[:n_neg]
        mask = np.zeros(d, dtype=bool)
        mask[neg] = True
        pos_part = float(row[~mask] @ mu[~mask])
        neg_part = float(row[mask] @ mu[mask])
        scale = (1.0 + cfg.margin) * pos_part / neg_part if pos_part > 0 and neg_part > 0 else 1.0
        row[mask] *= -scale
    return MaliciousLayer(weights, np.zeros(n))


def _dedup(items: list[Reconstruction], tol: float) -> list[Reconstruction]:
    kept: list[Reconstruction] = []
    for r in items:
        if all(np.max(np.abs(r.image.pixels - k.image.pixels)) > tol for k in kept):
            kept.append(r)
    return kept


def trap_reconstruct(report: GradientReport, shape, eps: float = EPS_ACT, tol: float = DEDUP_TOL) -> ReconstructionSet:
    items = [
        Reconstruction(invert_neuron(report.dW[i], report.db[i], shape, eps), (i,), abs(float(report.db[i])))
        for i in range(report.db.shape[0])
        if abs(report.db[i]) > eps
    ]
    return ReconstructionSet(_dedup(items, tol))


def linear_model_attack(report: GradientReport, labels: Sequence[int], shape, eps: float = EPS_ACT) -> ReconstructionSet:
    """Invert every class row of a single-layer logistic model.

    Only meaningful when each label occurs once in the batch; with one-vs-rest
    sigmoid outputs and strongly negative biases each row's gradient is then
    dominated by the one sample carrying that label.
    """
    if report.head_dW is not None:
        raise PreconditionError("linear attack expects a report from a single-layer model")
    labels = [int(y) for y in labels]
    if len(set(labels)) != len(labels):
        raise PreconditionError("linear-model attack requires pairwise distinct labels")
    out = ReconstructionSet()
    for c in range(report.db.shape[0]):
        if abs(report.db[c]) > eps:
            out.items.append(Reconstruction(invert_neuron(report.dW[c], report.db[c], shape, eps), (c,), abs(float(report.db[c]))))
    return out
