"""Ground-truth instrumentation: activation census, extractability oracle,
reconstruction matching, span residuals and summary statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation
from .gradcore import AttackModel, batch_arrays
from .imaging import PSNR_CAP, FieldImage, Image, psnr

RECOVERY_DB = 80.0


@dataclass(frozen=True)
class ActivationCensus:
    by_neuron: tuple[frozenset[int], ...]
    by_sample: tuple[frozenset[int], ...]
    tied_head: bool = False

    @property
    def neuron_count(self) -> int:
        return len(self.by_neuron)

    @property
    def sample_count(self) -> int:
        return len(self.by_sample)


def census(model: AttackModel, batch) -> ActivationCensus:
    """Which samples drive which neurons (pre-activation strictly positive)."""
    inputs, _ = batch_arrays(batch)
    w, b = model.malicious.weight, model.malicious.bias
    active = np.array([(w @ x + b) > 0.0 for x in inputs])  # (B, n)
    by_neuron = tuple(frozenset(np.flatnonzero(active[:, i]).tolist()) for i in range(w.shape[0]))
    by_sample = tuple(frozenset(np.flatnonzero(row).tolist()) for row in active)
    return ActivationCensus(by_neuron, by_sample, model.has_tied_head)


@dataclass(frozen=True)
class Extractability:
    kind: str  # isolated-by-neuron | isolated-by-difference | not-extractable
    neurons: tuple[int, ...] = ()

    @property
    def isolated(self) -> bool:
        return self.kind != "not-extractable"


def extractability_oracle(cen: ActivationCensus, t: int, *, differences: bool | None = None) -> Extractability:
    """Can sample ``t``'s own gradient be read off the summed report?

    Case 1: some neuron is driven by ``t`` alone. Case 2: neurons ``i`` and
    ``k`` with ``S_k`` a subset of ``S_i`` and ``S_i - S_k == {t}``; subtracting
    their rows cancels everyone but ``t``. The second case only holds when a
    sample contributes the same factor to both rows, i.e. when the head
    columns are tied, so by default it is checked only for such models.
    """
    if not 0 <= t < cen.sample_count:
        raise ContractViolation(f"target {t} outside batch of {cen.sample_count}")
    for i, s in enumerate(cen.by_neuron):
        if s == {t}:
            return Extractability("isolated-by-neuron", (i,))
    if differences is None:
        differences = cen.tied_head
    if differences:
        candidates = [i for i in cen.by_sample[t]]
        for i in candidates:
            si = cen.by_neuron[i]
            rest = si - {t}
            for k, sk in enumerate(cen.by_neuron):
                if k != i and sk == rest:
                    return Extractability("isolated-by-difference", (i, k))
    return Extractability("not-extractable")


@dataclass(frozen=True)
class Summary:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.min, self.q1, self.median, self.q3, self.max, self.mean)


def summarize(values: Sequence[float]) -> Summary:
    """Five-number summary plus mean.

    Quartiles use linear interpolation between order statistics at position
    ``p * (N - 1)`` (numpy's default ``linear`` method).
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ContractViolation("cannot summarize an empty list")
    q = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0])
    return Summary(*(float(v) for v in q), mean=float(arr.mean()))


@dataclass(frozen=True)
class MatchReport:
    best_psnr: tuple[float, ...]
    matched: tuple[int | None, ...]
    summary: Summary

    def recovered(self, threshold: float = RECOVERY_DB) -> int:
        return sum(p >= threshold for p in self.best_psnr)


def match_reconstructions(recons, originals, cap: float = PSNR_CAP) -> MatchReport:
    """Best PSNR per original over all (clamped) reconstructions."""
    images = list(originals.images) if hasattr(originals, "images") else list(originals)
    recon_images = [r.image for r in recons] if recons is not None else []
    if not recon_images:
        zeros = tuple(0.0 for _ in images)
        return MatchReport(zeros, tuple(None for _ in images), summarize(zeros))
    clamped = [Image(np.clip(r.pixels, 0.0, 1.0)) for r in recon_images]
    best, which = [], []
    for orig in images:
        scores = [psnr(c, orig, cap) for c in clamped]
        j = int(np.argmax(scores))
        best.append(float(scores[j]))
        which.append(j)
    return MatchReport(tuple(best), tuple(which), summarize(best))


def lincomb_residual(recon: FieldImage, basis: Sequence[FieldImage], ridge: float = 1e-12) -> float:
    """Relative least-squares residual of ``recon`` on span(basis + constant)."""
    if not basis:
        raise ContractViolation("basis must be nonempty")
    r = recon.flat()
    cols = []
    for b in basis:
        if b.shape != recon.shape:
            raise ContractViolation("basis image shape differs from reconstruction")
        cols.append(b.flat())
    cols.append(np.ones_like(r))
    a = np.stack(cols, axis=1)
    gram = a.T @ a + ridge * np.eye(a.shape[1])
    coef = np.linalg.solve(gram, a.T @ r)
    norm = np.linalg.norm(r)
    if norm == 0:
        return 0.0
    return float(np.linalg.norm(r - a @ coef) / norm)

