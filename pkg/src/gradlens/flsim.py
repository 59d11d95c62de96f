"""One FedSGD round with a dishonest server.

The server dispatches a (possibly malicious) model, each selected client
computes its summed gradient on its own batch (expanded by the defense suite
if one is configured), the server inverts whatever it can from the uploaded
reports and finally averages them into one SGD step.

Client images never reach the attack code; they are used afterwards only to
score the reconstructions.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Mapping, Sequence

import numpy as np

from . import attacks
from .analysis import MatchReport, census, match_reconstructions
from .defense import AugmentedBatch, LabeledBatch, build_augmented_batch, suite as get_suite
from .errors import ConfigError, ContractViolation
from .gradcore import (
    AttackModel,
    GradientReport,
    LogisticModel,
    MaliciousLayer,
    Model,
    backward_summed,
    init_model,
    sgd_step,
)
from .imaging import PSNR_CAP, Image
from .synthetic import gen_synthetic

ATTACK_KINDS = ("none", "imprint", "trap", "linear")

DEFAULT_PARAMS: dict[str, Any] = {
    "neurons": 32,
    "calibration_size": 512,
    "trap_sigma": 1.0,
    "trap_rho": 0.5,
    "trap_margin": 0.05,
    "linear_bias": 20.0,
    "eps_act": attacks.EPS_ACT,
}


@dataclass(frozen=True)
class RoundConfig:
    user_count: int = 1
    selected: int = 1
    learning_rate: float = 0.1
    batch_size: int = 8
    suite: str = "none"
    attack: str = "none"
    attack_params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    psnr_cap: float = PSNR_CAP

    def __post_init__(self):
        if not 1 <= self.selected <= self.user_count:
            raise ConfigError("need 1 <= selected <= user_count")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.attack not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack {self.attack!r}; valid: {', '.join(ATTACK_KINDS)}")
        unknown = set(self.attack_params) - set(DEFAULT_PARAMS)
        if unknown:
            raise ConfigError(f"unknown attack parameters: {', '.join(sorted(unknown))}")
        get_suite(self.suite)

    def param(self, key: str):
        return self.attack_params.get(key, DEFAULT_PARAMS[key])


@dataclass(frozen=True)
class Dispatched:
    model: Model
    attack: str
    imprint: attacks.ImprintConfig | None = None


@dataclass
class UserResult:
    user: int
    report: GradientReport
    augmented: AugmentedBatch
    reconstructions: attacks.ReconstructionSet
    match: MatchReport


@dataclass
class RoundOutcome:
    model: Model
    dispatched: Dispatched
    users: list[UserResult]

    @property
    def reports(self) -> list[GradientReport]:
        return [u.report for u in self.users]


@lru_cache(maxsize=32)
def default_calibration(shape, seed: int, size: int, class_count: int = 4) -> tuple[Image, ...]:
    """Server-side auxiliary data: a synthetic draw disjoint from client seeds."""
    return tuple(gen_synthetic(seed + 7919, size, tuple(shape), class_count).images)


def dispatch(global_model: AttackModel, attack: str, params: Mapping[str, Any] | None = None,
             calibration: Sequence[Image] | None = None, seed: int = 0) -> Dispatched:
    """Return the model the server actually sends to clients."""
    p = {**DEFAULT_PARAMS, **(params or {})}
    d, k = global_model.input_dim, global_model.class_count
    rng = np.random.default_rng([seed, 1])
    if attack == "none":
        return Dispatched(global_model, attack)
    if attack == "imprint":
        if not calibration:
            raise ConfigError("imprint attack needs a calibration set")
        layer, cfg = attacks.craft_imprint_layer(int(p["neurons"]), d, calibration)
        # One head column repeated: every hidden unit passes the same factor
        # back. Evenly spaced class weights keep that factor away from zero for
        # every label; the 1/n scale keeps the softmax far from saturation, where
        # confidently classified samples would drop out of the gradient.
        column = (np.arange(k) - (k - 1) / 2.0)[:, None] / layer.n
        head = np.repeat(column, layer.n, axis=1)
        return Dispatched(AttackModel(layer, head, global_model.head_bias), attack, cfg)
    if attack == "trap":
        cfg = attacks.TrapConfig(seed=seed, sigma=float(p["trap_sigma"]),
                                 negative_fraction=float(p["trap_rho"]), margin=float(p["trap_margin"]))
        typical = np.mean([im.flat() for im in calibration], axis=0) if calibration else None
        layer = attacks.craft_trap_layer(int(p["neurons"]), d, cfg, typical)
        # small head so no sample's softmax saturates and silently drops out
        head = rng.normal(0.0, 1.0 / layer.n, size=(k, layer.n))
        return Dispatched(AttackModel(layer, head, global_model.head_bias), attack)
    if attack == "linear":
        w = rng.normal(0.0, 1e-3, size=(k, d))
        return Dispatched(LogisticModel(w, np.full(k, -float(p["linear_bias"]))), attack)
    raise ConfigError(f"unknown attack {attack!r}; valid: {', '.join(ATTACK_KINDS)}")


def local_update(batch: LabeledBatch, model: Model, suite_name: str = "none") -> GradientReport:
    return _client_step(batch, model, suite_name)[0]


def _client_step(batch: LabeledBatch, model: Model, suite_name: str):
    aug = build_augmented_batch(batch, get_suite(suite_name))
    d = model.input_dim
    for img in aug.expanded.images:
        if img.pixels.size != d:
            raise ContractViolation(f"image of size {img.pixels.size} does not fit input dim {d}")
    return backward_summed(model, aug.expanded), aug


def server_reconstruct(dispatched: Dispatched, report: GradientReport, shape, labels=None,
                       eps: float = attacks.EPS_ACT) -> attacks.ReconstructionSet:
    """Everything the server can get out of one report. Uses no client data
    except, for the linear attack, the label set it is assumed to know."""
    if dispatched.attack == "imprint":
        return attacks.imprint_reconstruct(report, dispatched.imprint, shape, eps)
    if dispatched.attack == "trap":
        return attacks.trap_reconstruct(report, shape, eps)
    if dispatched.attack == "linear":
        return attacks.linear_model_attack(report, labels, shape, eps)
    return attacks.ReconstructionSet()


def support(dispatched: Dispatched, augmented: AugmentedBatch, recon: attacks.Reconstruction) -> list[int]:
    """Expanded-batch indices whose gradients make up ``recon`` (ground truth)."""
    if dispatched.attack == "linear":
        (c,) = recon.provenance
        return [j for j, y in enumerate(augmented.expanded.labels) if y == c]
    cen = census(dispatched.model, augmented.expanded)
    if len(recon.provenance) == 2:
        i, k = recon.provenance
        return sorted(cen.by_neuron[i] - cen.by_neuron[k])
    return sorted(cen.by_neuron[recon.provenance[0]])


def aggregate(reports: Sequence[GradientReport], model: Model, eta: float) -> Model:
    """Average the reports in list order, then take one SGD step."""
    if not reports:
        raise ContractViolation("aggregate needs at least one report")
    acc = [g.copy() for g in reports[0].gradients()]
    for rep in reports[1:]:
        grads = rep.gradients()
        if len(grads) != len(acc) or any(g.shape != a.shape for g, a in zip(grads, acc)):
            raise ContractViolation("reports have inconsistent dimensions")
        for a, g in zip(acc, grads):
            a += g
    mean = GradientReport.from_gradients([a / len(reports) for a in acc], reports[0].batch_size)
    return sgd_step(model, mean, eta)


def run_round(cfg: RoundConfig, user_batches: Sequence[LabeledBatch], global_model: AttackModel | None = None,
              calibration: Sequence[Image] | None = None, workers: int = 1) -> RoundOutcome:
    if len(user_batches) != cfg.user_count:
        raise ContractViolation(f"expected {cfg.user_count} user batches, got {len(user_batches)}")
    for b in user_batches:
        if b.size != cfg.batch_size:
            raise ContractViolation(f"user batch of size {b.size}, config says {cfg.batch_size}")
    shape = user_batches[0].images[0].shape
    d = int(np.prod(shape))
    rng = np.random.default_rng(cfg.seed)
    if global_model is None:
        k = max(max(b.labels) for b in user_batches) + 1
        global_model = init_model(d, int(cfg.param("neurons")), max(k, 2), rng)
    if calibration is None and cfg.attack in ("imprint", "trap"):
        calibration = default_calibration(tuple(shape), cfg.seed, int(cfg.param("calibration_size")))
    sent = dispatch(global_model, cfg.attack, cfg.attack_params, calibration, cfg.seed)

    chosen = sorted(rng.choice(cfg.user_count, size=cfg.selected, replace=False).tolist())

    def work(u: int) -> UserResult:
        batch = user_batches[u]
        report, aug = _client_step(batch, sent.model, cfg.suite)
        recons = server_reconstruct(sent, report, shape, labels=batch.labels, eps=float(cfg.param("eps_act")))
        return UserResult(u, report, aug, recons, match_reconstructions(recons, batch, cfg.psnr_cap))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, chosen))
    else:
        results = [work(u) for u in chosen]
    updated = aggregate([r.report for r in results], sent.model, cfg.learning_rate)
    return RoundOutcome(updated, sent, results)
