"""Implementations behind the ``gradlens`` subcommands."""
from __future__ import annotations

import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..analysis import RECOVERY_DB, lincomb_residual
from ..defense import SUITE_NAMES, LabeledBatch, suite as get_suite
from ..errors import ConfigError
from ..flsim import RoundConfig, RoundOutcome, run_round, support
from ..gradcore import train_eval
from ..imaging import FieldImage, Image, read_image, write_image
from ..synthetic import gen_synthetic
from .config import ExperimentConfig
from .results import ResultRow, write_rows, write_table
from .svg import contact_sheet

log = logging.getLogger(__name__)


def load_directory(path: str | Path) -> LabeledBatch:
    """Images from ``path``; integer-named subdirectories give class labels."""
    root = Path(path)
    if not root.is_dir():
        raise ConfigError(f"data source {root} is not a directory")
    images, labels = [], []
    subdirs = sorted((p for p in root.iterdir() if p.is_dir() and p.name.isdigit()), key=lambda p: int(p.name))
    groups = [(int(p.name), p) for p in subdirs] or [(0, root)]
    for label, folder in groups:
        for f in sorted(folder.iterdir()):
            if f.suffix.lower() in (".ppm", ".pgm"):
                images.append(read_image(f))
                labels.append(label)
    if not images:
        raise ConfigError(f"no .ppm/.pgm images under {root}")
    return LabeledBatch(images, labels)


def user_batches(cfg: ExperimentConfig, seed: int, batch_size: int) -> list[LabeledBatch]:
    if cfg.source == "synthetic":
        return [gen_synthetic(seed + 1000 * u, batch_size, cfg.shape, cfg.class_count) for u in range(cfg.users)]
    pool = load_directory(cfg.source)
    need = cfg.users * batch_size
    if pool.size < need:
        raise ConfigError(f"data source holds {pool.size} images, need {need}")
    if pool.images[0].shape != tuple(cfg.shape):
        raise ConfigError(f"images are {pool.images[0].shape}, config shape is {tuple(cfg.shape)}")
    order = np.random.default_rng(seed).permutation(pool.size)[:need]
    return [
        LabeledBatch([pool.images[i] for i in order[u * batch_size:(u + 1) * batch_size]],
                     [pool.labels[i] for i in order[u * batch_size:(u + 1) * batch_size]])
        for u in range(cfg.users)
    ]


def attack_round(cfg: ExperimentConfig, seed: int, batch_size: int, neurons: int) -> RoundOutcome:
    params = cfg.attack_params() | {"neurons": neurons}
    rc = RoundConfig(
        user_count=cfg.users, selected=cfg.selected, learning_rate=cfg.learning_rate,
        batch_size=batch_size, suite=cfg.suite, attack=cfg.attack, attack_params=params,
        seed=seed, psnr_cap=cfg.psnr_cap,
    )
    return run_round(rc, user_batches(cfg, seed, batch_size))


def result_rows(cfg: ExperimentConfig, outcome: RoundOutcome, seed: int, trial: int, batch_size: int, neurons: int):
    rows = []
    for u in outcome.users:
        residuals = []
        for rec in u.reconstructions:
            members = [u.augmented.expanded.images[j] for j in support(outcome.dispatched, u.augmented, rec)]
            if members:
                residuals.append(lincomb_residual(rec.image, members))
        s = u.match.summary
        rows.append(ResultRow(
            attack=cfg.attack, suite=cfg.suite, batch_size=batch_size, neurons=neurons, seed=seed,
            trial=trial, user=u.user, psnr=u.match.best_psnr, min=s.min, q1=s.q1, median=s.median,
            q3=s.q3, max=s.max, mean=s.mean,
            mean_residual=float(np.mean(residuals)) if residuals else 0.0,
            recovered=u.match.recovered(RECOVERY_DB),
        ))
    return rows


class _Staging:
    """Collect outputs in a temp dir and move them into place only on success."""

    def __init__(self, out: str | Path):
        self.out = Path(out)

    def __enter__(self) -> Path:
        parent = self.out.resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".gradlens-", dir=parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for f in sorted(self.tmp.rglob("*")):
                    if f.is_file():
                        dest = self.out / f.relative_to(self.tmp)
                        dest.parent.mkdir(parents=True, exist_ok=True)
                        os.replace(f, dest)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def cmd_attack(cfg: ExperimentConfig) -> int:
    outcome = attack_round(cfg, cfg.seed, cfg.batch_size, cfg.neurons)
    rows = result_rows(cfg, outcome, cfg.seed, 0, cfg.batch_size, cfg.neurons)
    batches = user_batches(cfg, cfg.seed, cfg.batch_size)
    with _Staging(cfg.out) as tmp:
        (tmp / "results.csv").write_text(write_rows(rows))
        lines = [
            f"attack={cfg.attack} suite={cfg.suite} B={cfg.batch_size} n={cfg.neurons} seed={cfg.seed}",
        ]
        for u, row in zip(outcome.users, rows):
            recons = u.reconstructions.items
            for t, orig in enumerate(batches[u.user].images):
                write_image(orig, tmp / f"original_u{u.user}_{t:02d}.ppm")
                j = u.match.matched[t]
                if j is not None:
                    write_image(recons[j].image, tmp / f"recon_u{u.user}_{t:02d}.ppm")
            lines.append(
                f"user {u.user}: {len(recons)} reconstructions, recovered {row.recovered}/{cfg.batch_size} "
                f"(>= {RECOVERY_DB:g} dB), median best PSNR {row.median:.2f} dB, mean {row.mean:.2f} dB, "
                f"mean residual {row.mean_residual:.3g}"
            )
        (tmp / "report.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        log.info(line)
    return 0


def cmd_sweep(cfg: ExperimentConfig) -> int:
    cells = [(b, n, t) for b in cfg.sweep_batch_sizes for n in cfg.sweep_neurons for t in range(cfg.trials)]

    def run(cell):
        b, n, t = cell
        seed = cfg.seed + t
        return result_rows(cfg, attack_round(cfg, seed, b, n), seed, t, b, n)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(run, cells))
    else:
        chunks = [run(c) for c in cells]
    rows = sorted((r for chunk in chunks for r in chunk), key=ResultRow.key)
    matrix = mean_psnr_matrix(rows, cfg.sweep_batch_sizes, cfg.sweep_neurons)
    with _Staging(cfg.out) as tmp:
        (tmp / "sweep.csv").write_text(write_rows(rows))
        header = ["batch_size"] + [f"n={n}" for n in cfg.sweep_neurons]
        body = [[b] + [repr(matrix[(b, n)]) for n in cfg.sweep_neurons] for b in cfg.sweep_batch_sizes]
        (tmp / "psnr_matrix.csv").write_text(write_table(header, body))
    return 0


def mean_psnr_matrix(rows, batch_sizes, neurons) -> dict[tuple[int, int], float]:
    """Mean best-PSNR over every original of every trial, per (B, n) cell."""
    out = {}
    for b in batch_sizes:
        for n in neurons:
            vals = [p for r in rows if r.batch_size == b and r.neurons == n for p in r.psnr]
            out[(b, n)] = float(np.mean(vals)) if vals else float("nan")
    return out


def utility_table(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    train = gen_synthetic(cfg.seed, cfg.train_count, cfg.shape, cfg.class_count)
    test = gen_synthetic(cfg.seed + 1, cfg.test_count, cfg.shape, cfg.class_count)
    out = []
    for name in SUITE_NAMES:
        acc = train_eval(
            train, test, cfg.epochs, cfg.utility_learning_rate,
            get_suite(name) if name != "none" else None, cfg.seed,
            hidden=cfg.hidden, batch_size=cfg.train_batch_size, class_count=cfg.class_count,
        )
        out.append((name, acc))
    return out


def cmd_utility(cfg: ExperimentConfig) -> int:
    table = utility_table(cfg)
    base = dict(table)["none"]
    body = [[name, repr(acc), repr(acc - base)] for name, acc in table]
    with _Staging(cfg.out) as tmp:
        (tmp / "utility.csv").write_text(write_table(["suite", "accuracy", "delta_vs_none"], body))
    for name, acc in table:
        log.info("%-15s %.4f", name, acc)
    return 0


def _side_by_side(a: FieldImage, b: FieldImage) -> Image:
    gap = np.ones((a.height, 1, a.channels))
    return Image(np.concatenate([np.clip(a.pixels, 0, 1), gap, np.clip(b.pixels, 0, 1)], axis=1))


def cmd_gallery(cfg: ExperimentConfig) -> int:
    src = Path(cfg.out)
    originals = sorted(src.glob("original_u*_*.p[pg]m"))
    if not originals:
        raise ConfigError(f"no attack outputs (original_*.ppm) in {src}")
    pairs = []
    for orig_path in originals:
        recon_path = orig_path.with_name(orig_path.name.replace("original_", "recon_", 1))
        orig = read_image(orig_path)
        recon = read_image(recon_path) if recon_path.exists() else None
        pairs.append((orig_path.stem.replace("original_", ""), orig, recon))
    notice = None if any(r is not None for _, _, r in pairs) else "no reconstructions: originals only"
    with _Staging(src / "gallery") as tmp:
        for tag, orig, recon in pairs:
            if recon is not None:
                write_image(_side_by_side(orig, recon), tmp / f"pair_{tag}.ppm")
        sheet = contact_sheet([(o, r, tag) for tag, o, r in pairs], notice)
        (tmp / "contact_sheet.svg").write_text(sheet)
    return 0


COMMAND_TABLE = {
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "utility": cmd_utility,
    "gallery": cmd_gallery,
}
