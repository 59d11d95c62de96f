"""End-to-end acceptance suite.

Each test checks one numbered criterion at its stated tolerance and runtime
budget, and records a PASS/FAIL line that ``conftest.pytest_terminal_summary``
prints after the run. Run standalone with ``pytest tests/test_acceptance.py``.
"""
import functools
import time

import numpy as np
import pytest

from gradlens.analysis import census, extractability_oracle, lincomb_residual
from gradlens.attacks import invert_neuron
from gradlens.cli.commands import attack_round, mean_psnr_matrix, result_rows, utility_table
from gradlens.cli.config import load_config
from gradlens.defense import SUITE_NAMES, build_augmented_batch, suite
from gradlens.flsim import RoundConfig, run_round, support
from gradlens.gradcore import backward_per_sample, backward_summed, forward, init_model, per_sample_gradients
from gradlens.imaging import (
    Image,
    decode_netpbm,
    encode_netpbm,
    flip_h,
    flip_v,
    psnr,
    rotate,
)
from gradlens.synthetic import gen_synthetic
from test_gradcore import finite_difference, rel_err

SHAPE = (8, 8, 3)
D = 192
RESULTS: dict[int, tuple[bool, str, float, float]] = {}


def criterion(number: int, title: str, budget: float):
    """Time the wrapped check, enforce the budget and record the outcome."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            detail, ok = "", False
            try:
                detail = fn(*args, **kwargs) or ""
                ok = True
            except AssertionError as exc:
                detail = str(exc).splitlines()[0] if str(exc) else "assertion failed"
                raise
            finally:
                elapsed = time.perf_counter() - start
                if ok and elapsed >= budget:
                    ok, detail = False, f"runtime {elapsed:.1f}s exceeds {budget:g}s; {detail}"
                RESULTS[number] = (ok, f"{title}: {detail}", elapsed, budget)
            assert elapsed < budget, f"runtime {elapsed:.1f}s exceeds {budget:g}s"

        return run

    return wrap


def _round(attack, suite_name, batch, neurons, seed):
    cfg = RoundConfig(batch_size=batch.size, suite=suite_name, attack=attack,
                      attack_params={"neurons": neurons}, seed=seed)
    return run_round(cfg, [batch])


@criterion(1, "gradient correctness", 5.0)
def test_c01_gradient_correctness():
    worst_fd = worst_rank1 = worst_sum = 0.0
    for seed, (d, n, k) in enumerate([(192, 16, 4), (48, 8, 3), (12, 4, 3)]):
        rng = np.random.default_rng(seed)
        model = init_model(d, n, k, rng)
        x = rng.uniform(size=d)
        assert np.min(np.abs(forward(model, x)[0])) > 1e-4, "sample sits on a ReLU kink"
        g = backward_per_sample(model, x, seed % k)
        for analytic, numeric in zip(g.gradients(), finite_difference(model, x, seed % k)):
            worst_fd = max(worst_fd, rel_err(analytic, numeric))
        worst_rank1 = max(worst_rank1, float(np.max(np.abs(g.dW - np.outer(g.db, x)))))
        batch = gen_synthetic(seed, 8, (8, 8, 3)) if d == D else None
        if batch is not None:
            report = backward_summed(model, batch)
            samples = per_sample_gradients(model, batch)
            for i, total in enumerate(report.gradients()):
                worst_sum = max(worst_sum, float(np.max(np.abs(total - sum(s.gradients()[i] for s in samples)))))
    assert worst_fd <= 1e-6, f"finite-difference error {worst_fd:.2e}"
    assert worst_rank1 <= 1e-12, f"rank-1 error {worst_rank1:.2e}"
    assert worst_sum <= 1e-9, f"summed-report error {worst_sum:.2e}"
    return f"FD {worst_fd:.1e}, rank-1 {worst_rank1:.1e}, sum {worst_sum:.1e}"


@criterion(2, "single-sample inversion exact", 1.0)
def test_c02_single_sample_exact():
    checked = 0
    for seed in range(10):
        model = init_model(D, 16, 4, np.random.default_rng(seed))
        img = gen_synthetic(seed, 4).images[0]
        g = backward_per_sample(model, img.flat(), seed % 4)
        for i in np.flatnonzero(np.abs(g.db) > 1e-12):
            rec = invert_neuron(g.dW[i], g.db[i], SHAPE)
            p = psnr(Image(np.clip(rec.pixels, 0, 1)), img)
            assert p == 300.0, f"seed {seed} neuron {i}: {p:.1f} dB"
            checked += 1
    assert checked > 0
    return f"{checked} activated neurons, all at 300 dB"


@criterion(3, "affine-combination law", 30.0)
def test_c03_affine_combination():
    worst, count = 0.0, 0
    for trial in range(50):
        rng = np.random.default_rng(trial)
        b = int(rng.integers(2, 9))
        attack = ("imprint", "trap")[trial % 2]
        name = SUITE_NAMES[trial % len(SUITE_NAMES)]
        batch = gen_synthetic(500 + trial, b, SHAPE, min(b, 4))
        out = _round(attack, name, batch, 32 if attack == "imprint" else 128, trial)
        u = out.users[0]
        samples = per_sample_gradients(out.dispatched.model, u.augmented.expanded)
        xs = [im.flat() for im in u.augmented.expanded.images]
        for rec in u.reconstructions:
            members = support(out.dispatched, u.augmented, rec)
            if len(rec.provenance) == 2:
                i, k = rec.provenance
                coef = {j: samples[j].db[i] - samples[j].db[k] for j in members}
            else:
                coef = {j: samples[j].db[rec.provenance[0]] for j in members}
            oracle = sum(coef[j] * xs[j] for j in members) / sum(coef.values())
            err = np.linalg.norm(rec.image.flat() - oracle) / np.linalg.norm(oracle)
            worst = max(worst, float(err))
            count += 1
    assert count > 0
    assert worst <= 1e-8, f"worst relative error {worst:.2e}"
    return f"{count} reconstructions, worst relative error {worst:.1e}"


@criterion(4, "imprint, no defense", 10.0)
def test_c04_imprint_undefended():
    batch = gen_synthetic(1, 8)
    assert len({round(im.mean(), 9) for im in batch.images}) == 8
    match = _round("imprint", "none", batch, 64, 1).users[0].match
    assert match.recovered(80) == 8, f"recovered {match.recovered(80)}/8"
    return f"recovered 8/8, min PSNR {min(match.best_psnr):.0f} dB"


@criterion(5, "OASIS vs imprint", 20.0)
def test_c05_imprint_vs_major_rotation():
    out = _round("imprint", "major-rotation", gen_synthetic(1, 8), 64, 1)
    u = out.users[0]
    residuals = [
        lincomb_residual(rec.image, [u.augmented.expanded.images[j] for j in support(out.dispatched, u.augmented, rec)])
        for rec in u.reconstructions
    ]
    assert u.match.recovered(80) == 0, f"recovered {u.match.recovered(80)}"
    assert u.match.summary.median <= 30, f"median {u.match.summary.median:.1f} dB"
    assert residuals and max(residuals) <= 1e-6, f"residual {max(residuals, default=float('nan')):.1e}"
    return f"recovered 0/8, median {u.match.summary.median:.1f} dB, max residual {max(residuals):.1e}"


@criterion(6, "extractability oracle agreement", 60.0)
def test_c06_oracle_agreement():
    disagreements, isolated, total = [], 0, 0
    for trial in range(100):
        rng = np.random.default_rng(10_000 + trial)
        attack = ("imprint", "trap")[trial % 2]
        name = SUITE_NAMES[int(rng.integers(len(SUITE_NAMES)))]
        b = int(rng.integers(1, 13))
        neurons = int(rng.choice([16, 32, 64])) if attack == "imprint" else int(rng.choice([64, 128, 256]))
        batch = gen_synthetic(1000 + trial, b, SHAPE, min(b, 4))
        out = _round(attack, name, batch, neurons, trial)
        u = out.users[0]
        cen = census(out.dispatched.model, u.augmented.expanded)
        for t, j in enumerate(u.augmented.originals()):
            says = extractability_oracle(cen, j).isolated
            got = u.match.best_psnr[t] >= 80
            total += 1
            isolated += says
            if says != got:
                disagreements.append((trial, attack, name, b, t, says, round(u.match.best_psnr[t], 1)))
    assert not disagreements, f"{len(disagreements)} disagreements, first {disagreements[0]}"
    return f"0 disagreements over {total} originals ({isolated} isolated)"


@criterion(7, "trap attack regression", 20.0)
def test_c07_trap():
    plain = _round("trap", "none", gen_synthetic(0, 8), 256, 0).users[0].match
    defended = _round("trap", "mr-sh", gen_synthetic(0, 8), 256, 0).users[0].match
    assert plain.recovered(80) >= 1, "no original recovered without defense"
    assert defended.recovered(80) == 0, f"mr-sh recovered {defended.recovered(80)}"
    assert defended.summary.median <= 35, f"mr-sh median {defended.summary.median:.1f} dB"
    return (f"none: {plain.recovered(80)}/8 recovered; mr-sh: 0/8, "
            f"median {defended.summary.median:.1f} dB")


@criterion(8, "linear-model attack", 10.0)
def test_c08_linear():
    batch = gen_synthetic(2, 4)
    assert sorted(batch.labels) == [0, 1, 2, 3]
    plain = _round("linear", "none", batch, 32, 2).users[0]
    assert plain.match.recovered(80) == 4, f"undefended recovered {plain.match.recovered(80)}/4"
    out = _round("linear", "major-rotation", batch, 32, 2)
    u = out.users[0]
    residuals = [
        lincomb_residual(rec.image, [u.augmented.expanded.images[j] for j in support(out.dispatched, u.augmented, rec)])
        for rec in u.reconstructions
    ]
    assert u.match.recovered(80) == 0, f"defended recovered {u.match.recovered(80)}"
    assert residuals and max(residuals) <= 1e-6, f"residual {max(residuals, default=float('nan')):.1e}"
    return f"none: 4/4 recovered; major-rotation: 0/4, max residual {max(residuals):.1e}"


@criterion(9, "batch-size trend", 60.0)
def test_c09_batch_size_trend():
    cfg = load_config(None, {"attack": "imprint", "trials": 10})
    rows = []
    for b in (4, 16):
        for n in (16, 64):
            for t in range(cfg.trials):
                seed = cfg.seed + t
                rows += result_rows(cfg, attack_round(cfg, seed, b, n), seed, t, b, n)
    m = mean_psnr_matrix(rows, (4, 16), (16, 64))
    for n in (16, 64):
        assert m[(4, n)] >= m[(16, n)], f"n={n}: B=4 {m[(4, n)]:.1f} < B=16 {m[(16, n)]:.1f}"
    return ", ".join(f"n={n}: {m[(4, n)]:.1f} vs {m[(16, n)]:.1f} dB" for n in (16, 64))


@criterion(10, "utility", 120.0)
def test_c10_utility():
    table = dict(utility_table(load_config(None, {"command": "utility"})))
    base = table["none"]
    worst = max(table, key=lambda s: abs(table[s] - base))
    for name, acc in table.items():
        assert abs(acc - base) <= 0.06, f"{name}: {acc:.3f} vs baseline {base:.3f}"
    return f"baseline {base:.3f}, largest gap {abs(table[worst] - base):.3f} ({worst})"


@criterion(11, "imaging properties", 5.0)
def test_c11_imaging():
    rng = np.random.default_rng(0)
    for _ in range(50):
        h = int(rng.integers(1, 9))
        img = Image(rng.uniform(size=(h, h, int(rng.choice([1, 3])))))
        assert flip_h(flip_h(img)) == img and flip_v(flip_v(img)) == img
        out = img
        for _ in range(4):
            out = rotate(out, 90)
        assert out == img
        for t in (rotate(img, 90), rotate(img, 180), rotate(img, 270), flip_h(img), flip_v(img)):
            assert sorted(t.flat()) == sorted(img.flat())
            assert np.sum(np.sort(t.flat())) == np.sum(np.sort(img.flat()))
        q = Image(rng.integers(0, 256, size=(h, h + 1, 3)) / 255.0)
        assert decode_netpbm(encode_netpbm(q)) == q
        g = Image(rng.integers(0, 256, size=(h + 1, h, 1)) / 255.0)
        assert decode_netpbm(encode_netpbm(g)) == g
    assert psnr(Image(np.zeros((4, 4))), Image(np.full((4, 4), 0.1))) == pytest.approx(20.0, abs=1e-12)
    return "50 random images: flips, rot90^4, exact means, codec round-trip; 20.0 dB closed form"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
