import numpy as np
import pytest

from gradlens.errors import ConfigError, ContractViolation
from gradlens.flsim import (
    RoundConfig,
    aggregate,
    default_calibration,
    dispatch,
    local_update,
    run_round,
    support,
)
from gradlens.gradcore import GradientReport, LogisticModel, backward_summed, init_model, sgd_step
from gradlens.synthetic import gen_synthetic

SHAPE = (8, 8, 3)
D = 192


@pytest.fixture(scope="module")
def honest():
    return init_model(D, 32, 4, np.random.default_rng(0))


class TestDispatch:
    def test_none_is_the_global_model(self, honest):
        assert dispatch(honest, "none").model is honest

    def test_imprint_rows_identical(self, honest):
        sent = dispatch(honest, "imprint", {"neurons": 16}, default_calibration(SHAPE, 0, 128))
        w = sent.model.malicious.weight
        assert w.shape == (16, D) and np.all(w == w[0])
        assert np.all(np.diff(-sent.model.malicious.bias) > 0)
        assert sent.model.has_tied_head

    def test_imprint_needs_calibration(self, honest):
        with pytest.raises(ConfigError):
            dispatch(honest, "imprint", {"neurons": 16})

    def test_trap_reproducible(self, honest):
        calib = default_calibration(SHAPE, 0, 128)
        a = dispatch(honest, "trap", {"neurons": 16}, calib, seed=5).model
        b = dispatch(honest, "trap", {"neurons": 16}, calib, seed=5).model
        c = dispatch(honest, "trap", {"neurons": 16}, calib, seed=6).model
        for x, y in zip(a.parameters(), b.parameters()):
            assert np.array_equal(x, y)
        assert not np.array_equal(a.malicious.weight, c.malicious.weight)

    def test_linear(self, honest):
        model = dispatch(honest, "linear", {"linear_bias": 7.0}).model
        assert isinstance(model, LogisticModel) and np.all(model.bias == -7.0)

    def test_unknown(self, honest):
        with pytest.raises(ConfigError):
            dispatch(honest, "evil")


class TestClient:
    def test_local_update_matches_backward(self, honest):
        batch = gen_synthetic(0, 4)
        a = local_update(batch, honest)
        b = backward_summed(honest, batch)
        for x, y in zip(a.gradients(), b.gradients()):
            assert np.array_equal(x, y)

    def test_suite_expands_batch(self, honest):
        report = local_update(gen_synthetic(0, 4), honest, "mr-sh")
        assert report.batch_size == 28

    def test_shape_mismatch(self, honest):
        with pytest.raises(ContractViolation):
            local_update(gen_synthetic(0, 4, (4, 4, 3)), honest)


class TestAggregate:
    def setup_method(self):
        self.model = init_model(12, 4, 3, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        self.reports = [
            GradientReport.from_gradients([rng.normal(size=p.shape) for p in self.model.parameters()], 4)
            for _ in range(3)
        ]

    def test_single_report_is_sgd_step(self):
        a = aggregate(self.reports[:1], self.model, 0.1)
        b = sgd_step(self.model, self.reports[0], 0.1)
        for x, y in zip(a.parameters(), b.parameters()):
            assert np.array_equal(x, y)

    def test_identical_reports(self):
        a = aggregate([self.reports[0]] * 3, self.model, 0.1)
        b = sgd_step(self.model, self.reports[0], 0.1)
        for x, y in zip(a.parameters(), b.parameters()):
            np.testing.assert_allclose(x, y, atol=1e-15)

    def test_three_reports_by_hand(self):
        new = aggregate(self.reports, self.model, 0.25)
        for i, (p, q) in enumerate(zip(self.model.parameters(), new.parameters())):
            mean = (self.reports[0].gradients()[i] + self.reports[1].gradients()[i] + self.reports[2].gradients()[i]) / 3
            assert np.max(np.abs(q - (p - 0.25 * mean))) <= 1e-12

    def test_inconsistent_reports(self):
        other = GradientReport.from_gradients([np.zeros((5, 12)), np.zeros(5), np.zeros((3, 5)), np.zeros(3)], 1)
        with pytest.raises(ContractViolation):
            aggregate([self.reports[0], other], self.model, 0.1)
        with pytest.raises(ContractViolation):
            aggregate([], self.model, 0.1)


class TestRunRound:
    def test_imprint_small_batch(self):
        batches = [gen_synthetic(1, 4)]
        out = run_round(RoundConfig(batch_size=4, attack="imprint", attack_params={"neurons": 32}, seed=1), batches)
        assert out.users[0].match.recovered(80) == 4

    def test_imprint_reconstructions_lie_in_support_span(self):
        from gradlens.analysis import lincomb_residual

        batches = [gen_synthetic(1, 8)]
        out = run_round(RoundConfig(batch_size=8, attack="imprint", suite="major-rotation",
                                    attack_params={"neurons": 64}, seed=1), batches)
        u = out.users[0]
        assert len(u.reconstructions) > 0 and u.match.recovered(80) == 0
        for rec in u.reconstructions:
            members = [u.augmented.expanded.images[j] for j in support(out.dispatched, u.augmented, rec)]
            assert lincomb_residual(rec.image, members) <= 1e-6

    def test_selection_and_determinism(self):
        batches = [gen_synthetic(10 + u, 4) for u in range(5)]
        cfg = RoundConfig(user_count=5, selected=3, batch_size=4, attack="trap", attack_params={"neurons": 16}, seed=3)
        a, b = run_round(cfg, batches), run_round(cfg, batches, workers=3)
        assert [u.user for u in a.users] == [u.user for u in b.users]
        assert len(a.users) == 3 and [u.user for u in a.users] == sorted(u.user for u in a.users)
        for x, y in zip(a.model.parameters(), b.model.parameters()):
            assert x.tobytes() == y.tobytes()

    def test_no_attack_leaves_no_reconstructions(self):
        out = run_round(RoundConfig(batch_size=4), [gen_synthetic(0, 4)])
        assert len(out.users[0].reconstructions) == 0
        assert out.users[0].match.best_psnr == (0.0,) * 4

    @pytest.mark.parametrize("kw", [dict(selected=2), dict(learning_rate=0), dict(attack="x"),
                                    dict(suite="x"), dict(attack_params={"bogus": 1})])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            RoundConfig(**kw)

    def test_batch_size_checked(self):
        with pytest.raises(ContractViolation):
            run_round(RoundConfig(batch_size=4), [gen_synthetic(0, 5)])
