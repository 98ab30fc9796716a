import numpy as np
import pytest

from robust_si.errors import DetectionStarvation, InputError
from robust_si.experiments import (SimConfig, default_beta, generate_trial, hl_config, run_fpr, run_hl_compare,
                                   run_tpr, tpr_config, worker_count)
from robust_si.model import LAD, Huber, Threshold, TopK


def test_default_beta_alternates():
    np.testing.assert_array_equal(default_beta(4), [1.0, 2.0, 1.0, 2.0, 1.0])


def test_config_validation():
    with pytest.raises(InputError):
        SimConfig(trials=0)
    with pytest.raises(InputError):
        SimConfig(alpha=1.0)
    with pytest.raises(InputError):
        SimConfig(n=5, shift=np.zeros(4))
    with pytest.raises(InputError):
        SimConfig(p=2, beta_star=np.ones(2))


def test_generate_trial_is_deterministic():
    cfg = SimConfig(seed=123)
    a, b = generate_trial(cfg, 7), generate_trial(cfg, 7)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    c = generate_trial(cfg, 8)
    assert not np.array_equal(a.y, c.y)
    assert a.X.shape == (20, 6) and np.all(a.X[:, 0] == 1.0)
    np.testing.assert_array_equal(a.Sigma, np.eye(20))


def test_noise_is_centred():
    cfg = SimConfig(seed=1, sigma2=2.0)
    eps = np.concatenate([(lambda ds: ds.y - ds.X @ cfg.beta_star)(generate_trial(cfg, k)) for k in range(5000)])
    assert eps.size == 100_000
    se = np.sqrt(2.0 / eps.size)
    assert abs(eps.mean()) <= 3 * se
    assert eps.var() == pytest.approx(2.0, rel=0.03)


def test_shift_offsets_the_first_instance():
    cfg = tpr_config(LAD(), Threshold(1.0), u1=5.0)
    base = SimConfig(seed=cfg.seed)
    a, b = generate_trial(cfg, 3), generate_trial(base, 3)
    np.testing.assert_allclose(a.y - b.y, np.r_[5.0, np.zeros(19)], atol=1e-12)


def test_run_fpr_smoke_and_determinism():
    cfg = SimConfig(trials=25, seed=4)
    r1, r2 = run_fpr(cfg), run_fpr(cfg)
    assert (r1.fpr_naive, r1.fpr_bonf, r1.fpr_plh, r1.attempts) == (r2.fpr_naive, r2.fpr_bonf, r2.fpr_plh, r2.attempts)
    assert len(r1.outcomes) == 25 and r1.attempts >= 25
    for o in r1.outcomes:
        assert 0 <= o.selective_p <= 1 and 0 <= o.pivot <= 1
        assert o.naive_p <= o.bonferroni_p
    with pytest.raises(InputError):
        run_fpr(tpr_config(LAD(), Threshold(1.0)))


def test_worker_pool_gives_identical_results(monkeypatch):
    cfg = SimConfig(trials=20, seed=9, rule=TopK(1))
    serial = run_fpr(cfg, workers=1)
    pooled = run_fpr(cfg, workers=2)
    # repr rather than ==, since the unused extra_p slot is NaN
    assert repr(serial.outcomes) == repr(pooled.outcomes) and serial.attempts == pooled.attempts
    monkeypatch.setenv("ROBUST_SI_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("ROBUST_SI_THREADS", "many")
    with pytest.raises(InputError):
        worker_count()


def test_starvation_is_reported():
    # a threshold no residual reaches
    cfg = SimConfig(trials=1, rule=Threshold(1e6))
    with pytest.raises(DetectionStarvation):
        run_fpr(cfg, max_attempts=50)


def test_zero_shift_tpr_degenerates_to_fpr():
    cfg = tpr_config(LAD(), Threshold(1.0), u1=0.0, trials=300, seed=11)
    r = run_tpr(cfg)
    assert all(o.index == 0 for o in r.outcomes)
    # loose band: 300 trials, rate near alpha
    assert r.tpr_plh <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / 300)


def test_tpr_smoke():
    r = run_tpr(tpr_config(Huber(1.5), TopK(1), trials=20, seed=2))
    assert len(r.outcomes) == 20
    assert 0 <= r.tpr_bonf <= 1 and 0 <= r.tpr_plh <= 1


def test_hl_compare_single_trial():
    r = run_hl_compare(hl_config(trials=1, seed=5))
    (o,) = r.outcomes
    assert 0 <= o.selective_p <= 1 and 0 <= o.extra_p <= 1
    with pytest.raises(InputError):
        run_hl_compare(SimConfig(estimator=Huber(2.0), rule=Threshold(3.0)))


def test_hl_ordering_with_larger_shift():
    r = run_hl_compare(hl_config(u=3.5, trials=300, seed=0))
    assert r.tpr_plh >= r.tpr_hl
    assert r.containment_failures == 0
