import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p4sim import robustness as rob
from p4sim.data import ClientDataset
from p4sim.rng import stream
from oracles import brute_mkrum


def _ds(labels, C):
    labels = np.asarray(labels)
    n = len(labels)
    return ClientDataset(np.arange(n, dtype=float)[:, None], labels, C,
                         np.arange(n), np.zeros(0, dtype=int))


def test_label_flip_examples():
    flipped = rob.attack_label_flip(_ds([3, 0, 9], 10))
    assert flipped.labels.tolist() == [6, 9, 0]
    assert rob.attack_label_flip(_ds([0, 1, 1], 2)).labels.tolist() == [1, 0, 0]


@given(st.lists(st.integers(0, 6), min_size=1, max_size=30))
def test_label_flip_involution_and_histogram(labels):
    ds = _ds(labels, 7)
    once = rob.attack_label_flip(ds)
    np.testing.assert_array_equal(rob.attack_label_flip(once).labels, ds.labels)
    np.testing.assert_array_equal(once.features, ds.features)
    h = np.bincount(ds.labels, minlength=7)
    np.testing.assert_array_equal(np.bincount(once.labels, minlength=7), h[::-1])


def test_byzantine_variants():
    u = np.array([0.3, -2.0])
    np.testing.assert_array_equal(rob.attack_byzantine(u, "byz_zero"), [0, 0])
    flip = rob.attack_byzantine(u, "byz_flip", w_g=np.array([1.0, 1.0]), w_l=np.array([0.0, 2.0]))
    np.testing.assert_array_equal(flip, [2.0, 0.0])
    w = np.array([0.5, 4.0])
    np.testing.assert_array_equal(rob.attack_byzantine(w, "byz_flip", w_g=w, w_l=w), w)
    with pytest.raises(ValueError):
        rob.attack_byzantine(u, "byz_flip", w_g=np.ones(3), w_l=np.ones(2))
    with pytest.raises(ValueError):
        rob.attack_byzantine(u, "label_flip")


def test_byz_random_distribution():
    draws = rob.attack_byzantine(np.zeros(40_000), "byz_random", rng=stream(0, "byz_random"), sigma=2.5)
    assert abs(draws.std() - 2.5) < 0.05 and abs(draws.mean()) < 0.05


def test_flip_delta_algebra():
    # reported model w_g + (w_g - w_l) sent as a delta against theta_prev
    rng = np.random.default_rng(0)
    theta_prev, w_g, w_l = rng.normal(size=(3, 6))
    model = rob.attack_byzantine(w_l, "byz_flip", w_g=w_g, w_l=w_l)
    np.testing.assert_allclose(model - theta_prev, (w_g - theta_prev) + (w_g - w_l), atol=1e-14)


def test_mkrum_scalar_example():
    deltas = [[0.0], [0.1], [0.2], [10.0]]
    np.testing.assert_allclose(rob.krum_scores(deltas, 1), [0.01, 0.01, 0.01, 96.04])
    assert rob.mkrum(deltas, f=1, m=2) == [0, 1]


def test_mkrum_degenerate_and_errors():
    assert rob.mkrum([[1.0, 2.0]] * 5, f=1, m=3) == [0, 1, 2]
    with pytest.raises(ValueError, match="insufficient participants for m-Krum"):
        rob.mkrum([[0.0], [1.0], [2.0]], f=1, m=1)
    with pytest.raises(ValueError):
        rob.mkrum([[0.0]] * 4, f=1, m=5)


@settings(max_examples=200)
@given(st.integers(3, 8), st.integers(0, 2), st.integers(1, 4), st.integers(0, 2 ** 32 - 1),
       st.booleans())
def test_mkrum_matches_brute_force(n, f, dim, seed, discrete):
    if n < f + 3:
        return
    rng = np.random.default_rng(seed)
    x = rng.integers(-2, 3, size=(n, dim)).astype(float) if discrete else rng.normal(size=(n, dim))
    m = int(rng.integers(1, n + 1))
    assert rob.mkrum(list(x), f, m) == brute_mkrum(x.tolist(), f, m)


@settings(max_examples=50)
@given(st.integers(4, 8), st.integers(0, 2 ** 32 - 1))
def test_mkrum_translation_and_permutation(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    f, m = 1, n - 2
    sel = rob.mkrum(list(x), f, m)
    assert rob.mkrum(list(x + np.array([5.0, -3.0, 0.25])), f, m) == sel
    perm = rng.permutation(n)
    sel_p = rob.mkrum(list(x[perm]), f, m)
    assert sorted(map(bytes, x[perm][sel_p])) == sorted(map(bytes, x[sel]))


def test_anomaly_examples():
    assert rob.anomaly_filter([[1.0], [1.1], [0.9], [1.0], [50.0]]) == [0, 1, 2, 3]
    assert rob.anomaly_filter([[2.0, 1.0]] * 5) == [0, 1, 2, 3, 4]
    assert rob.anomaly_filter([[0.0], [100.0]]) == [0, 1]


@given(st.integers(3, 10), st.floats(-5, 5))
def test_anomaly_never_flags_equal_scores(n, v):
    assert rob.anomaly_filter([[v, -v]] * n) == list(range(n))


def test_secure_filters_random_attackers():
    rng = np.random.default_rng(1)
    clean = [0.01 * rng.normal(size=20) for _ in range(7)]
    bad = [rng.normal(0, 10, size=20) for _ in range(3)]
    deltas = clean + bad
    out = rob.secure_aggregate(deltas, rob.DefenseConfig("secure"))
    assert out.kept and set(out.kept) <= set(range(7))
    # oracle: every malicious delta is further than 10x the clean radius
    radius = max(np.linalg.norm(c) for c in clean)
    assert min(np.linalg.norm(b) for b in bad) > 10 * radius


def test_secure_passes_identical_clean():
    out = rob.secure_aggregate([np.ones(4)] * 5, rob.DefenseConfig("secure"))
    assert out.anomaly_removed == 0 and not out.fallback
    assert len(out.kept) == 5 - 1  # m-Krum keeps n - f


def test_secure_fallback_recorded():
    # 5 anomaly survivors < f + 3 = 6, so m-Krum reruns on all six deltas
    deltas = [[0.0], [0.01], [0.02], [5.0], [5.0], [5.0]]
    assert rob.anomaly_filter(deltas) == [1, 2, 3, 4, 5]
    out = rob.secure_aggregate(deltas, rob.DefenseConfig("secure", f=3, m=2))
    assert out.fallback and out.notes
    assert out.kept == rob.mkrum(deltas, 3, 2)


def test_ideal_and_none():
    d = [np.zeros(2)] * 4
    assert rob.secure_aggregate(d, rob.DefenseConfig("ideal"), [False, True, False, True]).kept == [0, 2]
    assert rob.secure_aggregate(d, rob.DefenseConfig("ideal"), [False] * 4).kept == [0, 1, 2, 3]
    assert rob.secure_aggregate(d, rob.DefenseConfig("none")).kept == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        rob.secure_aggregate(d, rob.DefenseConfig("ideal"))


def test_mkrum_skip_noted_for_small_groups():
    out = rob.secure_aggregate([[0.0], [1.0]], rob.DefenseConfig("mkrum"))
    assert out.kept == [0, 1] and out.notes


def test_metrics_signed():
    assert rob.attack_impact(0.60, 0.45) == pytest.approx(15.0)
    assert rob.attack_impact(0.5, 0.5) == 0.0
    assert rob.attack_impact(0.4, 0.5) == pytest.approx(-10.0)
    assert rob.ideal_delta(0.58, 0.50) == pytest.approx(8.0)
    assert rob.ideal_delta(0.5, 0.55) < 0


def test_config_validation_and_counts():
    assert rob.AttackConfig("byz_zero", 0.3).n_malicious(16) == 4
    assert rob.AttackConfig("byz_zero", 0.3).n_malicious(10) == 3
    with pytest.raises(ValueError):
        rob.AttackConfig("byz_zero", 0.6)
    with pytest.raises(ValueError):
        rob.AttackConfig("nope")
    assert rob.DefenseConfig("mkrum").resolve(10) == (3, 7)
    a = rob.choose_malicious(16, rob.AttackConfig("byz_zero", 0.3), stream(5, "malicious"))
    assert a == rob.choose_malicious(16, rob.AttackConfig("byz_zero", 0.3), stream(5, "malicious"))
    assert len(a) == 4 and a == sorted(a)
