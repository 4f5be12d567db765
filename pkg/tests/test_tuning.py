import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from coughforest import tuning
from coughforest.errors import ConfigurationError, NumericError
from coughforest.neural_trees import HyperParams
from coughforest.tuning import (
    GaussianProcess,
    SearchSpace,
    TrialRecord,
    expected_improvement,
    gp_posterior,
    load_trials,
    optimize,
    random_search,
    se_kernel,
)

RATE_ONLY = SearchSpace(num_trees=(10, 10), depth=(4, 4), batch_size=(32,), num_epochs=(5, 5))
TWO_AXIS = SearchSpace(num_trees=(5, 50), depth=(4, 4), features_rate=(1.0, 1.0),
                       batch_size=(32,), num_epochs=(5, 50))


def branin_objective(space):
    def f(hp):
        u = space.to_unit(hp)
        x1, x2 = -5 + 15 * u[0], 15 * u[1]
        b, c, t = 5.1 / (4 * math.pi ** 2), 5 / math.pi, 1 / (8 * math.pi)
        return -((x2 - b * x1 ** 2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10)
    return f


# search space


def test_default_space_bounds():
    s = SearchSpace()
    assert s.num_trees == (5, 50) and s.depth == (3, 16) and s.features_rate == (0.5, 1.0)
    assert s.batch_size == (8, 16, 32, 64, 128, 256) and s.num_epochs == (5, 50)
    assert s.learning_rate == 0.01
    assert s.free_dims == ("num_trees", "depth", "features_rate", "batch_size", "num_epochs")


@settings(max_examples=100)
@given(st.lists(st.floats(-0.5, 1.5), min_size=5, max_size=5))
def test_every_point_maps_inside(u):
    s = SearchSpace()
    hp = s.from_unit(np.array(u))
    assert isinstance(hp, HyperParams) and s.contains(hp)
    assert hp == s.from_unit(s.to_unit(hp))


def test_fixed_dimension_excluded():
    assert RATE_ONLY.free_dims == ("features_rate",)
    hp = RATE_ONLY.from_unit(np.array([0.5]))
    assert hp.num_trees == 10 and hp.depth == 4 and hp.batch_size == 32
    assert hp.features_rate == pytest.approx(0.75)


def test_bad_space():
    with pytest.raises(ConfigurationError):
        SearchSpace(depth=(5, 3))
    with pytest.raises(ConfigurationError):
        SearchSpace().from_unit(np.zeros(2))


# gaussian process


def test_kernel():
    a = np.array([[0.0, 0.0]])
    b = np.array([[0.2, 0.0]])
    assert se_kernel(a, b)[0, 0] == pytest.approx(math.exp(-0.04 / 0.08))


def test_gp_interpolates_observation():
    X = np.array([[0.1, 0.2], [0.7, 0.9], [0.4, 0.4]])
    y = np.array([0.6, 0.8, 0.75])
    mean, var = gp_posterior(X, y, X[1:2])
    assert abs(mean[0] - 0.8) < 1e-6 and var[0] <= 1e-6


def test_gp_far_reverts_to_prior():
    X = np.array([[0.0, 0.0], [0.1, 0.0]])
    y = np.array([0.3, 0.5])
    mean, var = gp_posterior(X, y, np.array([[5.0, 5.0]]))
    assert mean[0] == pytest.approx(0.4, abs=1e-9)  # prior mean = observed average
    assert abs(var[0] - 1.0) < 1e-3


def test_gp_two_point_closed_form():
    a, b, h = 0.62, 0.91, 0.15
    X = np.array([[0.5 - h], [0.5 + h]])
    y = np.array([a, b])
    m0 = (a + b) / 2
    k01 = math.exp(-(2 * h) ** 2 / (2 * 0.2 ** 2))
    km = math.exp(-h ** 2 / (2 * 0.2 ** 2))
    k00 = 1 + 1e-8
    det = k00 ** 2 - k01 ** 2
    inv = np.array([[k00, -k01], [-k01, k00]]) / det
    kstar = np.array([km, km])
    want_mean = m0 + kstar @ inv @ (y - m0)
    want_var = 1 - kstar @ inv @ kstar
    mean, var = gp_posterior(X, y, np.array([[0.5]]))
    assert abs(mean[0] - (a + b) / 2) < 1e-6
    assert mean[0] == pytest.approx(want_mean, abs=1e-12)
    assert var[0] == pytest.approx(want_var, abs=1e-9)


def test_gp_duplicate_points_survive():
    X = np.array([[0.3], [0.3], [0.3]])
    mean, _ = gp_posterior(X, np.array([0.5, 0.5, 0.5]), np.array([[0.3]]))
    assert mean[0] == pytest.approx(0.5, abs=1e-6)


def _failing_cholesky(monkeypatch, n_failures):
    calls = []
    real = tuning.cho_factor

    def fake(K, lower=True):
        calls.append(float(K[0, 0]))
        if len(calls) <= n_failures:
            raise np.linalg.LinAlgError("not positive definite")
        return real(K, lower=lower)

    monkeypatch.setattr(tuning, "cho_factor", fake)
    return calls


def test_gp_jitter_retry(monkeypatch):
    calls = _failing_cholesky(monkeypatch, 2)
    GaussianProcess().fit(np.array([[0.1], [0.5]]), np.array([0.2, 0.4]))
    assert len(calls) == 3
    assert calls[2] - calls[0] == pytest.approx(2e-8, rel=1e-6)


def test_gp_jitter_exhausted_raises(monkeypatch):
    calls = _failing_cholesky(monkeypatch, 10)
    with pytest.raises(NumericError):
        GaussianProcess().fit(np.array([[0.1], [0.5]]), np.array([0.2, 0.4]))
    assert len(calls) == 4


# expected improvement


def test_ei_examples():
    assert expected_improvement(0.5, 0.0, 0.5) == 0.0
    assert expected_improvement(0.5, 1.0, 0.5) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    assert expected_improvement(0.7, 0.0, 0.5) == pytest.approx(0.2)


@settings(max_examples=60)
@given(st.floats(-2, 0), st.floats(1e-6, 5), st.floats(1e-3, 5))
def test_ei_increases_with_variance(gap, v, dv):
    # below z = -20 both terms underflow double precision
    assume(gap / math.sqrt(v) > -20)
    assert expected_improvement(gap, v + dv, 0.0) > expected_improvement(gap, v, 0.0)


@settings(max_examples=60)
@given(st.floats(-3, 3), st.floats(0, 4), st.floats(-3, 3))
def test_ei_nonnegative(mean, var, best):
    assert expected_improvement(mean, var, best) >= 0


# optimize


def test_rate_axis_quadratic():
    result = optimize(RATE_ONLY, lambda hp: -(hp.features_rate - 0.7) ** 2, budget=25, seed=0)
    grid = np.arange(500, 1001) / 1000
    oracle = grid[np.argmax(-(grid - 0.7) ** 2)]
    assert abs(result.best.features_rate - oracle) < 0.05
    assert result.best_score == max(t.score for t in result.trials)
    assert len(result.trials) == 25


def test_budget_five_is_space_filling():
    result = optimize(RATE_ONLY, lambda hp: hp.features_rate, budget=5, seed=3)
    rates = sorted(t.params.features_rate for t in result.trials)
    # one Latin-hypercube point per fifth of the axis
    assert [int((r - 0.5) / 0.1) for r in rates] == [0, 1, 2, 3, 4]
    assert result.best_score == max(rates)


def test_budget_below_five():
    with pytest.raises(ConfigurationError):
        optimize(RATE_ONLY, lambda hp: 0.0, budget=4)


def test_failures_are_recorded():
    calls = []

    def flaky(hp, seed):
        calls.append(seed)
        if len(calls) % 3 == 0:
            raise RuntimeError("boom")
        return hp.features_rate

    result = optimize(RATE_ONLY, flaky, budget=9, seed=1)
    failed = [t for t in result.trials if t.failed]
    assert len(failed) == 3 and all(t.score == 0.0 and "boom" in t.error for t in failed)
    assert len(result.trials) == 9


def test_seeded_and_in_bounds():
    f = branin_objective(TWO_AXIS)
    a = optimize(TWO_AXIS, f, budget=10, seed=4)
    b = optimize(TWO_AXIS, f, budget=10, seed=4)
    assert [t.params for t in a.trials] == [t.params for t in b.trials]
    assert all(TWO_AXIS.contains(t.params) for t in a.trials)


def test_trials_log_and_resume(tmp_path):
    log = tmp_path / "trials.jsonl"
    f = branin_objective(TWO_AXIS)
    full = optimize(TWO_AXIS, f, budget=8, seed=2, trials_log=log)
    lines = log.read_text().splitlines()
    assert len(lines) == 8 and json.loads(lines[0])["params"]["learning_rate"] == 0.01
    log.write_text("\n".join(lines[:5]) + "\n")
    calls = []
    resumed = optimize(TWO_AXIS, lambda hp: calls.append(1) or f(hp), budget=8, seed=2,
                       trials_log=log, resume=True)
    assert len(calls) == 3
    assert [t.params for t in resumed.trials] == [t.params for t in full.trials]
    assert load_trials(log) == full.trials


def test_record_json_roundtrip():
    rec = TrialRecord(HyperParams(), 0.8, 3, True, "x")
    assert TrialRecord.from_json(rec.to_json()) == rec


def test_beats_random_search_on_two_axes():
    f = branin_objective(TWO_AXIS)
    grid = [f(TWO_AXIS.from_unit(np.array([a, b])))
            for a in np.linspace(0, 1, 46) for b in np.linspace(0, 1, 46)]
    best = max(grid)
    bo = [best - optimize(TWO_AXIS, f, 25, seed=s).best_score for s in range(5)]
    rs = [best - random_search(TWO_AXIS, f, 25, seed=s).best_score for s in range(5)]
    assert np.median(bo) <= np.median(rs)
