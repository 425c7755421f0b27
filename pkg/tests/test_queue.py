import numpy as np
import pytest

from crl import slater_slack, solve_cmdp_exact
from crl.lp import InfeasibleModelError
from crl.queue import (
    LinearShape,
    QueueConfig,
    TabularGenerativeModel,
    build_queue_cmdp,
    queue_generative_model,
    transition_row,
)

CFG = QueueConfig()

# chi-square 99% quantiles for 1 and 2 degrees of freedom
CHI2_99 = {1: 6.634896601021214, 2: 9.210340371976182}


def action_index(config, a, b):
    return config.actions().index((a, b))


@pytest.mark.parametrize("s, a, b, expected", [
    (2, 0.5, 0.3, {1: 0.35, 2: 0.50, 3: 0.15}),
    (0, 0.2, 0.5, {0: 0.6, 1: 0.4}),
    (4, 0.3, 0.9, {3: 0.3, 4: 0.7}),  # full buffer: b forced to 0
])
def test_transition_law(s, a, b, expected):
    row = transition_row(CFG, s, a, b)
    full = np.zeros(5)
    for k, p in expected.items():
        full[k] = p
    np.testing.assert_allclose(row, full, atol=1e-15)


def test_rewards():
    model = build_queue_cmdp()
    j = action_index(CFG, 0.2, 0.9)
    assert model.reward[0, j] == 5.0 and model.reward[4, j] == 1.0
    assert model.constraint_rewards[0, 1, j] == pytest.approx(1.0)
    assert model.constraint_rewards[1, 1, j] == pytest.approx(6.0)
    # at a full buffer the flow reward sees b = 0
    assert model.constraint_rewards[1, 4, j] == pytest.approx(-3.0)


def test_rows_sum_to_one_and_shapes():
    model = build_queue_cmdp()
    assert model.transition.shape == (25, 5, 5)
    np.testing.assert_array_equal(model.transition.sum(axis=2), 1.0)
    paired = build_queue_cmdp(QueueConfig(action_mode="paired"))
    assert paired.transition.shape == (5, 5, 5)


def test_monotone_in_levels():
    for s in range(CFG.buffer_size + 1):
        for a in CFG.service_levels:
            up = [transition_row(CFG, s, a, b)[s + 1] if s < 4 else 0.0
                  for b in sorted(CFG.flow_levels)]
            assert np.all(np.diff(up) >= 0)
        if s >= 1:
            for b in CFG.flow_levels:
                down = [transition_row(CFG, s, a, b)[s - 1] for a in sorted(CFG.service_levels)]
                assert np.all(np.diff(down) >= 0)


@pytest.mark.parametrize("kwargs", [
    {"buffer_size": 0},
    {"service_levels": (0.0, 0.5)},
    {"service_levels": (0.5, 1.0)},
    {"flow_levels": (0.1, 0.3)},  # 0 missing
    {"flow_levels": (0.0, 1.0)},
    {"discount": 1.0},
    {"action_mode": "diagonal"},
    {"action_mode": "paired", "flow_levels": (0.0, 0.5)},
])
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        QueueConfig(**kwargs)


def test_default_thresholds_are_strictly_feasible():
    assert slater_slack(build_queue_cmdp()).slack > 0.5


def test_paired_mode_is_infeasible_at_default_thresholds():
    with pytest.raises(InfeasibleModelError):
        solve_cmdp_exact(build_queue_cmdp(QueueConfig(action_mode="paired")))


def test_custom_reward_shapes():
    config = QueueConfig(holding_reward=LinearShape(0.0, 2.0))
    assert build_queue_cmdp(config).reward[3, 0] == 6.0


# --- generative model ------------------------------------------------------------


def chi_square(counts, probs):
    keep = probs > 0
    expected = counts.sum() * probs[keep]
    return float(((counts[keep] - expected) ** 2 / expected).sum()), int(keep.sum()) - 1


def test_sampler_matches_transition_law():
    gen = queue_generative_model(seed=0)
    j = action_index(CFG, 0.5, 0.3)
    n = 100_000
    draws = gen.sample_transition_batch(np.full(n, 2), np.full(n, j))
    counts = np.bincount(draws, minlength=5)
    stat, dof = chi_square(counts, np.array([0, 0.35, 0.5, 0.15, 0]))
    assert stat < CHI2_99[dof]


def test_scalar_sampler_matches_transition_law():
    gen = queue_generative_model(seed=1)
    j = action_index(CFG, 0.2, 0.5)
    counts = np.bincount([gen.sample_transition(0, j) for _ in range(20_000)], minlength=5)
    stat, dof = chi_square(counts, np.array([0.6, 0.4, 0, 0, 0]))
    assert stat < CHI2_99[dof]


def test_every_cell_matches_at_99_percent():
    """Per-(s, action) chi-square screen; with 125 cells about one rejection is expected
    at the 99% level, so the count of rejections is bounded instead."""
    model = build_queue_cmdp()
    gen = TabularGenerativeModel(model, seed=5)
    n = 100_000
    rejections = 0
    for a in range(model.n_actions):
        for s in range(model.n_states):
            draws = gen.sample_transition_batch(np.full(n, s), np.full(n, a))
            counts = np.bincount(draws, minlength=5)
            stat, dof = chi_square(counts, model.transition[a, s])
            if dof == 0:
                assert counts[model.transition[a, s] > 0].sum() == n
            else:
                rejections += stat >= CHI2_99[dof]
    assert rejections <= 5


def test_full_buffer_never_overflows():
    gen = queue_generative_model(seed=2)
    for a in range(25):
        draws = gen.sample_transition_batch(np.full(2000, 4), np.full(2000, a))
        assert set(np.unique(draws)) <= {3, 4}


def test_initial_states_are_uniform():
    gen = queue_generative_model(seed=3)
    counts = np.bincount(gen.sample_initial_batch(50_000), minlength=5)
    stat, dof = chi_square(counts, np.full(5, 0.2))
    assert stat < 13.276704135987622  # chi2(4) 99%
    assert 0 <= gen.sample_initial() <= 4


def test_rewards_are_deterministic():
    gen = queue_generative_model(seed=4)
    j = action_index(CFG, 0.2, 0.9)
    assert gen.rewards(1, j) == gen.rewards(1, j) == (4.0, pytest.approx(1.0), pytest.approx(6.0))


def test_same_seed_same_draws():
    a = queue_generative_model(seed=9).sample_transition_batch(np.full(100, 2), np.arange(100) % 25)
    b = queue_generative_model(seed=9).sample_transition_batch(np.full(100, 2), np.arange(100) % 25)
    np.testing.assert_array_equal(a, b)
