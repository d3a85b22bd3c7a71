import math

import numpy as np
import pytest
from scipy.stats import norm

from trackrd.data_model import RDSample
from trackrd.diagnostics import (
    adjusted_counts,
    balancing_test,
    density_profile,
    placebo_rd,
    rd_plot_data,
    read_question_counts,
)
from trackrd.regression import RegressionError
from trackrd.structural_sim import SimConfig, generate_cohort

from conftest import random_sample


def test_balancing_constant_covariate(rng):
    s = random_sample(rng)
    s = RDSample(s.cutoff, s.bandwidth, s.r, s.H1, s.H4, {"const": np.ones(s.n)})
    res = balancing_test(s, "const")
    assert res.jump == pytest.approx(0, abs=1e-12) and res.se == pytest.approx(0, abs=1e-12)
    assert res.passed and res.left_mean == pytest.approx(1)


def test_placebo_constant_outcome(rng):
    s = random_sample(rng)
    s = RDSample(s.cutoff, s.bandwidth, s.r, s.H1, s.H4, {"progress": np.ones(s.n)})
    assert placebo_rd(s, "progress").jump == pytest.approx(0, abs=1e-12)


def test_balancing_and_placebo_share_estimator(rng):
    s = random_sample(rng)
    assert balancing_test(s, "girl").as_dict() == placebo_rd(s, "girl").as_dict()


def test_pass_rule_matches_critical_value(rng):
    s = random_sample(rng, n=600)
    for level in (0.01, 0.05, 0.2, 0.5):
        res = balancing_test(s, "income", level)
        assert res.passed == (abs(res.t) < norm.ppf(1 - level / 2))


def test_missing_column(rng):
    s = random_sample(rng)
    with pytest.raises(KeyError):
        balancing_test(s, "nope")
    with pytest.raises(KeyError):
        placebo_rd(s, "nope")


def test_adjusted_counts():
    assert adjusted_counts([400], [4])[0] == 300
    raw = np.array([0, 5, 12])
    np.testing.assert_array_equal(adjusted_counts(raw, [3, 3, 3]), raw)


def test_density_uniform_counts_no_jump():
    scores = np.repeat(np.arange(501, 551), 100)
    prof = density_profile(scores, 537)
    assert prof.jump == pytest.approx(0, abs=1e-12)
    assert (prof.raw == 100).all() and (prof.adjusted == prof.raw).all()


def test_density_k3_override_is_identity():
    scores = np.random.default_rng(1).integers(520, 550, 3000)
    a = density_profile(scores, 537)
    b = density_profile(scores, 537, {s: 3 for s in range(501, 551)})
    assert a.jump == b.jump and a.se == b.se


def test_density_detects_bunching():
    rng = np.random.default_rng(2)
    scores = rng.integers(520, 555, 20000).clip(501, 550)
    scores = np.concatenate([scores, np.full(1500, 537), np.full(1500, 538)])
    prof = density_profile(scores, 537)
    assert prof.t > 3


def test_density_question_count_adjustment():
    scores = np.repeat(np.arange(501, 551), 90)
    qc = {537: 4, 538: 4}
    prof = density_profile(scores, 537, qc)
    i = 537 - 501
    assert prof.adjusted[i] == pytest.approx(90 * 3 / 4)
    assert prof.questions[i] == 4 and prof.questions[0] == 3


def test_density_empty_side():
    with pytest.raises(ValueError):
        density_profile(np.full(10, 545), 537)


def test_density_records_input():
    cohort = generate_cohort(SimConfig(n=2000, seed=3))
    recs = cohort.to_records()
    a = density_profile(recs, 537)
    b = density_profile(cohort.score, 537)
    np.testing.assert_array_equal(a.raw, b.raw)
    assert a.as_dict()["counts"][0]["score"] == 501


def test_read_question_counts(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("score,questions\n537,4\n538,2\n")
    assert read_question_counts(p) == {537: 4, 538: 2}


def _plot_sample(n, rng, outcome):
    r = rng.integers(-20, 21, n)
    return RDSample(537, 20, r, outcome(r), np.zeros(n))


def test_rd_plot_constant_outcome(rng):
    s = _plot_sample(20000, rng, lambda r: np.ones(len(r)))
    d = rd_plot_data(s, "H1")
    assert np.allclose(d.mean, 1) and np.allclose(d.half_width, 0)
    assert np.allclose(d.fit, 1) and d.jump == pytest.approx(0, abs=1e-9)
    assert d.r.min() == -20 and d.r.max() == 20  # centered scores


def test_rd_plot_first_stage_jump():
    cohort = generate_cohort(SimConfig(n=100_000, p_complier=0.3, seed=4))
    d = rd_plot_data(cohort.rd_sample(20, "distance"), "H1")
    assert abs(d.jump - 0.3) < 0.05
    rows = d.rows()
    assert set(rows[0]) == {"r", "mean", "ci_lo", "ci_hi", "fit"}


def test_rd_plot_insufficient_support(rng):
    r = rng.integers(-3, 3, 500)
    s = RDSample(537, 3, r, (r >= 0).astype(float), np.zeros(500))
    with pytest.raises(RegressionError, match="insufficient support"):
        rd_plot_data(s, "H1")


def test_rd_plot_ci_scales_with_sqrt_n():
    cohort = generate_cohort(SimConfig(n=200_000, seed=5))
    s = cohort.rd_sample(20, "distance")
    half = np.arange(s.n) % 2 == 0
    sub = RDSample(s.cutoff, 20, s.r[half], s.H1[half], s.H4[half])
    assert sub.n >= 10_000
    full, part = rd_plot_data(s, "H4"), rd_plot_data(sub, "H4")
    ratio = np.median(part.half_width / full.half_width)
    assert 1.30 <= ratio <= 1.55
    assert math.isclose(ratio, math.sqrt(2), rel_tol=0.1)


def test_density_size_on_smooth_cohorts():
    from trackrd.montecarlo import replication_seed

    inside = []
    for k in range(200):
        c = generate_cohort(SimConfig(n=20_000, seed=replication_seed(78, k)))
        inside.append(abs(density_profile(c.score, 537).t) < 2)
    assert np.mean(inside) >= 0.95
