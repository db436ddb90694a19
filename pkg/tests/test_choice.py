import math

import numpy as np
import pytest

from crossim import choice as ch
from crossim.choice import (
    ChoiceObservation,
    EstimationError,
    SeparationError,
    UtilitySpec,
    build_dataset,
    dataset_shares,
    estimate,
    estimate_joint,
    load_dataset,
    loglik_grad,
    rho_squared,
    save_dataset,
    simulate_choices,
)
from crossim.experiment import RespondentProfile, Session, TrialParams, build_session, record_preference

SPEC = UtilitySpec()
SPEC_TV = UtilitySpec(
    scale_groups=(("text", "tv"), ("visual", "tv"), ("vire", "vire")), reference="vire"
)
TRUE_BETA = {"ASC_AV": 0.4, "Age": 0.5, "Female": -0.6, "Bike_male": 0.8, "Toronto": -0.5, "HMD": 0.7}


def make_rows(dataset, n, rng, offset=0):
    rows = []
    for i in range(n):
        x = [
            ("ASC_AV", 1.0),
            ("Age", float(rng.normal())),
            ("Female", float(rng.random() < 0.43)),
            ("Bike_male", float(rng.random() < 0.07)),
            ("Toronto", float(rng.random() < 0.415)),
        ]
        if dataset == "vire":
            x.append(("HMD", float(rng.random() < 0.36)))
        rows.append(ChoiceObservation(offset + i, dataset, tuple(x), 0))
    return rows


def test_null_loglik_closed_form():
    rows = [ChoiceObservation(i, "vire", (("ASC_AV", 1.0),), i % 2) for i in range(42)]
    one = UtilitySpec(covariates=("ASC_AV",), scale_groups=(("vire", "vire"),), reference="vire")
    L, grad = loglik_grad(rows, one, [0.0], {})
    assert L == pytest.approx(42 * math.log(0.5), rel=1e-12)
    assert L == pytest.approx(-29.112, abs=5e-4)


def test_single_row_logistic_closed_form():
    one = UtilitySpec(covariates=("ASC_AV",), scale_groups=(("vire", "vire"),), reference="vire")
    L, _ = loglik_grad([ChoiceObservation(0, "vire", (("ASC_AV", 1.0),), 1)], one, [1.0], {})
    assert L == pytest.approx(-math.log(1 + math.exp(-1)), rel=1e-12)
    assert L == pytest.approx(-0.31326, abs=1e-5)


def test_rho_squared_reproduces_reported_fit_values():
    L0 = 42 * math.log(0.5)
    assert rho_squared(-25.28, L0) == pytest.approx(0.132, abs=0.002)
    assert rho_squared(-25.18, L0) == pytest.approx(0.135, abs=0.002)
    assert rho_squared(-18.98, L0) == pytest.approx(0.348, abs=0.002)
    assert rho_squared(L0, L0) == 0.0


def test_rho_squared_input_validation():
    with pytest.raises(ValueError):
        rho_squared(1.0, -10.0)
    with pytest.raises(ValueError):
        rho_squared(-1.0, 10.0)
    with pytest.raises(ValueError):
        rho_squared(-20.0, -10.0)


def test_gradient_matches_central_finite_differences():
    rng = np.random.default_rng(5)
    data = (
        make_rows("vire", 60, rng)
        + make_rows("text", 50, rng, 1000)
        + make_rows("visual", 40, rng, 2000)
    )
    data = simulate_choices(data, SPEC_TV, TRUE_BETA, {"tv": 1.2}, seed=3)
    h = 1e-6
    for trial in range(8):
        beta = rng.normal(scale=0.7, size=6)
        mu = float(rng.uniform(0.5, 2.0))
        L, grad = loglik_grad(data, SPEC_TV, beta, {"tv": mu})
        num = []
        for j in range(6):
            bp, bm = beta.copy(), beta.copy()
            bp[j] += h
            bm[j] -= h
            Lp, _ = loglik_grad(data, SPEC_TV, bp, {"tv": mu})
            Lm, _ = loglik_grad(data, SPEC_TV, bm, {"tv": mu})
            num.append((Lp - Lm) / (2 * h))
        Lp, _ = loglik_grad(data, SPEC_TV, beta, {"tv": mu + h})
        Lm, _ = loglik_grad(data, SPEC_TV, beta, {"tv": mu - h})
        num.append((Lp - Lm) / (2 * h))
        num = np.asarray(num)
        rel = np.abs(grad - num) / np.maximum(np.abs(num), 1e-6)
        assert rel.max() < 1e-5


def test_scale_identification_invariance():
    rng = np.random.default_rng(9)
    data = make_rows("vire", 40, rng) + make_rows("text", 40, rng, 500)
    data = simulate_choices(data, SPEC_TV, TRUE_BETA, {"tv": 1.3}, seed=1)
    beta = np.array([0.3, -0.2, 0.5, 0.1, -0.4, 0.25])
    for c in (2.0, 1.7, 0.31):
        L1, _ = loglik_grad(data, SPEC_TV, beta, {"vire": 1.0, "tv": 1.3})
        L2, _ = loglik_grad(data, SPEC_TV, c * beta, {"vire": 1.0 / c, "tv": 1.3 / c})
        assert abs(L1 - L2) <= 1e-10 * abs(L1)


def test_estimate_recovers_truth_within_three_se():
    rng = np.random.default_rng(2)
    rows = simulate_choices(make_rows("vire", 5000, rng), SPEC, TRUE_BETA, {}, seed=11)
    res = estimate(rows, SPEC)
    assert res.converged
    assert res.grad_norm < 1e-6
    for name, b, se in zip(res.beta_names, res.beta, res.beta_se):
        assert abs(b - TRUE_BETA[name]) < 3 * se, name


def test_balanced_intercept_only_model():
    rows = [ChoiceObservation(i, "vire", (("ASC_AV", 1.0),), i % 2) for i in range(100)]
    one = UtilitySpec(covariates=("ASC_AV",), scale_groups=(("vire", "vire"),), reference="vire")
    res = estimate(rows, one)
    assert res.beta[0] == pytest.approx(0.0, abs=1e-6)
    assert res.loglik == pytest.approx(res.null_loglik, abs=1e-9)
    assert res.rho_sq == pytest.approx(0.0, abs=1e-9)


def test_estimate_joint_equal_scales_recovers_one():
    rng = np.random.default_rng(3)
    a = simulate_choices(make_rows("vire", 4000, rng), SPEC_TV, TRUE_BETA, {"tv": 1.0}, seed=5)
    b = simulate_choices(make_rows("text", 4000, rng, 10_000), SPEC_TV, TRUE_BETA, {"tv": 1.0}, seed=6)
    res = estimate_joint([a, b], SPEC_TV)
    assert res.converged
    mu, se = res.scales[1], res.scale_se[1]
    assert abs(mu - 1.0) < 2 * se


def test_estimate_joint_recovers_heteroskedastic_scale():
    rng = np.random.default_rng(4)
    a = simulate_choices(make_rows("vire", 6000, rng), SPEC_TV, TRUE_BETA, {}, seed=7)
    b = simulate_choices(make_rows("text", 6000, rng, 10_000), SPEC_TV, TRUE_BETA, {"tv": 1.16}, seed=8)
    c = simulate_choices(make_rows("visual", 6000, rng, 20_000), SPEC_TV, TRUE_BETA, {"tv": 1.16}, seed=9)
    res = estimate_joint([a, b, c], SPEC_TV)
    assert res.converged
    mu, se = res.scales[1], res.scale_se[1]
    assert abs(mu - 1.16) < 2 * se


def test_reference_swap_rescales_but_keeps_probabilities():
    rng = np.random.default_rng(6)
    a = simulate_choices(make_rows("vire", 3000, rng), SPEC_TV, TRUE_BETA, {}, seed=20)
    b = simulate_choices(make_rows("text", 3000, rng, 9_000), SPEC_TV, TRUE_BETA, {"tv": 1.3}, seed=21)
    spec_ref_tv = UtilitySpec(
        scale_groups=(("text", "tv"), ("visual", "tv"), ("vire", "vire")), reference="tv"
    )
    r1 = estimate_joint([a, b], SPEC_TV)
    r2 = estimate_joint([a, b], spec_ref_tv)
    mu1 = r1.scales[1]  # scale of tv when vire is the reference
    # swapping the reference scales beta by the old free scale and inverts it
    assert r2.beta == pytest.approx(r1.beta * mu1, rel=1e-3)
    assert r2.scales[1] == pytest.approx(1.0 / mu1, rel=1e-3)
    assert r2.loglik == pytest.approx(r1.loglik, abs=1e-6)


def test_observed_information_positive_definite():
    rng = np.random.default_rng(8)
    rows = simulate_choices(make_rows("vire", 2000, rng), SPEC, TRUE_BETA, {}, seed=2)
    res = estimate(rows, SPEC)
    # standard errors exist and are positive for every parameter
    assert np.all(res.beta_se > 0)


def test_all_same_choice_is_separation_error():
    rows = [ChoiceObservation(i, "vire", (("ASC_AV", 1.0),), 1) for i in range(30)]
    with pytest.raises(SeparationError):
        estimate(rows, UtilitySpec(covariates=("ASC_AV",), scale_groups=(("vire", "vire"),), reference="vire"))


def test_perfect_predictor_is_separation_error():
    rows = []
    for i in range(60):
        z = float(i % 2)
        rows.append(ChoiceObservation(i, "vire", (("ASC_AV", 1.0), ("Age", z)), int(z)))
    one = UtilitySpec(covariates=("ASC_AV", "Age"), scale_groups=(("vire", "vire"),), reference="vire")
    with pytest.raises(SeparationError):
        estimate(rows, one)


def test_simulate_choices_saturation_and_determinism():
    rng = np.random.default_rng(10)
    rows = make_rows("vire", 300, rng)
    sure = simulate_choices(rows, SPEC, {"ASC_AV": 50.0}, {}, seed=1)
    assert all(r.chosen == 1 for r in sure)
    a = simulate_choices(rows, SPEC, TRUE_BETA, {}, seed=3)
    b = simulate_choices(rows, SPEC, TRUE_BETA, {}, seed=3)
    assert a == b
    half = simulate_choices(rows, SPEC, {}, {}, seed=4)
    share = sum(r.chosen for r in half) / len(half)
    assert abs(share - 0.5) < 3 * math.sqrt(0.25 / len(half))


def _sessions_with_preferences():
    params = TrialParams(seed=1)
    profiles = [
        RespondentProfile(id=1, age=26, female=0, primary_mode="bike", city="Montreal", hmd_experience=0),
        RespondentProfile(id=2, age=31, female=1, primary_mode="car", city="Toronto", hmd_experience=1),
        RespondentProfile(id=3, age=21, female=0, primary_mode="walk", city="Montreal", hmd_experience=1),
    ]
    sessions = []
    for stage in ("text", "visual", "vire"):
        for i, p in enumerate(profiles):
            s = build_session(p, stage, params)
            sessions.append(record_preference(s, "av" if (i + len(stage)) % 2 else "current"))
    return sessions


def test_build_dataset_row_structure():
    sessions = _sessions_with_preferences()
    rows = build_dataset(sessions)
    assert len(rows) == 9  # one per (respondent, stage)
    by = {(r.respondent, r.dataset): r for r in rows}
    vire_row = by[(1, "vire")]
    # male cyclist from Montreal at the sample mean age, no headset experience
    assert vire_row.value("ASC_AV") == 1.0
    assert vire_row.value("Age") == pytest.approx(0.0)
    assert vire_row.value("Female") == 0.0
    assert vire_row.value("Bike_male") == 1.0
    assert vire_row.value("Toronto") == 0.0
    assert vire_row.value("HMD") == 0.0
    assert "HMD" in vire_row.names
    text_row = by[(2, "text")]
    assert "HMD" not in text_row.names
    assert text_row.value("Female") == 1.0
    assert text_row.value("Toronto") == 1.0
    assert text_row.value("Bike_male") == 0.0


def test_build_dataset_requires_preferences():
    params = TrialParams(seed=1)
    p = RespondentProfile(id=9, age=25, female=0, primary_mode="car", city="Toronto", hmd_experience=0)
    with pytest.raises(ValueError, match="9-text"):
        build_dataset([build_session(p, "text", params)])


def test_dataset_csv_roundtrip(tmp_path):
    sessions = _sessions_with_preferences()
    rows = build_dataset(sessions)
    path = tmp_path / "choices.csv"
    save_dataset(rows, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[-2:] == ["dataset", "chosen"]
    again = load_dataset(path)
    assert len(again) == len(rows)
    assert [r.chosen for r in again] == [r.chosen for r in rows]
    assert dataset_shares(again) == dataset_shares(rows)
    vire_rows = [r for r in again if r.dataset == "vire"]
    assert all("HMD" in r.names for r in vire_rows)
    text_rows = [r for r in again if r.dataset == "text"]
    assert all("HMD" not in r.names for r in text_rows)


def test_format_result_layout():
    rng = np.random.default_rng(12)
    rows = simulate_choices(make_rows("vire", 500, rng), SPEC, TRUE_BETA, {}, seed=30)
    res = estimate(rows, SPEC)
    text = ch.format_result(res)
    assert "ASC_AV" in text and "rho^2" in text and "Obs." in text
    assert f"{res.n_obs:d}" in text
