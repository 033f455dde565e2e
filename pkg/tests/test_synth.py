import json
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

from conflictlens import synth
from conflictlens.errors import InvalidConfig, NoRoot
from conflictlens.events import CRITICAL_PET, LEVELS


@pytest.fixture(scope="module")
def big_sample():
    config = synth.GeneratorConfig(seed=3, calibration_rows=20_000)
    return config, synth.generate_dataset(config, n=40_000)


def test_marginals_are_distributions():
    for var, table in synth.default_marginals().items():
        assert sum(table.values()) == pytest.approx(1.0, abs=1e-12), var
        assert min(table.values()) >= 0


def test_ground_truth_matches_published_table():
    with open(Path(__file__).parent / "data" / "table3.json", encoding="utf-8") as fh:
        table = {r["term"]: r for r in json.load(fh)["terms"]}
    assert synth.TABLE3_INTERCEPT == table["intercept"]["coefficient"]
    for name, coef in synth.TABLE3_COEFFICIENTS.items():
        assert table[name]["coefficient"] == coef


def test_deterministic_for_fixed_seed():
    config = synth.GeneratorConfig(seed=42, calibration_rows=5000)
    assert synth.generate_dataset(config, 200) == synth.generate_dataset(config, 200)


def test_different_seeds_differ():
    a = synth.generate_dataset(synth.GeneratorConfig(seed=1, calibration_rows=5000), 200)
    b = synth.generate_dataset(synth.GeneratorConfig(seed=2, calibration_rows=5000), 200)
    assert a != b


def test_zero_rows():
    assert synth.generate_dataset(synth.GeneratorConfig(calibration_rows=5000), 0) == []


def test_pet_in_critical_range(big_sample):
    _, events = big_sample
    pet = np.array([e.pet for e in events])
    assert pet.min() > 0 and pet.max() < CRITICAL_PET


def test_pedestrian_coercion(big_sample):
    _, events = big_sample
    peds = [e for e in events if e.vru_type == "pedestrian"]
    assert peds
    assert all(e.vru_movement == "crosswalk" for e in peds)
    assert all(e.vru_location != "travel_lane" for e in peds)


def test_levels_are_legal(big_sample):
    _, events = big_sample
    for var, levels in LEVELS.items():
        assert {getattr(e, var) for e in events} <= set(levels)


def test_categorical_marginals_recovered(big_sample):
    # Variables untouched by the pedestrian coercion keep their shares.
    _, events = big_sample
    n = len(events)
    marg = synth.default_marginals()
    for var in ("vehicle_type", "veh_movement", "weather", "lighting", "vru_signal"):
        for level, p in marg[var].items():
            share = sum(getattr(e, var) == level for e in events) / n
            assert share == pytest.approx(p, abs=4 * np.sqrt(p * (1 - p) / n) + 1e-4), (var, level)


def test_speed_means(big_sample):
    _, events = big_sample
    for name, mean in synth._SPEED_MEANS.items():
        values = np.array([getattr(e, name) for e in events])
        assert values.mean() == pytest.approx(mean, rel=0.02)


def test_base_rate_calibrated(big_sample):
    _, events = big_sample
    rate = np.mean([e.label for e in events])
    se = np.sqrt(synth.DEFAULT_BASE_RATE * (1 - synth.DEFAULT_BASE_RATE) / len(events))
    assert abs(rate - synth.DEFAULT_BASE_RATE) < 4 * se


def test_calibrate_intercept_constant_predictor():
    # With a zero linear part the intercept is logit(base_rate) exactly.
    sampler = lambda n, rng: None
    b0 = synth.calibrate_intercept(lambda m: np.zeros(100), sampler, 0.2, seed=0)
    assert b0 == pytest.approx(synth.logit(0.2), abs=1e-10)


def test_calibrate_intercept_mean_probability():
    config = synth.GeneratorConfig(seed=5, calibration_rows=10_000)
    b0 = synth.generator_intercept(config)
    rng = np.random.default_rng(99)
    eta = config.ground_truth.linear_part(synth._encoded_sampler(config)(10_000, rng))
    assert expit(b0 + eta).mean() == pytest.approx(config.base_rate, abs=0.01)


def test_unreachable_base_rate_raises_noroot():
    sampler = lambda n, rng: None
    with pytest.raises(NoRoot):
        synth.calibrate_intercept(lambda m: np.full(10, 40.0), sampler, 0.01, seed=0)


def test_interaction_changes_labels():
    base = synth.GeneratorConfig(seed=4, calibration_rows=5000)
    inter = synth.GeneratorConfig(
        seed=4, calibration_rows=5000,
        ground_truth=synth.GroundTruth(interactions=(("proximity.low", "vru_signal.red", 4.0),)),
    )
    a = [e.label for e in synth.generate_dataset(base, 500)]
    b = [e.label for e in synth.generate_dataset(inter, 500)]
    assert a != b


def test_unknown_interaction_column():
    config = synth.GeneratorConfig(
        calibration_rows=1000, ground_truth=synth.GroundTruth(interactions=(("nope", "pet", 1.0),))
    )
    with pytest.raises(InvalidConfig):
        synth.generate_dataset(config, 10)


@pytest.mark.parametrize(
    "patch",
    [
        {"base_rate": 1.5},
        {"categorical_marginals": {"weather": {"clear": 0.5, "sunny": 0.2}}},
        {"categorical_marginals": {"weather": {"hail": 1.0}}},
        {"pet_mixture": {"weights": [0.5, 0.6]}},
        {"speed_params": {"veh_median_speed": [0, 1]}},
        {"colour": "blue"},
    ],
)
def test_invalid_config(patch):
    with pytest.raises(InvalidConfig):
        synth.GeneratorConfig.from_dict(patch)


def test_config_json_round_trip(tmp_path):
    config = synth.GeneratorConfig(
        seed=9, ground_truth=synth.GroundTruth(interactions=(("proximity.low", "vru_signal.red", 3.0),))
    )
    path = tmp_path / "gen.json"
    path.write_text(json.dumps(config.to_dict()))
    again = synth.GeneratorConfig.from_json(path)
    assert again.to_dict() == config.to_dict()
