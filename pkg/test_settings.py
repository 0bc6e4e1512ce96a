import math
from pathlib import Path

import pytest

from errors import ConfigurationError
from settings import Settings, load_settings

TEMPLATE = Path(__file__).parent / "templates" / "solver.env"


def test_defaults_without_sources():
    settings = load_settings(environ={})
    assert settings == Settings()
    assert settings.gamma_inc == 2.0 and settings.eta2 == 0.25
    assert settings.smoothing_eps is None
    assert math.isinf(settings.rho_max)


def test_committed_template_matches_defaults():
    assert load_settings(TEMPLATE, environ={}) == Settings()


def test_precedence_file_env_cli(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("QCP_BETA=5e-3\nQCP_MAX_OUTER=20\nQCP_REPLICATIONS=5\n", encoding="utf-8")
    env = {"QCP_MAX_OUTER": "30", "QCP_REPLICATIONS": "7", "UNRELATED": "x"}
    settings = load_settings(config, {"replications": "9"}, environ=env)
    assert settings.beta == 5e-3          # file
    assert settings.max_outer == 30       # environment over file
    assert settings.replications == 9     # command line over environment


def test_config_file_from_environment(tmp_path):
    config = tmp_path / "other.env"
    config.write_text("QCP_SPREAD=std\n", encoding="utf-8")
    assert load_settings(environ={"QCP_CONFIG": str(config)}).spread == "std"


@pytest.mark.parametrize("raw, expected", [("true", True), ("1", True), ("yes", True),
                                           ("False", False), ("no", False)])
def test_bool_parsing(raw, expected):
    assert load_settings(environ={"QCP_DEBUG_CHECKS": raw}).debug_checks is expected


def test_optional_bandwidth():
    assert load_settings(environ={"QCP_SMOOTHING_EPS": ""}).smoothing_eps is None
    assert load_settings(environ={"QCP_SMOOTHING_EPS": "0.02"}).smoothing_eps == 0.02


@pytest.mark.parametrize("overrides", [
    {"beta": "abc"},
    {"max_outer": "2.5"},
    {"beta_mode": "adaptive"},
    {"eta1": "1.5"},
    {"gamma_dec": "-1"},
    {"r_term": "0.5"},
    {"no_such_key": "1"},
])
def test_invalid_values_raise(overrides):
    with pytest.raises(ConfigurationError):
        load_settings(overrides=overrides, environ={})


def test_error_names_the_key():
    with pytest.raises(ConfigurationError, match="QCP_BETA"):
        load_settings(overrides={"beta": "abc"}, environ={})


def test_unknown_key_in_file_rejected(tmp_path):
    config = tmp_path / "typo.env"
    config.write_text("QCP_BEAT=1e-3\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="QCP_BEAT"):
        load_settings(config, environ={})


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        load_settings(tmp_path / "absent.env", environ={})


def test_solver_configs_follow_settings():
    settings = load_settings(overrides={"eta1": "0.2", "beta_mode": "radius", "schedule_factor": "0.5",
                                        "max_inner": "77"}, environ={})
    tr = settings.trust_region(sample_size=500, gradient_method="smoothing")
    assert (tr.eta1, tr.beta_mode, tr.sample_size, tr.gradient_method, tr.max_iterations) == \
        (0.2, "radius", 500, "smoothing", 77)
    alm = settings.alm(seed=4, sample_size=500)
    assert alm.seed == 4
    assert alm.r_schedule.at(1) == pytest.approx(0.5e-5)
    assert alm.eta_schedule.at(2) == pytest.approx(0.25e-5)
    assert alm.n_schedule.at(3) == 500
    assert alm.trust_region.eta1 == 0.2
