"""Config construction, validation, and the key=value file format."""

import dataclasses
import math

import pytest

from wpmec.config import (SystemConfig, dump_config, load_config,
                          parse_config_text, table2_profile)


def test_desk_defaults():
    cfg = SystemConfig()
    assert (cfg.num_haps, cfg.num_antennas, cfg.num_irs) == (2, 2, 2)
    assert (cfg.num_elements, cfg.num_wds) == (8, 3)
    assert cfg.block_s == 1.0
    assert cfg.noise_w == 1e-10
    assert cfg.p_max_w == 4000.0
    assert cfg.cluster_x_m == 10.0
    assert cfg.beta_min == 0.2
    assert cfg.phi_rad == pytest.approx(0.43 * math.pi)
    assert cfg.alpha == 1.6
    assert cfg.delta_rad == pytest.approx(math.pi / 8)
    assert cfg.dim_bm == 4
    assert cfg.dim_in == 16


def test_table2_profile():
    cfg = table2_profile()
    assert (cfg.num_haps, cfg.num_antennas) == (5, 2)
    assert (cfg.num_irs, cfg.num_elements, cfg.num_wds) == (2, 10, 4)
    assert cfg.p_max_w == 100.0
    assert cfg.cluster_x_m == 6.0
    assert cfg.dim_bm == 10
    # overrides thread through
    assert table2_profile(num_wds=6).num_wds == 6


def test_replace_returns_new_frozen_instance():
    cfg = SystemConfig()
    other = cfg.replace(num_elements=4)
    assert other.num_elements == 4
    assert cfg.num_elements == 8
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.num_elements = 5


@pytest.mark.parametrize("changes", [
    dict(num_elements=0),
    dict(num_wds=-1),
    dict(num_haps=2.0),          # must be a true int
    dict(beta_min=0.0),
    dict(beta_min=1.2),
    dict(phi_rad=3.5),
    dict(alpha=0.0),
    dict(penalty_growth=1.0),
    dict(noise_w=0.0),
    dict(p_circuit_w=-1e-9),
    dict(tau2_grid=0),
    dict(pl_exp_hu=0.0),
    dict(rician_iu=-0.5),
    dict(p4_inner_cap=0),
    dict(delta_rad=0.0),
])
def test_validation_rejects(changes):
    with pytest.raises(ValueError):
        SystemConfig(**changes)


def test_rician_inf_allowed():
    cfg = SystemConfig(rician_hu=math.inf)
    assert math.isinf(cfg.rician_hu)


def test_parse_symbol_keys():
    cfg = parse_config_text(
        "b = 3\n"
        "m = 4\n"
        "i = 1\n"
        "n = 16\n"
        "k = 5\n"
        "t_s = 2.0\n"
        "omega_hz = 5e5\n"
        "sigma2_w = 1e-9\n"
        "c_cycles_per_bit = 1000\n"
        "f_max = 2e8\n"
        "p_c_w = 1e-7\n"
        "tau2_grid_size = 7\n"
    )
    assert (cfg.num_haps, cfg.num_antennas, cfg.num_irs) == (3, 4, 1)
    assert (cfg.num_elements, cfg.num_wds) == (16, 5)
    assert cfg.block_s == 2.0
    assert cfg.bandwidth_hz == 5e5
    assert cfg.noise_w == 1e-9
    assert cfg.cycles_per_bit == 1000.0
    assert cfg.f_max_hz == 2e8
    assert cfg.p_circuit_w == 1e-7
    assert cfg.tau2_grid == 7


def test_parse_field_names_comments_and_blanks():
    cfg = parse_config_text(
        "# a comment line\n"
        "\n"
        "beta_min = 0.5   # trailing comment\n"
        "rician_hu = inf\n"
    )
    assert cfg.beta_min == 0.5
    assert math.isinf(cfg.rician_hu)


def test_parse_layers_over_base():
    base = SystemConfig(num_elements=4)
    cfg = parse_config_text("p_max_w = 3.0\n", base=base)
    assert cfg.num_elements == 4
    assert cfg.p_max_w == 3.0


@pytest.mark.parametrize("text,fragment", [
    ("whatever = 1\n", "unknown config key"),
    ("n = 8.5\n", "expects an integer"),
    ("p_max_w = lots\n", "expects a number"),
    ("just a line\n", "expected key=value"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ValueError, match=fragment):
        parse_config_text(text)


def test_parse_error_reports_line_number():
    with pytest.raises(ValueError, match="line 3"):
        parse_config_text("n = 8\n\nbogus_key = 1\n")


def test_dump_load_roundtrip(tmp_path):
    cfg = SystemConfig(num_elements=6, beta_min=0.35, rician_hi=math.inf,
                       p_max_w=42.5, tau2_grid=9)
    path = tmp_path / "sys.cfg"
    path.write_text(dump_config(cfg), encoding="utf-8")
    assert load_config(str(path)) == cfg


def test_load_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_config("/no/such/file.cfg")
