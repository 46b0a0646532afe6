"""Config parsing, validation, and the batch CLI pipeline."""

import csv
from dataclasses import replace

import numpy as np
import pytest

from pdtomo import cli
from pdtomo.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_to_text,
    load_config,
    parse_config_text,
)
from pdtomo.ct import build_geometry
from pdtomo.fileio import save_eigenset
from pdtomo.solver import CSV_COLUMNS
from pdtomo.spectral import EigenSet


def tiny_cfg(outdir, **kw):
    """A configuration small enough to solve in milliseconds."""
    base = dict(
        nx=16,
        geometry="desk-full",
        n_views=12,
        n_bins=24,
        k_max=40,
        record_stride=10,
        power_iters=60,
        seed=3,
        rho=0.3,
        outdir=str(outdir),
    )
    base.update(kw)
    return replace(ExperimentConfig(), **base)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- config format -----------------------------------------------------------


def test_defaults_validate():
    cfg = ExperimentConfig()
    assert cfg.validate() is cfg


def test_text_round_trip_and_manifest_version():
    cfg = replace(
        ExperimentConfig(),
        nx=32,
        rho=0.25,
        problem="tvlsq",
        beta=0.3,
        gamma="1.5",
        plan="lowrank",
        k_eigs=5,
        validate_prox=True,
        outdir="results/x",
    )
    assert parse_config_text(config_to_text(cfg)) == cfg
    manifest = config_to_text(cfg, version="0.1.0")
    assert manifest.splitlines()[0] == "version = 0.1.0"
    # a manifest is itself a valid config: the version line is ignored
    assert parse_config_text(manifest) == cfg


def test_parse_comments_blanks_and_spacing():
    cfg = parse_config_text(
        """
        # full-line comment
        nx = 32   # trailing comment

        rho=0.5
        geometry =  desk-sparse
        """
    )
    assert (cfg.nx, cfg.rho, cfg.geometry) == (32, 0.5, "desk-sparse")


def test_parse_bool_spellings():
    for text in ("1", "true", "Yes", "ON"):
        assert parse_config_text(f"validate_prox = {text}").validate_prox is True
    for text in ("0", "false", "No", "OFF"):
        assert parse_config_text(f"validate_prox = {text}").validate_prox is False
    with pytest.raises(ConfigError, match="boolean"):
        parse_config_text("validate_prox = maybe")


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 3: unknown key 'voxels'"):
        parse_config_text("nx = 32\n\nvoxels = 10")
    with pytest.raises(ConfigError, match="line 1: expected 'key = value'"):
        parse_config_text("just some words")
    with pytest.raises(ConfigError, match="line 2: cannot parse 'abc' as float"):
        parse_config_text("nx = 32\nrho = abc")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "absent.cfg")


def test_apply_overrides_last_wins():
    cfg = apply_overrides(ExperimentConfig(), ["k_max=5", "rho = 2.5", "k_max=9"])
    assert (cfg.k_max, cfg.rho) == (9, 2.5)


@pytest.mark.parametrize(
    "updates, match",
    [
        (dict(k_max=0), "k_max"),
        (dict(record_stride=0), "record_stride"),
        (dict(rho=0.0), "rho"),
        (dict(rho=-1.0), "rho"),
        (dict(problem="ridge"), "unknown problem"),
        (dict(solver="adam"), "unknown solver"),
        (dict(plan="block"), "unknown plan"),
        (dict(solver="gd", problem="tvlsq"), "only handles the lsq problem"),
        (dict(solver="cgls", problem="tvclsq"), "only handles the lsq problem"),
        (dict(plan="diagonal", problem="tvclsq"), "scalar sigma"),
        (dict(k_eigs=0), "k_eigs"),
        (dict(gamma="huh"), "number or 'phantom-tv'"),
        (dict(gamma="-1.0", problem="tvclsq"), "gamma must be positive"),
    ],
)
def test_validate_rejects(updates, match):
    with pytest.raises(ConfigError, match=match):
        replace(ExperimentConfig(), **updates).validate()


def test_validate_allows_nonpositive_gamma_outside_constraint():
    # the constraint radius only matters for the constrained problem
    replace(ExperimentConfig(), gamma="-1.0", problem="lsq").validate()


# -- run pipeline ------------------------------------------------------------


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("run")
    cfg = tiny_cfg(outdir)
    res = cli.run_experiment(cfg)
    return cfg, res, outdir


def test_run_writes_all_artifacts(finished_run):
    cfg, res, outdir = finished_run
    assert (outdir / "convergence.csv").is_file()
    assert (outdir / "final_image.raw").stat().st_size == 16 * 16 * 8
    assert (outdir / "final_image.pgm").read_bytes().startswith(b"P5\n")
    assert (outdir / "data.sng").is_file()
    assert (outdir / "manifest").is_file()
    assert res["outdir"] == str(outdir)
    assert res["iterations"] == cfg.k_max
    assert res["final_image_rmse"] < 1.0


def test_convergence_csv_layout(finished_run):
    _, _, outdir = finished_run
    rows = read_csv(outdir / "convergence.csv")
    assert rows[0] == list(CSV_COLUMNS)
    # iteration 0 plus every stride-th iterate through k_max
    assert [r[0] for r in rows[1:]] == ["0", "10", "20", "30", "40"]
    for row in rows[1:]:
        assert float(row[3]) >= 0.0
        assert row[7] == ""  # no constraint radius in the plain lsq problem


def test_manifest_replays_byte_identical(finished_run, tmp_path):
    cfg, _, outdir = finished_run
    loaded = load_config(outdir / "manifest")
    assert loaded == cfg
    rerun = replace(loaded, outdir=str(tmp_path / "replay"))
    cli.run_experiment(rerun)
    for name in ("convergence.csv", "final_image.raw", "data.sng"):
        assert (tmp_path / "replay" / name).read_bytes() == (
            outdir / name
        ).read_bytes()


def test_constrained_run_records_constraint_radius(tmp_path):
    cfg = tiny_cfg(tmp_path / "tvc", problem="tvclsq", k_max=20, record_stride=20)
    cli.run_experiment(cfg)
    rows = read_csv(tmp_path / "tvc" / "convergence.csv")
    assert rows[0] == list(CSV_COLUMNS)
    assert float(rows[-1][7]) > 0.0


# -- sweeps ------------------------------------------------------------------


def test_sweep_summary_and_failed_value(tmp_path, capsys):
    cfg = tiny_cfg(tmp_path / "sw")
    summary = cli.sweep(cfg, "rho", ["0.5", "2.0", "-1.0"])
    rows = read_csv(summary)
    assert rows[0] == ["value", "final_image_rmse", "final_r_sigma", "final_r_tau"]
    assert [r[0] for r in rows[1:]] == ["0.5", "2.0", "-1.0"]
    # the invalid value is reported, not fatal, and leaves no artifacts
    assert rows[3][1:] == ["", "", ""]
    assert "sweep rho=-1.0 failed" in capsys.readouterr().err
    assert not (tmp_path / "sw" / "rho_-1.0").exists()
    # summary cells repeat the last recorded image rmse of each sub-run
    sub = read_csv(tmp_path / "sw" / "rho_0.5" / "convergence.csv")
    assert rows[1][1] == sub[-1][3]


def test_sweep_over_rank_uses_lowrank_plans(tmp_path):
    cfg = tiny_cfg(
        tmp_path / "swk",
        plan="lowrank",
        k_max=20,
        cache_dir=str(tmp_path / "cache"),
    )
    summary = cli.sweep(cfg, "K", ["1", "2"])
    rows = read_csv(summary)
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    for value in ("1", "2"):
        assert (tmp_path / "swk" / f"K_{value}" / "convergence.csv").is_file()
    assert list((tmp_path / "cache").glob("eig_*.bin"))


def test_sweep_validation():
    cfg = tiny_cfg("unused")
    with pytest.raises(ConfigError, match="sweep parameter"):
        cli.sweep(cfg, "alpha", ["1.0"])
    with pytest.raises(ConfigError, match="at least one value"):
        cli.sweep(cfg, "rho", [])


# -- demos -------------------------------------------------------------------


def test_demo_names_write_csv_artifacts(tmp_path):
    for name in ("fe-s0", "fe-s1", "be"):
        written = cli.demo(name, tmp_path / name)
        assert written and all(p.is_file() for p in written)
    names = {p.name for p in cli.demo("abe", tmp_path / "abe")}
    assert names == {"abe_twostep.csv", "abe_periodic.csv"}
    with pytest.raises(ConfigError, match="unknown demo"):
        cli.demo("nope", tmp_path)


def test_demo_abe_csv_contents(tmp_path):
    cli.demo("abe", tmp_path)
    rows = read_csv(tmp_path / "abe_twostep.csv")
    assert rows[0] == ["iter", "x", "lambda", "radius"]
    # the two-step scheme parks at the saddle from iteration 2 onward
    assert all(float(r[3]) <= 1e-12 for r in rows[3:])
    periodic = read_csv(tmp_path / "abe_periodic.csv")
    assert len(periodic) == 1 + 14
    assert float(periodic[1][3]) == pytest.approx(float(periodic[7][3]), abs=1e-12)


def test_demo_sigma_sweep_files(tmp_path):
    written = cli.demo("cppd1d", tmp_path)
    assert {p.name for p in written} == {
        "cppd1d_a0.01.csv",
        "cppd1d_a0.1.csv",
        "cppd1d_a1.0.csv",
    }
    rows = read_csv(tmp_path / "cppd1d_a0.1.csv")
    assert rows[0] == ["sigma", "final_magnitude"]
    assert len(rows) == 1 + 367


def test_demo_conjugate_oracle_matches_analytic(tmp_path):
    written = cli.demo("lf-oracle", tmp_path)
    assert {p.name for p in written} == {
        "lf_quadratic.csv",
        "lf_abs.csv",
        "lf_linear.csv",
        "lf_interval.csv",
    }
    rows = read_csv(tmp_path / "lf_quadratic.csv")
    err = max(abs(float(r[1]) - float(r[2])) for r in rows[1:])
    assert err <= 1e-4
    rows = read_csv(tmp_path / "lf_abs.csv")
    finite = [r for r in rows[1:] if float(r[2]) < np.inf]
    assert all(abs(float(r[1]) - float(r[2])) <= 1e-12 for r in finite)


# -- command line entry point ------------------------------------------------


def test_main_run_from_config_file(tmp_path, capsys):
    cfgfile = tmp_path / "exp.cfg"
    cfgfile.write_text(config_to_text(tiny_cfg(tmp_path / "ignored")))
    out = tmp_path / "cli_run"
    code = cli.main(["run", "-c", str(cfgfile), "-o", str(out)])
    assert code == 0
    assert "done: 40 iterations" in capsys.readouterr().out
    assert (out / "convergence.csv").is_file()
    # the manifest records the effective output directory, not the config's
    assert f"outdir = {out}" in (out / "manifest").read_text()


def test_main_config_error_exit_code(tmp_path, capsys):
    code = cli.main(["run", "--set", "k_max=0", "-o", str(tmp_path)])
    assert code == 1
    assert capsys.readouterr().err.startswith("config error:")


def test_main_numerical_failure_exit_code(tmp_path, capsys):
    args = ["run", "--set", "solver=gd", "--set", "alpha=20", "-o", str(tmp_path)]
    for pair in ("nx=16", "n_views=12", "n_bins=24", "k_max=200", "power_iters=60"):
        args += ["--set", pair]
    with pytest.warns(RuntimeWarning):
        code = cli.main(args)
    assert code == 2
    assert capsys.readouterr().err.startswith("numerical failure:")


def test_main_usage_errors_exit_code(tmp_path, capsys):
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["run", "-c", str(tmp_path / "absent.cfg")]) == 1
    err = capsys.readouterr().err
    assert "config error:" in err


def test_main_phantom_command(tmp_path, capsys):
    out = tmp_path / "ph"
    code = cli.main(["phantom", "--set", "nx=16", "-o", str(out)])
    assert code == 0
    assert "phantom TV" in capsys.readouterr().out
    for name in ("phantom.raw", "phantom.pgm", "phantom_narrow.pgm", "gmi.raw", "gmi.pgm"):
        assert (out / name).is_file()


def test_main_eig_command_and_cache(tmp_path, capsys):
    args = ["eig", "--set", f"cache_dir={tmp_path / 'cache'}"]
    for pair in ("nx=16", "n_views=12", "n_bins=24", "power_iters=60", "k_eigs=2"):
        args += ["--set", pair]
    assert cli.main(args) == 0
    out = capsys.readouterr().out
    assert "eigenvalues [" in out and "cached at" in out
    assert len(list((tmp_path / "cache").glob("eig_*.bin"))) == 1
    # a second invocation reuses the cached file rather than recomputing
    assert cli.main(args) == 0
    assert len(list((tmp_path / "cache").glob("eig_*.bin"))) == 1


def test_eigenpair_cache_is_actually_read(tmp_path):
    cfg = tiny_cfg(tmp_path / "out", k_eigs=1, cache_dir=str(tmp_path / "cache"))
    grid = cli.build_grid(cfg)
    geom = cli.build_geom(cfg)
    from pdtomo.ct import projector

    a_map = projector(grid, geom)
    first = cli.cached_eigenpairs(cfg, grid, geom, a_map)
    path = cli._eig_cache_path(cfg, grid, geom)
    assert path.is_file()
    doctored = EigenSet(np.eye(a_map.domain_dim)[:1], np.array([3.0]))
    save_eigenset(path, doctored)
    second = cli.cached_eigenpairs(cfg, grid, geom, a_map)
    assert np.array_equal(second.values, doctored.values)
    assert not np.array_equal(first.values, doctored.values)
