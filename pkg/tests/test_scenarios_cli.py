import json
import pickle
import subprocess
import sys

import numpy as np
import pytest

from pnpdg import catalog
from pnpdg.basis import ConfigurationError, gauss_rule
from pnpdg.catalog import CatalogFunction
from pnpdg.cli import main
from pnpdg.io import read_trace_csv
from pnpdg.mesh import Mesh1D, project
from pnpdg.scenarios import (EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, EXIT_SOLVER, OUT_DIR_ENV, ScenarioConfig,
                             build_report, builtin_scenario, convergence_study, default_out_dir, list_scenarios,
                             observed_order, run)


# -- catalog -------------------------------------------------------------------------

def test_catalog_references():
    assert CatalogFunction(2.5)(np.array([0.0, 1.0])).tolist() == [2.5, 2.5]
    assert CatalogFunction("poly:1,0,3")(np.array([2.0])).tolist() == [13.0]
    assert CatalogFunction("ex1.sigma_b")(0.0) == pytest.approx(-1 / 60)
    with pytest.raises(ConfigurationError):
        CatalogFunction("nope")
    with pytest.raises(ConfigurationError):
        CatalogFunction("poly:1,x")
    with pytest.raises(ConfigurationError):
        CatalogFunction("exp_decay").of_x()
    f = pickle.loads(pickle.dumps(CatalogFunction("ex2.c1")))
    assert f.ref == "ex2.c1" and f(np.array([0.5]))[0] == pytest.approx(1 + np.pi)
    assert "ex3.rho0" in catalog.names()


def test_manufactured_sources_match_symbolic_residual():
    """The registered sources equal c_t - (c_x + q c psi_x)_x for the registered exact solution."""
    sp = pytest.importorskip("sympy")
    t, x = sp.symbols("t x")
    c1 = x ** 2 * (1 - x) ** 2 * sp.exp(-t)
    c2 = x ** 2 * (1 - x) ** 3 * sp.exp(-t)
    psi = -(10 * x ** 7 - 28 * x ** 6 + 21 * x ** 5) * sp.exp(-t) / 420
    assert sp.simplify(-sp.diff(psi, x, 2) - (c1 - c2)) == 0
    xs = np.linspace(0, 1, 13)
    for name, c, q in (("ex1.f1", c1, 1), ("ex1.f2", c2, -1)):
        f = sp.lambdify((t, x), sp.diff(c, t) - sp.diff(sp.diff(c, x) + q * c * sp.diff(psi, x), x))
        for tt in (0.0, 0.3):
            np.testing.assert_allclose(CatalogFunction(name)(tt, xs), f(tt, xs), atol=1e-13)


# -- configs -------------------------------------------------------------------------

def test_builtin_literals():
    assert set(list_scenarios()) == {"example1", "example2", "example3", "example4"}
    ex1 = builtin_scenario("example1")
    system, _ = ex1.build()
    assert system.sigmas(0.0) == (0.0, pytest.approx(-1 / 60))
    ex4 = builtin_scenario("example4")
    system, state = ex4.build()
    assert system.masses(state.c)[0] == pytest.approx(1.5, abs=1e-12)
    ex3 = builtin_scenario("example3")
    assert ex3.charges == [1.0, -2.0] and ex3.rho0 == "ex3.rho0"
    for name in ("example2", "example3"):
        builtin_scenario(name).build()   # passes the compatibility check
    with pytest.raises(ConfigurationError):
        builtin_scenario("example9")


def test_incompatible_data_rejected():
    cfg = builtin_scenario("example4").replace(sigma_b=-1.0)
    with pytest.raises(ConfigurationError, match="compatibility"):
        cfg.build()


def test_config_validation():
    base = builtin_scenario("example2")
    bad = [dict(N=0), dict(k=4), dict(scheme="rk4"), dict(mu=-1.0), dict(species_bc="dirichlet"),
           dict(psi_bc="dirichlet"), dict(initial=["ex2.c1"]), dict(sources=["ex1.f1"]), dict(a=2.0)]
    for change in bad:
        with pytest.raises(ConfigurationError):
            base.replace(**change)
    base.replace(k=4, beta0=40.0, beta1=0.0)   # explicit flux unlocks other degrees
    with pytest.raises(ConfigurationError):
        ScenarioConfig.from_dict({"N": 4, "bogus": 1})


def test_default_mu_respects_stability():
    assert builtin_scenario("example2").replace(k=1).mu_value() == 0.05
    assert builtin_scenario("example2").replace(k=2).mu_value() == pytest.approx(0.02, rel=5e-3)
    assert builtin_scenario("example2").replace(k=2, mu=0.05).mu_value() == 0.05


def test_config_round_trip(tmp_path):
    cfg = builtin_scenario("example1").replace(N=12, mu=0.01)
    path = cfg.save(tmp_path / "c.json")
    back = ScenarioConfig.load(path)
    assert back == cfg
    assert json.loads(back.save(tmp_path / "d.json").read_text()) == json.loads(path.read_text())
    (tmp_path / "e.json").write_text(json.dumps({"scenario": "example3", "N": 7}))
    merged = ScenarioConfig.load(tmp_path / "e.json")
    assert merged.N == 7 and merged.rho0 == "ex3.rho0"
    (tmp_path / "f.json").write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        ScenarioConfig.load(tmp_path / "f.json")


def test_dirichlet_configuration_runs(tmp_path):
    cfg = ScenarioConfig(name="dir", N=8, k=1, charges=[1.0], initial=[1.0], species_bc="dirichlet",
                         c_left=[2.0], c_right=[1.0], psi_bc="dirichlet", psi_l=0.0, psi_r=0.0, T=0.01)
    result = run(cfg, tmp_path)
    assert result.status == EXIT_OK
    m = result.summary["masses_final"][0]
    assert 1.0 < m < 2.0


# -- runs ----------------------------------------------------------------------------

def test_run_writes_artifacts(tmp_path):
    cfg = builtin_scenario("example2").replace(N=8, k=1, T=0.01, snapshot_every=5, stride=10)
    result = run(cfg, tmp_path)
    assert result.status == EXIT_OK
    names = {p.name for p in tmp_path.iterdir()}
    assert {"trace.csv", "summary.json", "coeffs_initial.json", "coeffs_final.json",
            "snapshot_final_c1.csv", "snapshot_final_psi.csv", "snapshot_00000005_c2.csv"} <= names
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["final_time"] == 0.01 and summary["violations"] == []
    trace = read_trace_csv(tmp_path / "trace.csv")
    assert trace["t"][-1] == 0.01
    assert np.all(np.diff(trace["free_energy"]) <= 1e-10)


def test_run_is_deterministic(tmp_path):
    cfg = builtin_scenario("example3").replace(N=8, k=2, T=0.005)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    for name in ("trace.csv", "snapshot_final_c1.csv", "coeffs_final.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_strict_mode_flags_energy_growth(tmp_path):
    cfg = builtin_scenario("example2").replace(N=10, k=2, mu=0.05, T=0.05, strict=True)
    result = run(cfg, tmp_path)
    assert result.status in (EXIT_INVARIANT, EXIT_SOLVER)
    assert result.summary.get("violations") or "error" in result.summary


def test_solver_failure_status(tmp_path):
    cfg = builtin_scenario("example2").replace(N=8, k=1, mu=50.0, T=0.1)
    result = run(cfg, tmp_path)
    assert result.status == EXIT_SOLVER
    assert "failure_time" in result.summary and (tmp_path / "trace.csv").exists()


def test_default_out_dir(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
    assert default_out_dir("example2") == tmp_path / "example2"


# -- convergence reports ----------------------------------------------------------------

def test_observed_order_and_zero_guard():
    assert observed_order(4e-3, 1e-3, 0.2, 0.1) == pytest.approx(2.0)
    assert observed_order(0.0, 0.0, 0.2, 0.1) is None
    rep = build_report("(1,2,0)", ["c1"], [5, 10], [0.2, 0.1], [{"c1": 0.0}, {"c1": 0.0}])
    assert rep.orders("c1") == [None, None]
    assert "--" in rep.to_text()


def test_convergence_study_outputs(tmp_path):
    cfg = builtin_scenario("example1").replace(k=1, T=0.01)
    rep = convergence_study(cfg, [5, 10], tmp_path)
    assert rep.quantities == ["c1", "c2", "psi"]
    assert rep.orders("c1")[0] is None and rep.orders("c1")[1] > 1.5
    lines = (tmp_path / "convergence_k1.csv").read_text().splitlines()
    assert lines[0] == "N,h,c1_error,c1_order,c2_error,c2_order,psi_error,psi_order"
    assert lines[1].split(",")[3] == ""
    text = (tmp_path / "convergence_k1.txt").read_text()
    assert "(1,2,0)" in text
    with pytest.raises(ConfigurationError):
        convergence_study(builtin_scenario("example2"), [4, 8])


def test_parallel_study_matches_serial():
    cfg = builtin_scenario("example1").replace(k=1, T=0.002)
    a = convergence_study(cfg, [5, 10], workers=1)
    b = convergence_study(cfg, [5, 10], workers=2)
    np.testing.assert_array_equal(a.errors("psi"), b.errors("psi"))


def test_source_quadrature_bias():
    """With the 3-point volume rule the projected sources of Example 1 do not integrate to the exact
    mass decay, leaving a negative long-time mass; exact rules remove the bias."""
    src = CatalogFunction("ex1.f2")._fn
    (g2, h2), (g1, h1) = src.terms
    m = Mesh1D.uniform(0.0, 1.0, 20)
    limit = lambda Q: (1 / 60 + project(h1, m, 2, gauss_rule(Q)).total_mass()
                       + project(h2, m, 2, gauss_rule(Q)).total_mass() / 2)
    assert limit(3) < -1e-12
    assert abs(limit(6)) < 1e-15


# -- CLI -------------------------------------------------------------------------------

def test_cli_list(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert "example1" in out and "example4" in out


def test_cli_run_and_overrides(tmp_path, capsys):
    code = main(["run", "--scenario", "example4", "--N", "6", "--k", "1", "--T", "0.01", "--mu", "0.04",
                 "--scheme", "ssp-rk3", "--out-dir", str(tmp_path), "--strict"])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["N"] == 6 and summary["config"]["scheme"] == "ssp-rk3" and summary["mu"] == 0.04
    assert "status 0" in capsys.readouterr().out


def test_cli_config_file(tmp_path):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({"scenario": "example2", "N": 5, "k": 1, "T": 0.002}))
    assert main(["run", "--config", str(cfgfile), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    assert (tmp_path / "o" / "trace.csv").exists()


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--scenario", "example5", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--scenario", "example2", "--N", "0", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--scenario", "example2", "--k", "1", "--N", "6", "--mu", "50", "--T", "0.1",
                 "--out-dir", str(tmp_path)]) == EXIT_SOLVER
    assert "configuration error" in capsys.readouterr().err


def test_cli_converge(tmp_path, capsys):
    code = main(["converge", "--scenario", "example1", "--k", "1", "--T", "0.005", "--meshes", "5", "10",
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert "c1 error" in capsys.readouterr().out
    assert (tmp_path / "convergence_k1.csv").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pnpdg", "list-scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0 and "example2" in proc.stdout
