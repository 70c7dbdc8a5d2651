import json
import math
from pathlib import Path

import numpy as np
import pytest

from zoheavy import ConfigurationError, DomainError
from zoheavy.bench import cli
from zoheavy.bench.config import config_from_dict, dump_config, load_config, parse_config
from zoheavy.bench.runner import CSV_HEADER, SCHEMA_VERSION, read_csv, report, resolve_threads, run_experiment
from zoheavy.bench.stats import fit_loglog, fit_rate, nearest_rank, quantile_report

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """
name = "t"
seed = 4
trials = 3
checkpoints = "log"

[problem]
kind = "sharp"
dimension = 3

[problem.set]
kind = "l2ball"
radius = 1.0

[noise]
kind = "pareto"
alpha = 2.5

[setup]
kind = "ball"

[algorithm]
name = "rsmd"
regime = "robust"
kappa = 1.0
T = 200
"""


def base(**algo):
    cfg = parse_config(BASE)
    for k, v in algo.items():
        setattr(cfg.algorithm, k, v)
    return cfg


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path, tmp_path):
    cfg = load_config(path)
    dump_config(cfg, tmp_path / "c.toml")
    again = load_config(tmp_path / "c.toml")
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_hash_ignores_output_and_threads():
    cfg = base()
    assert cfg.replace(out="elsewhere", threads=8).config_hash() == cfg.config_hash()
    assert cfg.replace(seed=5).config_hash() != cfg.config_hash()


def _mutate(text, old, new):
    assert old in text
    return text.replace(old, new)


@pytest.mark.parametrize("old,new,match", [
    ('kind = "ball"', 'kind = "ball"\ncolour = 1', "setup: unknown key"),
    ('alpha = 2.5', 'alpha = 1.2', "noise.alpha"),
    ('kind = "ball"', 'kind = "entropy"', "entropy.*l2ball"),
    ('kappa = 1.0', 'kappa = 0.5', "uniformly convex"),
    ('name = "rsmd"\nregime = "robust"', 'name = "clip-smd"\nregime = "clip-expectation"', "kappa = 1"),
    ('regime = "robust"', 'regime = "clip-highprob"', "robust regime"),
    ('T = 200', 'T = -1', "algorithm.T"),
    ('trials = 3', 'trials = 0', "trials"),
    ('kind = "sharp"', 'kind = "wobbly"', "problem"),
])
def test_invalid_configs_rejected_with_path(old, new, match):
    with pytest.raises(ConfigurationError, match=match):
        parse_config(_mutate(BASE, old, new))


def test_zero_iterations_single_row(tmp_path):
    cfg = base(T=0).replace(trials=1)
    res = run_experiment(cfg, tmp_path)
    (rec,) = res.records["T=0"]
    assert list(rec.iters) == [0]
    # default minimiser sits at half the radius along the diagonal
    assert rec.final_subopt == pytest.approx(0.5, rel=1e-12)
    data = read_csv(res.paths[0])
    assert len(data["iter"]) == 1 and data["queries"][0] == 0


def test_equal_seeds_give_identical_trajectories(tmp_path):
    a = run_experiment(base(), tmp_path / "a")
    b = run_experiment(base(), tmp_path / "b")
    for ra, rb in zip(a.records["T=200"], b.records["T=200"]):
        assert np.array_equal(ra.subopt, rb.subopt)
    da, db = read_csv(a.paths[0]), read_csv(b.paths[0])
    for col in ("config_hash", "trial", "iter", "queries"):
        assert np.array_equal(da[col], db[col])
    assert np.array_equal(da["subopt"], db["subopt"])


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    cfg = base(T=50).replace(trials=150)
    one = run_experiment(cfg, tmp_path / "one", threads=1)
    monkeypatch.setenv("ZO_THREADS", "3")
    assert resolve_threads(1) == 3
    three = run_experiment(cfg, tmp_path / "three", threads=1)
    for a, b in zip(one.records["T=50"], three.records["T=50"]):
        assert np.array_equal(a.subopt, b.subopt)
    assert (tmp_path / "one" / "t-T50.csv").read_text().count("\n") == \
        (tmp_path / "three" / "t-T50.csv").read_text().count("\n")


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("ZO_THREADS", "zero")
    with pytest.raises(ConfigurationError):
        resolve_threads(2)


def test_csv_and_summary_schema(tmp_path):
    cfg = base().replace(trials=50)
    res = run_experiment(cfg, tmp_path)
    csv_path, summary_path = res.paths
    header = csv_path.read_text().splitlines()[0]
    assert tuple(header.split(",")) == CSV_HEADER
    data = read_csv(csv_path)
    assert set(data["trial"]) == set(range(50))
    assert all(h == cfg.config_hash() for h in data["config_hash"])
    # 17 significant digits round-trip exactly
    recs = res.records["T=200"]
    finals = data["subopt"][data["iter"] == 200]
    assert np.array_equal(finals, [r.final_subopt for r in recs])
    summ = json.loads(summary_path.read_text())
    assert summ["schema_version"] == SCHEMA_VERSION
    assert summ["config_hash"] == cfg.config_hash()
    row = summ["rows"][0]
    assert row["queries"] == 2 * 200 * 50
    assert row["median"] <= row["q90"] <= row["q99"]
    assert config_from_dict(summ["config"]) == cfg


def test_small_trial_count_leaves_tail_quantiles_empty(tmp_path):
    res = run_experiment(base(), tmp_path)
    assert res.rows[0].q90 is None and res.rows[0].q99 is None


def test_report_recomputes_statistics(tmp_path):
    cfg = base(T=[10, 40, 160, 640, 2560]).replace(trials=4, checkpoints="final")
    res = run_experiment(cfg, tmp_path)
    assert res.fit is not None and len(res.rows) == 5
    rows = report(tmp_path)
    assert len(rows) == 5
    by_T = {r["T"]: r for r in rows}
    for row in res.rows:
        assert by_T[row.T]["median"] == row.median
        assert by_T[row.T]["fit"]["slope"] == res.fit.slope
    with pytest.raises(DomainError):
        report(tmp_path / "missing")


def test_fit_rate_exact_and_jittered():
    T = np.array([100, 316, 1000, 3162, 10000])
    exact = fit_loglog(T, 3 * T**-0.5)
    assert abs(exact.slope + 0.5) <= 1e-12
    assert exact.intercept == pytest.approx(math.log(3))
    rng = np.random.default_rng(0)
    jit = fit_loglog(T, 3 * T**-0.5 * (1 + 0.1 * rng.uniform(-1, 1, len(T))))
    assert abs(jit.slope + 0.5) <= 0.1
    with pytest.raises(DomainError, match="at least 4"):
        fit_loglog(T[:3], T[:3] ** -0.5)
    with pytest.raises(DomainError, match="1 excluded"):
        fit_loglog(T[:4], np.array([1.0, 0.5, 0.0, 0.2]))


def test_fit_rate_needs_two_decades():
    class Row:
        def __init__(self, T, v):
            self.T, self.median, self.mean = T, v, v
    rows = [Row(t, t**-0.5) for t in (100, 200, 400, 800)]
    with pytest.raises(DomainError, match="decades"):
        fit_rate(rows)
    rows = [Row(t, t**-0.5) for t in (100, 1000, 5000, 10000)]
    assert fit_rate(rows).slope == pytest.approx(-0.5)


def test_quantile_examples():
    assert nearest_rank(range(1, 101), 0.9) == 90
    assert nearest_rank(range(1, 101), 0.99) == 99
    assert nearest_rank(range(1, 101), 0.5) == 50
    q = quantile_report(np.full((60, 3), 0.25), [0.5, 0.9, 0.99])
    assert all(np.all(v == 0.25) for v in q.values())
    with pytest.raises(DomainError, match="50"):
        quantile_report(np.ones((49, 2)), [0.9])
    assert quantile_report(np.arange(10.0)[:, None], [0.5])[0.5][0] == 4.0


def test_summary_quantiles_monotone(tmp_path):
    text = _mutate(BASE, "alpha = 2.5", "alpha = 1.6")
    text = _mutate(text, "kappa = 1.0", "kappa = 0.5")
    text = _mutate(text, 'kind = "ball"', 'kind = "lp"\np = 2.0')
    cfg = parse_config(text).replace(trials=60)
    res = run_experiment(cfg, tmp_path)
    row = res.rows[0]
    assert row.median <= row.q90 <= row.q99
    assert row.queries == 2 * 200 * 60


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.toml"
    good.write_text(BASE)
    assert cli.main(["validate", str(good)]) == cli.EXIT_OK
    bad = tmp_path / "bad.toml"
    bad.write_text(_mutate(BASE, "alpha = 2.5", "alpha = 1.1"))
    assert cli.main(["validate", str(bad)]) == cli.EXIT_INVALID
    assert "noise.alpha" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "nope.toml")]) == cli.EXIT_INVALID
    assert cli.main(["frobnicate"]) == cli.EXIT_INVALID
    out = tmp_path / "out"
    assert cli.main(["run", str(good), "--out", str(out), "--trials", "2", "--checkpoints", "10,100"]) == cli.EXIT_OK
    data = read_csv(out / "t-T200.csv")
    assert sorted(set(data["iter"])) == [10, 100, 200]
    assert cli.main(["sweep", str(good)]) == cli.EXIT_INVALID
    assert cli.main(["report", str(out)]) == cli.EXIT_OK
    assert cli.main(["report", str(tmp_path / "missing")]) == cli.EXIT_RUNTIME
    corrupt = tmp_path / "corrupt"
    corrupt.mkdir()
    (corrupt / "x.csv").write_text("a,b\n1,2\n")
    assert cli.main(["report", str(corrupt)]) == cli.EXIT_RUNTIME


def test_cli_sweep_over_delta(tmp_path):
    text = BASE + '\n[sweep]\nparameter = "Delta"\nvalues = [0.0, 0.001, 0.01]\n'
    path = tmp_path / "sweep.toml"
    path.write_text(text)
    out = tmp_path / "sw"
    assert cli.main(["sweep", str(path), "--out", str(out), "--trials", "2"]) == cli.EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["t-Delta0.0.csv", "t-Delta0.001.csv", "t-Delta0.01.csv", "t-summary.json"]
