import csv
import json

import pytest

from spattack.cli import CSV_HEADER, main, read_clean_baseline
from spattack.config import (ConfigError, ExperimentConfig, build_federation_config,
                             load_dataset, parse_config, resolved_settings)


SMALL = {
    "dataset": {"source": "synthetic",
                "synthetic": {"n_users": 80, "n_items": 200, "interactions_per_user": 10,
                              "exponent": 1.4, "seed": 2}},
    "federation": {"epochs": 4},
}


def test_empty_config_is_defaults():
    cfg = parse_config({})
    assert cfg == ExperimentConfig()
    d = cfg.model_dump()
    assert d["model"] == {"dim": 32, "learning_rate": 0.01, "init_std": 0.01}
    assert d["federation"]["epochs"] == 200 and d["attack"]["start_epoch"] == 0
    assert d["attack"]["noise_std"] == 1.0 and d["attack"]["lie_scale"] == 0.1
    assert tuple(d["attack"]["fang_scale_range"]) == (3.0, 4.0)
    assert d["aggregator"]["clip_threshold"] == 0.5


@pytest.mark.parametrize("raw,path", [
    ({"attack": {"malicious_ratio": 1.2}}, "attack.malicious_ratio"),
    ({"attack": {"unknown": 1}}, "attack.unknown"),
    ({"federation": {"epochs": "many"}}, "federation.epochs"),
    ({"federation": {"epochs": 0}}, "federation.epochs"),
    ({"aggregator": {"kind": "bulyan"}}, "aggregator.kind"),
    ({"dataset": {"source": "path"}}, "dataset"),
])
def test_errors_name_key_path(raw, path):
    with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
        parse_config(raw)


def test_round_trip(tmp_path):
    raw = {"attack": {"kind": "lie", "malicious_ratio": 0.05, "lie_direction": -1},
           "aggregator": {"kind": "krum"}, **SMALL}
    cfg = parse_config(raw)
    again = parse_config(cfg.to_json())
    assert again == cfg
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert parse_config(p) == cfg


def test_build_resolves_counts_and_defaults():
    cfg = parse_config({**SMALL, "attack": {"kind": "spattack_od", "malicious_ratio": 0.05},
                        "aggregator": {"kind": "trimmed_mean"}})
    ds = load_dataset(cfg.dataset)
    fed = build_federation_config(cfg, ds)
    assert fed.attack.malicious_count == 4  # largest k with k / (80 + k) <= 0.05
    assert fed.aggregator.trim_count == 4
    assert resolved_settings(fed)["malicious_count"] == 4


def test_published_table_override():
    cfg = parse_config({"attack": {"kind": "spattack_ld", "malicious_ratio": 0.10,
                                   "count_table": "ml100k"}})

    class Fake:
        n_users = 943
    fed = build_federation_config(cfg, Fake())
    assert fed.attack.malicious_count == 105 and fed.attack.count_overridden


def test_explicit_count_must_respect_ratio():
    cfg = parse_config({**SMALL, "attack": {"kind": "gaussian", "malicious_ratio": 0.01,
                                            "malicious_count": 10}})
    with pytest.raises(ConfigError, match="attack"):
        build_federation_config(cfg, load_dataset(cfg.dataset))


def run_cli(tmp_path, cfg, *extra, label="run"):
    p = tmp_path / f"{label}.cfg.json"
    p.write_text(json.dumps(cfg))
    code = main(["run", "--config", str(p), "--out", str(tmp_path), "--label", label, *extra])
    return code, tmp_path / f"{label}.csv", tmp_path / f"{label}.json"


def test_cmd_run_outputs(tmp_path):
    code, csv_path, json_path = run_cli(tmp_path, SMALL, "--plot-data")
    assert code == 0
    rows = list(csv.reader(csv_path.open()))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 1 + 4
    summary = json.loads(json_path.read_text())
    assert summary["config"]["federation"]["epochs"] == 4
    assert summary["config"]["model"]["dim"] == 32  # defaults echoed
    assert summary["seed"] == 0 and "resolved" in summary
    plot = list(csv.reader((tmp_path / "run.plot.csv").open()))
    assert plot[0] == ["label", "epoch", "metric", "value"] and len(plot) == 1 + 4 * 4


def test_cmd_run_deterministic_across_workers(tmp_path):
    cfg = {**SMALL, "attack": {"kind": "spattack_ls", "malicious_ratio": 0.05},
           "aggregator": {"kind": "median"}}
    _, a, ja = run_cli(tmp_path, cfg, "--workers", "1", label="a")
    _, b, jb = run_cli(tmp_path, cfg, "--workers", "4", label="b")
    assert a.read_bytes() == b.read_bytes()
    sa, sb = json.loads(ja.read_text()), json.loads(jb.read_text())
    sa["config"]["output"] = sb["config"]["output"] = None
    assert sa == sb


def test_cmd_run_drop_against_baseline(tmp_path):
    run_cli(tmp_path, SMALL, label="clean")
    attacked = {**SMALL, "attack": {"kind": "spattack_od", "malicious_ratio": 0.1}}
    code, _, js = run_cli(tmp_path, attacked, "--clean-baseline", str(tmp_path / "clean.json"),
                          label="od")
    summary = json.loads(js.read_text())
    clean = read_clean_baseline(tmp_path / "clean.csv")
    assert summary["clean_baseline"] == clean
    for m, v in summary["drop"].items():
        assert v == pytest.approx((summary["final"][m] - clean[m]) / clean[m])
    assert summary["attack_audit"]["attacked_rounds"] == 4
    assert summary["attack_audit"]["malicious_clients"] == 8


def test_divergence_exits_zero(tmp_path):
    cfg = {**SMALL, "attack": {"kind": "spattack_ld", "malicious_ratio": 0.1, "noise_std": 1e12}}
    code, csv_path, js = run_cli(tmp_path, cfg)
    assert code == 0 and json.loads(js.read_text())["diverged"]
    assert csv_path.read_text().splitlines()[-1].endswith(",1")


def test_io_failure_nonzero(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({**SMALL, "output": {"directory": str(blocker / "sub")}}))
    assert main(["run", "--config", str(p)]) != 0
    assert main(["run", "--config", str(tmp_path / "missing.json")]) != 0
    assert "error" in capsys.readouterr().err


def test_analyze_and_stats(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL))
    assert main(["analyze", "--config", str(p), "--counts", "1,5,20,80"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# exponent=")
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["alpha", "n_malicious", "predicted", "empirical"]
    assert all(len(r) == 4 for r in rows)
    emp = [float(r[3]) for r in rows[1:]]
    pred = [float(r[2]) for r in rows[1:]]
    assert emp == sorted(emp) and pred == sorted(pred)
    assert main(["stats", "--config", str(p)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["n_users"] == 80 and stats["n_items"] == 200


def test_analyze_fit_error(tmp_path, capsys):
    data = tmp_path / "u.data"
    data.write_text("".join(f"{u} {i} 1 {i}\n" for u in range(1, 4) for i in (1, 2)))
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dataset": {"source": "path", "path": str(data)}}))
    assert main(["analyze", "--config", str(p)]) == 2
    assert "fitting degrees" in capsys.readouterr().err
