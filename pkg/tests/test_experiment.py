import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from aoe import experiment as ex
from aoe import synthdata as sd
from aoe.cli import main
from aoe.exceptions import InvalidArgumentError

SMALL = """
[experiment]
name = small
seeds = 0, 1

[dataset]
per_class = 40
outlier_count = 160

[model]
hidden = 16

[training]
method = {method}
epochs = 3
batch_size = 32
alpha = {alpha}
"""

ROOT = Path(__file__).resolve().parents[1]


def _cfg(method="aoe_joint", alpha="cosine"):
    return ex.parse_config(SMALL.format(method=method, alpha=alpha))


def test_parse_full_config():
    c = ex.parse_config(SMALL.format(method="fixed_T:3.5", alpha="fixed:0.25") +
                        "eta_T = 0.05\nstop_gradient_target = no\n[evaluation]\nscore = energy:2\n")
    assert c.seeds == (0, 1) and c.hidden == (16,)
    assert c.method == "fixed_T" and c.fixed_T == 3.5 and c.method_label == "fixed_T:3.5"
    assert c.dataset == sd.DatasetSpec(per_class=40, outlier_count=160)
    assert c.eta_T == 0.05 and c.stop_gradient_target is False and c.score == "energy:2"


def test_shipped_configs_parse():
    names = sorted(p.stem for p in (ROOT / "configs").glob("*.ini"))
    assert {"oe", "aoe_joint", "aoe_alternating", "fixed_T_4.5"} <= set(names)
    for p in (ROOT / "configs").glob("*.ini"):
        c = ex.load_config(p)
        assert c.seeds == (0, 1, 2, 3, 4) and c.dataset == sd.DatasetSpec()


@pytest.mark.parametrize("text", [
    "[training]\nmethod = mixup\n",
    "[training]\nmethod = fixed_T:12\n",
    "[training]\nmethod = fixed_T\n",
    "[training]\nmethod = oe:3\n",
    "[training]\nepochs = 0\n",
    "[training]\nepochs = many\n",
    "[training]\nalpha = triangle\n",
    "[training]\nkl_direction = sideways\n",
    "[experiment]\nseeds =\n",
    "[model]\nhidden =\n",
    "[training]\nlearning_rate = 0.1\n",
    "[optimizer]\nlr = 0.1\n",
    "[dataset]\nnum_classes = 1\n",
    "[evaluation]\nscore = odin\n",
    "not an ini file",
])
def test_bad_configs(text):
    with pytest.raises(InvalidArgumentError):
        ex.parse_config(text)


def test_config_hash():
    c = _cfg()
    assert c.config_hash() == _cfg().config_hash()
    assert replace(c, seeds=(9,), name="x").config_hash() == c.config_hash()
    assert replace(c, lr=0.05).config_hash() != c.config_hash()
    assert _cfg("oe").config_hash() != c.config_hash()


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_experiment_layout_and_records(tmp_path):
    c = _cfg()
    res = ex.run_experiment(c, tmp_path)
    run = tmp_path / c.config_hash()
    assert Path(res["run_dir"]) == run
    for seed in (0, 1):
        d = run / str(seed)
        header = (d / "epochs.csv").read_text().splitlines()[0]
        assert header == ",".join(ex.EPOCH_COLUMNS)
        rows = _read_csv(d / "epochs.csv")
        assert [int(r["epoch"]) for r in rows] == [0, 1, 2]
        for r in rows:
            assert 1.0 <= float(r["T"]) <= 10.0
            ident = float(r["ce_id"]) + float(r["alpha"]) * (float(r["alignA"]) + float(r["alignB"]))
            # per-epoch columns are batch means, so the identity holds on average
            assert float(r["total"]) == pytest.approx(ident, abs=1e-12)
            for k in ("fpr95_near", "auroc_near", "fpr95_far", "auroc_far", "id_acc"):
                assert 0.0 <= float(r[k]) <= 1.0
        summary = json.loads((d / "summary.json").read_text())
        assert summary["seed"] == seed and summary["method"] == "aoe_joint"
        assert summary["final_T"] == pytest.approx(float(rows[-1]["T"]))
        for split in ("near", "far"):
            assert set(summary[split]) >= {"fpr95", "auroc", "id_acc", "n_id", "n_ood"}
        assert summary["train_outliers"]["genbound"]["C2_prime"] >= 0
        assert json.loads((d / "model.json").read_text())["format"] == "aoe-mlp/1"


def test_run_summary_matches_per_seed_files(tmp_path):
    c = _cfg("oe")
    ex.run_experiment(c, tmp_path)
    run = tmp_path / c.config_hash()
    agg = json.loads((run / "run_summary.json").read_text())
    flats = [ex.flatten_summary(json.loads((run / s / "summary.json").read_text()))
             for s in ("0", "1")]
    for key, stats in agg["metrics"].items():
        vals = np.array([f[key] for f in flats])
        assert stats["mean"] == vals.mean() and stats["std"] == vals.std() and stats["n"] == 2
    single = ex.run_experiment(replace(c, seeds=(0,)), tmp_path / "one")
    assert all(m["std"] == 0.0 for m in single["metrics"].values())


def test_outputs_byte_identical_across_reruns(tmp_path):
    c = replace(_cfg(), seeds=(3,))
    ex.run_experiment(c, tmp_path / "a")
    ex.run_experiment(c, tmp_path / "b")
    for rel in ("3/epochs.csv", "3/summary.json", "3/model.json", "run_summary.json"):
        a = (tmp_path / "a" / c.config_hash() / rel).read_bytes()
        b = (tmp_path / "b" / c.config_hash() / rel).read_bytes()
        assert a == b


def test_ce_only_matches_oe_with_zero_alpha(tmp_path):
    a = replace(_cfg("ce_only"), seeds=(0,))
    b = replace(_cfg("oe", "fixed:0"), seeds=(0,))
    ex.run_experiment(a, tmp_path)
    ex.run_experiment(b, tmp_path)
    ea = (tmp_path / a.config_hash() / "0" / "epochs.csv").read_text()
    eb = (tmp_path / b.config_hash() / "0" / "epochs.csv").read_text()
    assert ea == eb


def test_failed_run_writes_error_record(tmp_path, monkeypatch):
    def explode(self, *a, **k):
        raise InvalidArgumentError("boom")

    monkeypatch.setattr(ex.OutlierExposureClassifier, "fit", explode)
    c = replace(_cfg("oe"), seeds=(0,))
    with pytest.raises(InvalidArgumentError):
        ex.run_experiment(c, tmp_path)
    err = json.loads((tmp_path / c.config_hash() / "0" / "error.json").read_text())
    assert err["seed"] == 0 and err["error_type"] == "InvalidArgumentError"


def test_compare_methods(tmp_path):
    oe, aoe = _cfg("oe"), _cfg("aoe_joint")
    out = tmp_path / "cmp.csv"
    rows = ex.compare_methods([oe, aoe], out, tmp_path / "runs")
    with open(out, newline="") as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == ["method", "metric", "mean", "std", "n"]
    assert len(table) == len(rows)
    assert {r["method"] for r in table} == {"oe", "aoe_joint"}
    assert "train_oversoftening_mean_margin" in {r["metric"] for r in table}
    solo = ex.compare_methods([oe], None, tmp_path / "runs")
    summary = json.loads((tmp_path / "runs" / oe.config_hash() / "run_summary.json").read_text())
    assert {r["metric"]: r["mean"] for r in solo} == {
        k: v["mean"] for k, v in summary["metrics"].items()}


def test_compare_rejects_mismatches(tmp_path):
    with pytest.raises(InvalidArgumentError):
        ex.compare_methods([])
    c = _cfg()
    with pytest.raises(InvalidArgumentError):
        ex.compare_methods([c, replace(c, dataset=replace(c.dataset, class_sigma=1.0))])
    with pytest.raises(InvalidArgumentError):
        ex.compare_methods([c, replace(c, seeds=(0,))])


def test_cli_run_and_compare(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL.format(method="aoe_alternating", alpha="linear"))
    assert main(["run", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "r")]) == 0
    c = ex.load_config(cfg)
    assert (tmp_path / "r" / c.config_hash() / "4" / "epochs.csv").exists()
    assert not (tmp_path / "r" / c.config_hash() / "0").exists()
    assert "near_fpr95" in capsys.readouterr().out
    cfg2 = tmp_path / "d.ini"
    cfg2.write_text(SMALL.format(method="oe", alpha="linear"))
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--configs", str(cfg), str(cfg2), "--out", str(out),
                 "--runs", str(tmp_path / "r")]) == 0
    assert out.read_text().startswith("method,metric,mean,std,n\n")


def test_cli_theory(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["theory", "--trials", "50", "--seed", "3", "--out", str(a)]) == 0
    assert main(["theory", "--trials", "50", "--seed", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["all_passed"] is True
    assert "PASS" in capsys.readouterr().out
    assert main(["theory", "--trials", "0"]) == 2
    assert "trials must be >= 1" in capsys.readouterr().err


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[training]\nmethod = mixup\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "InvalidArgumentError" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["dance"])
