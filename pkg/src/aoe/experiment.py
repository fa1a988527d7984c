"""Seeded end-to-end experiments: config files, per-seed runs, persisted records.

Config files are INI (stdlib ``configparser``)::

    [experiment]
    name = aoe-default
    seeds = 0, 1, 2, 3, 4

    [dataset]
    num_classes = 4
    outlier_kind = distant_blob

    [model]
    hidden = 64, 64

    [training]
    method = aoe_joint          ; ce_only | oe | aoe_joint | aoe_alternating | fixed_T:4.5
    alpha = cosine              ; fixed:0.5 | cosine | exponential | linear

    [evaluation]
    score = msp                 ; msp | energy | energy:2.0

Every key is optional. Unknown sections or keys are rejected.

Layout written by :func:`run_experiment`::

    <out>/<config-hash>/run_summary.json
    <out>/<config-hash>/<seed>/epochs.csv
    <out>/<config-hash>/<seed>/summary.json
    <out>/<config-hash>/<seed>/model.json

All files are byte-identical across reruns of the same config and seed.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from aoe import model as mlp
from aoe import synthdata as sd
from aoe.detection import ScoreKind
from aoe.estimator import OutlierExposureClassifier, parse_alpha
from aoe.exceptions import InvalidArgumentError
from aoe.metrics import evaluate, oversoftening_mean_margin
from aoe.rng import SeededRng
from aoe.theory import genbound_constants

METHODS = ("ce_only", "oe", "aoe_joint", "aoe_alternating", "fixed_T")
EPOCH_COLUMNS = ("epoch", "ce_id", "alignA", "alignB", "total", "alpha", "T", "lr",
                 "fpr95_near", "auroc_near", "fpr95_far", "auroc_far", "id_acc")
# far from the data streams (seed, seed+1, seed+2) so no two roles share draws
SPLIT_SEED_OFFSET = 1_000_000
MODEL_SEED_OFFSET = 2_000_000


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    seeds: tuple = (0,)
    dataset: sd.DatasetSpec = field(default_factory=sd.DatasetSpec)
    hidden: tuple = (64, 64)
    method: str = "aoe_joint"
    fixed_T: float | None = None
    epochs: int = 100
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    alpha: str = "cosine"
    alpha_horizon: int = 100
    temp_init: float = 1.5
    eta_T: float = 0.01
    t_min: float = 1.0
    t_max: float = 10.0
    t_update_interval: int = 1
    stop_gradient_target: bool = True
    kl_direction: str = "uniform_first"
    standardize: bool = True
    score: str = "msp"
    tpr_target: float = 0.95

    def __post_init__(self):
        method, fixed = _split_method(self.method)
        object.__setattr__(self, "method", method)
        if fixed is not None:
            object.__setattr__(self, "fixed_T", fixed)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.seeds:
            raise InvalidArgumentError("seeds must be non-empty")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.method == "fixed_T":
            if self.fixed_T is None:
                raise InvalidArgumentError("fixed_T method needs a temperature, e.g. fixed_T:4.5")
            if not 1.0 <= self.fixed_T <= 10.0:
                raise InvalidArgumentError("fixed_T value must lie in [1, 10]")
        elif self.fixed_T is not None:
            raise InvalidArgumentError("fixed_T is only meaningful for method fixed_T")
        if self.kl_direction not in ("uniform_first", "target_first"):
            raise InvalidArgumentError(f"unknown kl_direction {self.kl_direction!r}")
        parse_alpha(self.alpha, self.alpha_horizon)
        ScoreKind.parse(self.score)

    @property
    def method_label(self) -> str:
        return f"fixed_T:{self.fixed_T!r}" if self.method == "fixed_T" else self.method

    def canonical(self) -> dict:
        """Everything that affects a single seed's results."""
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("name", "seeds")}
        ds = asdict(self.dataset)
        ds.pop("seed")
        d["dataset"] = ds
        d["hidden"] = list(self.hidden)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def estimator(self, seed: int) -> OutlierExposureClassifier:
        return OutlierExposureClassifier(
            method=self.method, hidden_layer_sizes=self.hidden, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay, alpha=self.alpha, alpha_horizon=self.alpha_horizon,
            temp_init=self.temp_init, eta_T=self.eta_T, t_min=self.t_min, t_max=self.t_max,
            fixed_T_value=self.fixed_T if self.fixed_T is not None else 4.5,
            kl_direction=self.kl_direction, stop_gradient_target=self.stop_gradient_target,
            t_update_interval=self.t_update_interval, standardize=self.standardize,
            score=self.score, random_state=seed + MODEL_SEED_OFFSET)


def _split_method(text):
    name, sep, arg = str(text).strip().partition(":")
    if name not in METHODS:
        raise InvalidArgumentError(f"unknown method {text!r}; expected one of {METHODS}")
    if sep and name != "fixed_T":
        raise InvalidArgumentError(f"method {name!r} takes no argument")
    if not sep:
        return name, None
    try:
        return name, float(arg)
    except ValueError:
        raise InvalidArgumentError(f"bad fixed_T value {arg!r}") from None


# ---------------------------------------------------------------- config files

_SECTIONS = {
    "experiment": {"name": str, "seeds": "ints"},
    "dataset": {"num_classes": int, "per_class": int, "class_radius": float,
                "class_sigma": float, "outlier_kind": str, "outlier_count": int},
    "model": {"hidden": "ints"},
    "training": {"method": str, "epochs": int, "batch_size": int, "lr": float,
                 "momentum": float, "weight_decay": float, "alpha": str, "alpha_horizon": int,
                 "temp_init": float, "eta_T": float, "t_min": float, "t_max": float,
                 "t_update_interval": int, "stop_gradient_target": bool,
                 "kl_direction": str, "standardize": bool},
    "evaluation": {"score": str, "tpr_target": float},
}


def _convert(parser, section, key, kind):
    if kind is bool:
        return parser.getboolean(section, key)
    raw = parser.get(section, key)
    if kind == "ints":
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    return kind(raw)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep eta_T / t_min case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgumentError(f"malformed config: {exc}") from None
    values = {}
    for section in parser.sections():
        allowed = _SECTIONS.get(section)
        if allowed is None:
            raise InvalidArgumentError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in allowed:
                raise InvalidArgumentError(f"unknown key {key!r} in [{section}]")
            try:
                values[(section, key)] = _convert(parser, section, key, allowed[key])
            except ValueError as exc:
                raise InvalidArgumentError(f"[{section}] {key}: {exc}") from None
    ds = {k: v for (s, k), v in values.items() if s == "dataset"}
    top = {k: v for (s, k), v in values.items() if s != "dataset"}
    if "hidden" in top and not top["hidden"]:
        raise InvalidArgumentError("hidden must list at least one layer width")
    return ExperimentConfig(dataset=sd.DatasetSpec(**ds), **top)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- running

@dataclass
class SeedData:
    train: sd.LabeledBatch
    test: sd.LabeledBatch
    outliers: sd.LabeledBatch
    near: sd.LabeledBatch
    far: sd.LabeledBatch


def build_data(spec: sd.DatasetSpec, seed: int) -> SeedData:
    spec = replace(spec, seed=seed)
    train, test = sd.train_test_split(sd.gen_id_gaussians(spec), SeededRng(seed + SPLIT_SEED_OFFSET))
    return SeedData(train, test, sd.gen_train_outliers(spec),
                    sd.gen_test_ood(spec, "near"), sd.gen_test_ood(spec, "far"))


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def run_seed(config: ExperimentConfig, seed: int, out_dir=None) -> dict:
    """Train and evaluate one seed; returns (and optionally persists) its summary."""
    data = build_data(config.dataset, seed)
    score = ScoreKind.parse(config.score)
    rows = []

    def on_epoch(clf, rec):
        z_id = clf.decision_function(data.test.features)
        near = evaluate(z_id, data.test.labels, clf.decision_function(data.near.features),
                        score, config.tpr_target)
        far = evaluate(z_id, data.test.labels, clf.decision_function(data.far.features),
                       score, config.tpr_target)
        rows.append({**rec, "fpr95_near": near.fpr95, "auroc_near": near.auroc,
                     "fpr95_far": far.fpr95, "auroc_far": far.auroc, "id_acc": near.id_acc})

    clf = config.estimator(seed)
    try:
        clf.fit(data.train.features, data.train.labels, data.outliers.features,
                epoch_callback=on_epoch)
    except Exception as exc:
        if out_dir is not None:
            _write(Path(out_dir) / "error.json",
                   _dumps({"seed": seed, "error_type": type(exc).__name__, "message": str(exc)}))
        raise

    z_id = clf.decision_function(data.test.features)
    z_out = clf.decision_function(data.outliers.features)
    near = evaluate(z_id, data.test.labels, clf.decision_function(data.near.features),
                    score, config.tpr_target)
    far = evaluate(z_id, data.test.labels, clf.decision_function(data.far.features),
                   score, config.tpr_target)
    gb = genbound_constants(z_out)
    summary = {
        "seed": seed,
        "method": config.method_label,
        "config_hash": config.config_hash(),
        "final_T": clf.temperature_.T,
        "near": near.to_dict(),
        "far": far.to_dict(),
        "train_outliers": {
            "oversoftening_mean_margin": oversoftening_mean_margin(z_out),
            "genbound": {"C1_prime": gb.C1_prime, "C2_prime": gb.C2_prime,
                         "T_star": gb.T_star, "g_at_T_star": gb.g_at_Tstar},
        },
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(EPOCH_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in EPOCH_COLUMNS])
        _write(out_dir / "epochs.csv", buf.getvalue())
        _write(out_dir / "summary.json", _dumps(summary))
        ckpt = mlp.params_to_dict(clf.params_)
        ckpt["temperature"] = clf.temperature_.T
        ckpt["input_mean"] = clf.mean_.tolist()
        ckpt["input_scale"] = clf.scale_.tolist()
        _write(out_dir / "model.json", _dumps(ckpt))
    summary["epochs"] = rows
    return summary


def flatten_summary(summary: dict) -> dict:
    """Scalar metrics of one seed, keyed as they appear in comparison tables."""
    flat = {"final_T": summary["final_T"],
            "train_oversoftening_mean_margin":
                summary["train_outliers"]["oversoftening_mean_margin"]}
    for split in ("near", "far"):
        for key in ("fpr95", "auroc", "separation_margin", "oversoftening_mean_margin"):
            flat[f"{split}_{key}"] = summary[split][key]
    flat["id_acc"] = summary["near"]["id_acc"]
    return flat


def aggregate(per_seed: list) -> dict:
    """Mean and population std (ddof=0) per metric; std is 0 for one seed."""
    if not per_seed:
        raise InvalidArgumentError("nothing to aggregate")
    keys = sorted(per_seed[0])
    out = {}
    for k in keys:
        v = np.array([row[k] for row in per_seed], dtype=np.float64)
        out[k] = {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}
    return out


def run_experiment(config: ExperimentConfig, out_root="runs") -> dict:
    """Run every seed of ``config`` and write the run directory."""
    run_dir = Path(out_root) / config.config_hash()
    flats, seeds = [], {}
    for seed in config.seeds:
        summary = run_seed(config, seed, run_dir / str(seed))
        flat = flatten_summary(summary)
        flats.append(flat)
        seeds[str(seed)] = flat
    result = {
        "name": config.name,
        "config_hash": config.config_hash(),
        "config": config.canonical(),
        "method": config.method_label,
        "seeds": list(config.seeds),
        "per_seed": seeds,
        "metrics": aggregate(flats),
    }
    _write(run_dir / "run_summary.json", _dumps(result))
    result["run_dir"] = str(run_dir)
    return result


def compare_methods(configs, out_path=None, runs_root="runs") -> list:
    """Run each config and tabulate (method, metric, mean, std, n) rows.

    All configs must share the dataset spec and seed list.
    """
    configs = [load_config(c) if isinstance(c, (str, Path)) else c for c in configs]
    if not configs:
        raise InvalidArgumentError("no configs to compare")
    ref = configs[0]
    for c in configs[1:]:
        if c.dataset != ref.dataset:
            raise InvalidArgumentError("configs use different dataset specs")
        if c.seeds != ref.seeds:
            raise InvalidArgumentError("configs use different seeds")
    rows = []
    for c in configs:
        summary = run_experiment(c, runs_root)
        for metric, agg in summary["metrics"].items():
            rows.append({"method": c.method_label, "metric": metric, **agg})
    if out_path is not None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "metric", "mean", "std", "n"])
        for r in rows:
            writer.writerow([r["method"], r["metric"], _fmt(r["mean"]), _fmt(r["std"]), r["n"]])
        _write(Path(out_path), buf.getvalue())
    return rows

