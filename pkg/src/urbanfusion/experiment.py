"""Config-driven experiment pipeline.

Stages: ``load`` -> ``build-graph`` -> ``prepare`` -> ``train`` -> ``evaluate``
-> ``export``. A run owns its output directory; a failing stage raises
:class:`StageError` after writing a manifest of the stages that completed.

Config keys (YAML, every key optional except the data paths)::

    data:
      tracts: tracts.geojson         # tract polygons with population
      features: features.csv         # 2D feature table (tract_id + columns)
      categories: null               # optional JSON {feature: category}
      observations: null             # prebuilt T x N count CSV, or
      events: events.csv             # raw events rasterized over [start, end)
      start: null
      end: null
      weather: null                  # hourly weather CSV (needed by 3d2d1d)
      interval: 1                    # hours per step
    model: stgcn                     # ha | rf | stgcn | stzinb
    variant: 3d                      # 3d | 3d2d | 3d2d1d (ignored by ha/rf)
    seed: 0
    output: runs/experiment
    graph: {sigma: 10.0, eps: 0.3, groups: [demography, land, poi], row_normalize: false}
    split: {ratios: [0.7, 0.2, 0.1], order: train-val-test}
    stgcn: {...}                     # STGCNConfig fields
    stzinb: {...}                    # STZINBConfig fields (attention defaults on for 3d2d1d)
    rf: {lags: 12, n_estimators: 100}
    evaluation: {quantiles: [0.1, 0.9], f1_average: micro, downtown_size: 5}
"""

import copy
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import torch
import yaml

from ._io import read_json, write_json, write_manifest
from .baselines import ha_fit_predict, rf_fit_predict
from .data.events import EventError, ObservationCube, rasterize_events
from .data.features import FeatureError, impute_missing, read_features
from .data.split import SplitError, ZScore, chronological_split
from .data.tracts import TractError, ingest_tracts, write_tracts
from .data.weather import WeatherError, WeatherSeries, ingest_weather
from .graph import GraphError, build_graph
from .metrics import MetricsReport, downtown_tracts, evaluate
from .models.stgcn import STGCN, STGCNConfig, huber_loss
from .models.stzinb import STZINB, STZINBConfig
from .models.training import History, fit, make_windows, seed_everything
from .models.zinb import ZINBParams, zinb_nll

logger = logging.getLogger(__name__)

MODELS = ("ha", "rf", "stgcn", "stzinb")
VARIANTS = ("3d", "3d2d", "3d2d1d")
STAGES = ("load", "build-graph", "prepare", "train", "evaluate", "export")
REPORT_COLUMNS = (
    ("HA", "ha", None), ("RF", "rf", None),
    ("STGCN 3d", "stgcn", "3d"), ("STGCN 3d2d", "stgcn", "3d2d"), ("STGCN 3d2d1d", "stgcn", "3d2d1d"),
    ("STZINB 3d", "stzinb", "3d"), ("STZINB 3d2d", "stzinb", "3d2d"), ("STZINB 3d2d1d", "stzinb", "3d2d1d"),
)
REPORT_ROWS = (
    ("MAE (tract)", "mae_tract"), ("MAE (downtown)", "mae_downtown"), ("MPIW", "mpiw"),
    ("KL-Div.", "kl_div"), ("PICP", "picp"), ("True-zero rate", "true_zero_rate"), ("F1", "f1"),
)

DEFAULTS = {
    "data": {
        "tracts": None, "features": None, "categories": None, "observations": None, "events": None,
        "start": None, "end": None, "weather": None, "interval": 1,
    },
    "model": "stgcn",
    "variant": "3d",
    "seed": 0,
    "output": "runs/experiment",
    "graph": {"sigma": 10.0, "eps": 0.3, "groups": ["demography", "land", "poi"], "row_normalize": False},
    "split": {"ratios": [0.7, 0.2, 0.1], "order": "train-val-test"},
    "stgcn": STGCNConfig().as_dict(),
    "stzinb": {**STZINBConfig().as_dict(), "attention": None},
    "rf": {"lags": 12, "n_estimators": 100},
    "evaluation": {"quantiles": [0.1, 0.9], "f1_average": "micro", "downtown_size": 5},
}
PATH_KEYS = ("tracts", "features", "categories", "observations", "events", "weather")

DATA_ERRORS = (TractError, FeatureError, EventError, WeatherError, SplitError, GraphError, FileNotFoundError)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``completed`` lists the stages that finished."""

    def __init__(self, stage: str, completed: list, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.completed = list(completed)
        self.cause = cause


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where + k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    data: dict
    model: str
    variant: Optional[str]
    seed: int
    output: Path
    graph: dict
    split: dict
    stgcn: dict
    stzinb: dict
    rf: dict
    evaluation: dict
    source: Optional[Path] = field(default=None, compare=False)

    @classmethod
    def from_dict(cls, raw: Optional[dict] = None, base_dir=None, require_data: bool = True) -> "ExperimentConfig":
        merged = _merge(DEFAULTS, raw or {})
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        data = merged["data"]
        for k in PATH_KEYS:
            if data[k] is not None:
                p = Path(data[k])
                data[k] = p if p.is_absolute() else base / p
        out = Path(merged["output"])
        merged["output"] = out if out.is_absolute() else base / out
        cfg = cls(**merged)
        cfg.validate(require_data)
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = cls.from_dict(raw, path.parent)
        cfg.source = path
        return cfg

    def validate(self, require_data: bool = True) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.model in ("ha", "rf"):
            self.variant = None
        elif self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        d = self.data
        q = self.evaluation["quantiles"]
        if len(q) != 2 or not 0 < q[0] < q[1] < 1:
            raise ConfigError("evaluation.quantiles must be two increasing levels in (0, 1)")
        try:
            self.stgcn_config()
            self.stzinb_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model config: {exc}") from exc
        if not require_data:
            return
        for k in ("tracts", "features"):
            if d[k] is None:
                raise ConfigError(f"data.{k} is required")
        if (d["observations"] is None) == (d["events"] is None):
            raise ConfigError("give exactly one of data.observations and data.events")
        if d["events"] is not None and (d["start"] is None or d["end"] is None):
            raise ConfigError("data.events needs data.start and data.end")
        if not isinstance(d["interval"], int) or d["interval"] <= 0:
            raise ConfigError("data.interval must be a positive integer number of hours")
        if self.variant == "3d2d1d" and d["weather"] is None:
            raise ConfigError("variant 3d2d1d needs data.weather")
        if self.variant == "3d2d1d" and not Path(d["weather"]).exists():
            raise ConfigError(f"weather file {d['weather']} does not exist")

    def stgcn_config(self) -> STGCNConfig:
        return STGCNConfig(**{**self.stgcn, "seed": self.seed})

    def stzinb_config(self) -> STZINBConfig:
        opts = dict(self.stzinb)
        if opts.get("attention") is None:
            opts["attention"] = self.variant == "3d2d1d"
        return STZINBConfig(**{**opts, "seed": self.seed})

    @property
    def horizon(self) -> int:
        if self.model == "stzinb":
            return self.stzinb_config().input_horizon
        if self.model == "rf":
            return max(self.rf["lags"], self.stgcn["input_horizon"])
        return self.stgcn["input_horizon"]

    @property
    def uses_weather(self) -> bool:
        return self.variant == "3d2d1d"

    @property
    def label(self) -> str:
        return self.model.upper() if self.variant is None else f"{self.model.upper()} {self.variant}"

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "source"}
        out["data"] = {k: (str(v) if isinstance(v, Path) else v) for k, v in self.data.items()}
        out["output"] = str(self.output)
        return copy.deepcopy(out)


@dataclass
class Inputs:
    tracts: list
    features: object
    cube: ObservationCube
    weather: Optional[WeatherSeries] = None
    dropped: dict = field(default_factory=dict)


@dataclass
class RunResult:
    output: Path
    report: MetricsReport
    history: Optional[History] = None
    steps: Optional[np.ndarray] = None
    predictions: Optional[np.ndarray] = None
    distribution: Optional[ZINBParams] = None


def load_inputs(cfg: ExperimentConfig) -> Inputs:
    d = cfg.data
    tracts = ingest_tracts(d["tracts"])
    features, imputed = impute_missing(read_features(d["features"], d["categories"]))
    if imputed:
        logger.info("imputed %d feature columns", len(imputed))
    dropped = {}
    if d["observations"] is not None:
        cube = ObservationCube.from_csv(d["observations"], d["interval"])
    else:
        cube, report = rasterize_events(d["events"], tracts, d["interval"], d["start"], d["end"])
        dropped = report.as_dict()
    weather = None
    if d["weather"] is not None:
        weather = ingest_weather(d["weather"], cube)
    return Inputs(tracts, features, cube, weather, dropped)


def _align(inputs: Inputs) -> Inputs:
    ids = [t.tract_id for t in inputs.tracts]
    if sorted(ids) != sorted(inputs.cube.tract_ids):
        raise EventError("observation tracts do not match the tract geometry file")
    if ids != inputs.cube.tract_ids:
        pos = {t: i for i, t in enumerate(inputs.cube.tract_ids)}
        cols = [pos[t] for t in ids]
        c = inputs.cube
        inputs.cube = ObservationCube(c.time_index, ids, c.counts[:, cols], c.interval)
    if sorted(inputs.features.tract_ids) != sorted(ids):
        raise FeatureError("feature table tracts do not match the tract geometry file")
    inputs.features = inputs.features.reorder(ids)
    if inputs.weather is not None:
        inputs.weather.check_aligned(inputs.cube)
    return inputs


# ------------------------------------------------------------------ training

def _stgcn_loss(delta):
    def loss(model, x, w, y):
        return huber_loss(y, model(x, w), delta)
    return loss


def _stzinb_loss(model, x, w, y):
    return zinb_nll(y, *model(x, w))


def _checkpoint(path, model, cfg_dict, history: History, seed: int) -> None:
    state = model.state_dict()
    torch.save({
        "config": cfg_dict,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "seed": seed,
        "epoch": history.best_epoch,
        "epochs_run": len(history.val_loss),
        "state_dict": state,
        "optimizer": history.optimizer_state,
    }, path)


@dataclass
class Prepared:
    split: object
    inputs_z: np.ndarray
    weather_z: Optional[np.ndarray]
    weather_norm: Optional[ZScore]
    adjacency: Optional[np.ndarray]
    adjacency_kind: Optional[str]


def prepare(cfg: ExperimentConfig, inputs: Inputs, graph) -> Prepared:
    split = chronological_split(inputs.cube, tuple(cfg.split["ratios"]), cfg.horizon, cfg.split["order"])
    z = split.normalizer.transform(inputs.cube.counts)
    wz = wnorm = None
    if cfg.uses_weather:
        if inputs.weather is None:
            raise ConfigError("variant 3d2d1d needs weather")
        train = inputs.weather.values[split.train.start:split.train.stop]
        wnorm = ZScore.fit(train, axis=0)
        wz = wnorm.transform(inputs.weather.values)
    adjacency = kind = None
    if cfg.variant is not None:
        adjacency = graph.adjacency(cfg.variant)
        kind = "distance-only" if cfg.variant == "3d" else "homophily"
    return Prepared(split, z, wz, wnorm, adjacency, kind)


def _build_model(cfg: ExperimentConfig, prep: Prepared):
    W = prep.weather_z.shape[1] if prep.weather_z is not None else 0
    if cfg.model == "stgcn":
        return STGCN(prep.adjacency, cfg.stgcn_config(), weather_dim=W)
    return STZINB(prep.adjacency, cfg.stzinb_config(), weather_dim=W)


def train_model(cfg: ExperimentConfig, inputs: Inputs, prep: Prepared, checkpoint: Optional[Path] = None,
                resume: bool = False):
    seed_everything(cfg.seed)
    model = _build_model(cfg, prep)
    if cfg.model == "stgcn":
        mcfg = cfg.stgcn_config()
        targets = prep.inputs_z
        loss_fn = _stgcn_loss(mcfg.huber_delta)
        decay = (mcfg.decay_rate, mcfg.decay_every)
    else:
        mcfg = cfg.stzinb_config()
        targets = inputs.cube.counts
        loss_fn = _stzinb_loss
        decay = (None, None)
    if resume and checkpoint is not None and checkpoint.exists():
        blob = torch.load(checkpoint, weights_only=False)
        model.load_state_dict(blob["state_dict"])
        model.eval()
        model.fitted = True
        history = History(**{k: v for k, v in blob.get("history", {}).items()
                             if k in {f.name for f in fields(History)}})
        return model, history
    h = mcfg.input_horizon
    train = make_windows(prep.inputs_z, targets, h, prep.split.train, prep.weather_z)
    val = make_windows(prep.inputs_z, targets, h, prep.split.validation, prep.weather_z)
    history = fit(model, loss_fn, train, val, lr=mcfg.lr, batch_size=mcfg.batch_size,
                  max_epochs=mcfg.max_epochs, patience=mcfg.patience, seed=cfg.seed,
                  decay_rate=decay[0], decay_every=decay[1])
    if checkpoint is not None:
        _checkpoint(checkpoint, model, cfg.as_dict(), history, cfg.seed)
        blob = torch.load(checkpoint, weights_only=False)
        hist = history.as_dict()
        hist.pop("converged")
        blob["history"] = hist
        torch.save(blob, checkpoint)
    return model, history


def predict(cfg: ExperimentConfig, model, inputs: Inputs, prep: Prepared, segment: str = "test"):
    """Point predictions (raw count scale) and, for STZINB, ZINB parameters."""
    h = cfg.horizon
    targets = inputs.cube.counts
    win = make_windows(prep.inputs_z, targets, h, prep.split.segment(segment), prep.weather_z)
    if cfg.model == "stgcn":
        with torch.no_grad():
            outs = [model(win.x[s:s + 256], None if win.weather is None else win.weather[s:s + 256])
                    for s in range(0, len(win), 256)]
        z = torch.cat(outs).double().numpy()
        return win.targets, prep.split.normalizer.inverse(z), None
    parts = [model.predict_distribution(win.x[s:s + 256], None if win.weather is None else win.weather[s:s + 256])
             for s in range(0, len(win), 256)]
    dist = ZINBParams(*(np.concatenate([getattr(d, k) for d in parts]) for k in ("n", "p", "pi")))
    return win.targets, dist.mean(), dist


# ------------------------------------------------------------------ pipeline

def _write_predictions(path, cube, steps, preds, dist=None, quantiles=None) -> Path:
    T, N = preds.shape
    frame = pd.DataFrame({
        "timestamp": np.repeat(cube.time_index[steps].strftime("%Y-%m-%dT%H:%M:%S"), N),
        "tract_id": np.tile(cube.tract_ids, T),
        "y": cube.counts[steps].ravel(),
        "y_hat": preds.ravel(),
    })
    frame.to_csv(path, index=False, float_format="%.10g")
    return Path(path)


def _write_distribution(path, cube, steps, dist: ZINBParams, lo, hi) -> Path:
    T, N = dist.n.shape
    pd.DataFrame({
        "timestamp": np.repeat(cube.time_index[steps].strftime("%Y-%m-%dT%H:%M:%S"), N),
        "tract_id": np.tile(cube.tract_ids, T),
        "n": dist.n.ravel(), "p": dist.p.ravel(), "pi": dist.pi.ravel(),
        "mean": dist.mean().ravel(), "q_lo": lo.ravel(), "q_hi": hi.ravel(),
    }).to_csv(path, index=False, float_format="%.10g")
    return Path(path)


def run(config, inputs: Optional[Inputs] = None, stop_after: Optional[str] = None,
        resume: bool = False) -> RunResult:
    """Execute the pipeline and return the result; artifacts land in ``config.output``.

    ``config`` is an :class:`ExperimentConfig`, a mapping, or a YAML path.
    ``inputs`` skips file loading when the data are already in memory.
    """
    if isinstance(config, ExperimentConfig):
        cfg = config
    elif isinstance(config, dict):
        cfg = ExperimentConfig.from_dict(config, require_data=inputs is None)
    else:
        cfg = ExperimentConfig.from_yaml(config)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    completed: list = []
    outputs: dict = {}
    state: dict = {}
    write_json(out / "config.json", cfg.as_dict())

    def finish(status: str, **extra):
        write_manifest(out / "manifest.json", {k: v for k, v in outputs.items() if Path(v).exists()},
                       status=status, completed_stages=completed, model=cfg.model, variant=cfg.variant,
                       label=cfg.label, seed=cfg.seed, adjacency=state.get("adjacency_kind"), **extra)

    def stage(name, fn):
        try:
            result = fn()
        except BaseException as exc:  # noqa: BLE001 - re-raised with stage context
            finish("failed", failed_stage=name, error=str(exc))
            raise StageError(name, completed, exc) from exc
        completed.append(name)
        return result

    def do_load():
        nonlocal inputs
        inputs = _align(inputs if inputs is not None else load_inputs(cfg))
        outputs["tracts"] = write_tracts(out / "tracts.geojson", inputs.tracts)
        return inputs

    inputs = stage("load", do_load)
    if cfg.uses_weather and inputs.weather is None:
        exc = ConfigError("variant 3d2d1d needs weather")
        finish("failed", failed_stage="prepare", error=str(exc))
        raise StageError("prepare", completed, exc)

    def do_graph():
        g = build_graph(inputs.tracts, inputs.features, cfg.graph["sigma"], cfg.graph["eps"],
                        tuple(cfg.graph["groups"]), cfg.graph["row_normalize"])
        g.save(out / "graph")
        outputs["graph_manifest"] = out / "graph" / "graph.manifest.json"
        return g

    graph = stage("build-graph", do_graph)
    if stop_after == "build-graph":
        finish("partial")
        return RunResult(out, MetricsReport.null(inputs.cube.tract_ids))

    def do_prepare():
        prep = prepare(cfg, inputs, graph)
        state["adjacency_kind"] = prep.adjacency_kind
        s = prep.split
        cube_path = inputs.cube.save(out / "prepared", dropped=inputs.dropped)
        outputs["observations"] = cube_path
        if inputs.weather is not None:
            outputs["weather"] = inputs.weather.to_csv(out / "prepared" / "weather.csv")
        write_json(out / "prepared" / "split.json", {
            "order": s.order,
            "train": [s.train.start, s.train.stop],
            "validation": [s.validation.start, s.validation.stop],
            "test": [s.test.start, s.test.stop],
            "count_normalizer": s.normalizer.as_dict(),
            "weather_normalizer": prep.weather_norm.as_dict() if prep.weather_norm else None,
            "zero_rate": inputs.cube.zero_rate(),
            "dropped": inputs.dropped,
        })
        outputs["split"] = out / "prepared" / "split.json"
        return prep

    prep = stage("prepare", do_prepare)
    if stop_after == "prepare":
        finish("partial")
        return RunResult(out, MetricsReport.null(inputs.cube.tract_ids))

    def do_train():
        if cfg.model == "ha":
            return ha_fit_predict(inputs.cube, prep.split, cfg.horizon)
        if cfg.model == "rf":
            steps, preds = rf_fit_predict(inputs.cube, prep.split, cfg.rf["lags"], cfg.seed, cfg.rf["n_estimators"])
            keep = steps >= cfg.horizon
            return steps[keep], preds[keep]
        ckpt = out / "checkpoint.pt"
        model, history = train_model(cfg, inputs, prep, ckpt, resume=resume)
        outputs["checkpoint"] = ckpt
        write_json(out / "history.json", history.as_dict())
        outputs["history"] = out / "history.json"
        return model, history

    trained = stage("train", do_train)
    if stop_after == "train":
        finish("partial")
        return RunResult(out, MetricsReport.null(inputs.cube.tract_ids))

    ids = inputs.cube.tract_ids
    downtown = downtown_tracts(inputs.tracts, cfg.evaluation["downtown_size"])
    meta = {"model": cfg.model, "variant": cfg.variant, "label": cfg.label, "seed": cfg.seed,
            "adjacency": state.get("adjacency_kind")}

    def do_evaluate():
        history = dist = None
        lo = hi = None
        if cfg.model in ("ha", "rf"):
            steps, preds = trained
            meta["converged"] = True
        else:
            model, history = trained
            meta["converged"] = history.converged
            meta["best_epoch"] = history.best_epoch
            meta["epochs_run"] = len(history.val_loss)
            if not history.converged:
                logger.warning("%s did not converge; reporting nulls", cfg.label)
                return MetricsReport.null(ids, **meta), history, None, None, None, None, None
            steps, preds, dist = predict(cfg, model, inputs, prep)
        y = inputs.cube.counts[steps]
        if dist is not None:
            lo, hi = dist.quantile(cfg.evaluation["quantiles"][0]), dist.quantile(cfg.evaluation["quantiles"][1])
        meta["test_steps"] = int(len(steps))
        report = evaluate(y, preds, ids, downtown, lo, hi, cfg.evaluation["f1_average"], **meta)
        return report, history, steps, preds, dist, lo, hi

    report, history, steps, preds, dist, lo, hi = stage("evaluate", do_evaluate)

    def do_export():
        outputs["metrics"] = out / "metrics.json"
        write_json(outputs["metrics"], report.as_dict())
        if preds is not None:
            outputs["mape"] = out / "mape_per_tract.csv"
            pd.DataFrame({"tract_id": ids, "mape": [report.mape_per_tract[t] for t in ids]}).to_csv(
                outputs["mape"], index=False, float_format="%.10g")
            outputs["predictions"] = _write_predictions(out / "predictions.csv", inputs.cube, steps, preds)
        if dist is not None:
            outputs["distribution"] = _write_distribution(out / "distribution.csv", inputs.cube, steps, dist, lo, hi)

    stage("export", do_export)
    finish("complete")
    return RunResult(out, report, history, steps, preds, dist)


# ------------------------------------------------------------------ comparison

def _run_metrics(directory) -> dict:
    path = Path(directory) / "metrics.json"
    if not path.exists():
        raise FileNotFoundError(f"{directory} has no metrics.json; run evaluate first")
    return read_json(path)


def compare(dir_a, dir_b, out_dir=None) -> dict:
    """Per-tract MAPE difference (B minus A) between two evaluated runs."""
    ma, mb = _run_metrics(dir_a), _run_metrics(dir_b)
    a, b = ma["mape_per_tract"], mb["mape_per_tract"]
    if set(a) != set(b):
        raise ValueError("runs cover different tract sets")
    ids = sorted(a)
    if any(a[t] is None for t in ids) or any(b[t] is None for t in ids):
        raise ValueError("cannot compare a run without metrics (non-converged)")
    delta = {t: b[t] - a[t] for t in ids}
    low = set()
    pred = Path(dir_a) / "predictions.csv"
    if pred.exists():
        df = pd.read_csv(pred, dtype={"tract_id": str})
        totals = df.groupby("tract_id")["y"].sum()
        low = {t for t in ids if totals.get(t, 0) <= 1}
    active = [t for t in ids if t not in low]
    summary = {
        "tracts": len(ids),
        "improved_fraction": float(np.mean([delta[t] < 0 for t in ids])) if ids else 0.0,
        "improved_fraction_active": float(np.mean([delta[t] < 0 for t in active])) if active else 0.0,
        "low_activity": sorted(low),
        "mean_delta": float(np.mean(list(delta.values()))) if ids else 0.0,
        "delta_mape": delta,
        "run_a": str(dir_a),
        "run_b": str(dir_b),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "compare.json", summary)
        pd.DataFrame({
            "tract_id": ids,
            "mape_a": [a[t] for t in ids],
            "mape_b": [b[t] for t in ids],
            "delta_mape": [delta[t] for t in ids],
            "low_activity": [t in low for t in ids],
        }).to_csv(out_dir / "delta_mape.csv", index=False, float_format="%.10g")
        tracts_path = Path(dir_a) / "tracts.geojson"
        if tracts_path.exists():
            tracts = ingest_tracts(tracts_path)
            props = {t: {"delta_mape": delta[t], "low_activity": t in low} for t in ids}
            write_tracts(out_dir / "delta_mape.geojson", tracts, props)
    return summary


def report_table(run_dirs) -> pd.DataFrame:
    """Metric rows x eight model columns; missing cells are ``"-"``."""
    cells = {label: {} for label, _, _ in REPORT_COLUMNS}
    by_key = {(m, v): label for label, m, v in REPORT_COLUMNS}
    for d in run_dirs:
        m = _run_metrics(d)
        key = (m["metadata"].get("model"), m["metadata"].get("variant"))
        if key not in by_key:
            raise ValueError(f"{d}: unrecognized model/variant {key}")
        cells[by_key[key]] = m
    rows = []
    for row_label, key in REPORT_ROWS:
        row = {"Metrics": row_label}
        for label, _, _ in REPORT_COLUMNS:
            v = cells[label].get(key)
            row[label] = "-" if v is None else f"{v:.3f}"
        rows.append(row)
    return pd.DataFrame(rows, columns=["Metrics"] + [c[0] for c in REPORT_COLUMNS])
