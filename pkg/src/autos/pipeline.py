"""End-to-end runner: per-epoch source training, selection, aggregation, adaptation.

A :class:`RunConfig` is read from a flat JSON object with dotted keys::

    {"data.synthetic.K": 3, "train.epochs": 30, "adapt.mode": "autos", "seed": 7}

Every key has a default; unknown keys are rejected. ``run_pipeline`` is
deterministic in (config, seed) and ``emit_report`` writes files whose names
carry a hash of the config.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import adapt as adapt_mod
from .data import (LabeledDomain, Standardizer, SyntheticSpec, UnlabeledDomain, generate_pretraining_split,
                   generate_synthetic, load_feature_table, read_labels)
from .errors import ConfigError, DataError
from .federate import aggregate, predict_target, renormalize
from .nn import (Hyperparams, Model, TrainState, init_model, iterate_minibatches, model_to_dict, schedules,
                 smoothed_ce_loss, train_step)
from .selection import select_domains

MODES = ("autos", "autos_sf", "fedavg", "wo_L", "wo_Lin", "wo_Lex", "wo_tarcof")

# named RNG streams derived from the master seed
_STREAMS = {"init": 101, "batching": 102, "teacher": 103}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[name]])


@dataclass
class DataConfig:
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    source_paths: list[str] | None = None
    target_path: str | None = None
    target_labels_path: str | None = None
    teacher_path: str | None = None
    class_count: int | None = None
    teacher_per_class: int = 5


@dataclass
class TrainConfig:
    epochs: int = 30
    eta0: float = 0.001
    momentum: float = 0.9
    batch_size: int = 64
    mu: float = 0.1
    hidden: int = 64
    local_epochs: int = 1


@dataclass
class SelectConfig:
    radius_metric: str = "mean"
    alpha: float | None = None
    lam: float = 0.5
    sigma_mode: str = "epoch"
    density_exponent: str = "1"
    keep_count: str = "initial"  # initial | live: domain count in the keep threshold


@dataclass
class AdaptConfig:
    beta: float = 0.003
    gamma: float = 0.5
    theta: float = 0.4
    delta: float = 1.0
    tau: float = 10.0
    mode: str = "autos"
    joint_dim: int = 8
    variance: str = "teacher"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    seed: int = 0
    out_dir: str = "runs"
    dump_embeddings: bool = False

    def validate(self) -> "RunConfig":
        d = self.data
        if (d.synthetic is None) == (d.source_paths is None):
            raise ConfigError("data: give exactly one of data.synthetic.* or data.source_paths")
        if d.source_paths is not None and not d.target_path:
            raise ConfigError("data.target_path is required with data.source_paths")
        if d.synthetic is not None:
            d.synthetic.validate()
        if self.train.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.train.local_epochs < 0:
            raise ConfigError("train.local_epochs must be >= 0")
        if self.train.hidden < 1 or self.adapt.joint_dim < 1:
            raise ConfigError("train.hidden and adapt.joint_dim must be >= 1")
        if self.adapt.mode not in MODES:
            raise ConfigError(f"adapt.mode must be one of {MODES}, got {self.adapt.mode!r}")
        if self.adapt.variance not in ("teacher", "student"):
            raise ConfigError("adapt.variance must be 'teacher' or 'student'")
        if self.select.keep_count not in ("initial", "live"):
            raise ConfigError("select.keep_count must be 'initial' or 'live'")
        if not 0 <= self.select.lam <= 1:
            raise ConfigError("select.lambda must lie in [0, 1]")
        try:
            self.hyperparams()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def hyperparams(self) -> Hyperparams:
        t, s, a = self.train, self.select, self.adapt
        return Hyperparams(mu=t.mu, eta0=t.eta0, momentum=t.momentum, batch_size=t.batch_size, alpha=s.alpha,
                           lam=s.lam, beta=a.beta, gamma=a.gamma, theta=a.theta, delta=a.delta,
                           sigma_mode=s.sigma_mode, radius_metric=s.radius_metric,
                           density_exponent=s.density_exponent, tau=a.tau, epochs=t.epochs)

    # ------------------------------------------------------------ flat keys

    def to_flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for section in ("data", "train", "select", "adapt"):
            for f in dataclasses.fields(getattr(self, section)):
                value = getattr(getattr(self, section), f.name)
                if f.name == "synthetic":
                    if value is None:
                        out["data.synthetic"] = None
                    else:
                        for g in dataclasses.fields(value):
                            v = getattr(value, g.name)
                            out[f"data.synthetic.{g.name}"] = list(v) if isinstance(v, tuple) else v
                    continue
                out[f"{section}.{_KEY_ALIASES.get(f.name, f.name)}"] = value
        out.update(seed=self.seed, out_dir=self.out_dir, dump_embeddings=self.dump_embeddings)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "RunConfig":
        cfg = cls()
        synth: dict[str, Any] = {}
        for key, value in flat.items():
            if key in ("seed", "out_dir", "dump_embeddings"):
                setattr(cfg, key, value)
                continue
            if key == "data.synthetic":
                if value is not None:
                    raise ConfigError("data.synthetic may only be set to null; use data.synthetic.<field>")
                cfg.data.synthetic = None
                continue
            parts = key.split(".")
            if parts[:2] == ["data", "synthetic"] and len(parts) == 3:
                if parts[2] not in {f.name for f in dataclasses.fields(SyntheticSpec)}:
                    raise ConfigError(f"unknown config key {key!r}")
                synth[parts[2]] = tuple(value) if parts[2] == "irrelevant_domains" else value
                continue
            if len(parts) != 2 or parts[0] not in ("data", "train", "select", "adapt"):
                raise ConfigError(f"unknown config key {key!r}")
            section = getattr(cfg, parts[0])
            attr = _KEY_NAMES.get(parts[1], parts[1])
            if attr not in {f.name for f in dataclasses.fields(section)} or attr == "synthetic":
                raise ConfigError(f"unknown config key {key!r}")
            setattr(section, attr, value)
        if flat.get("data.source_paths") is not None and not synth and "data.synthetic" not in flat:
            cfg.data.synthetic = None
        if synth:
            if cfg.data.synthetic is None:
                raise ConfigError("data.synthetic.* given together with data.synthetic = null")
            try:
                cfg.data.synthetic = dataclasses.replace(cfg.data.synthetic, **synth)
            except TypeError as exc:
                raise ConfigError(str(exc)) from None
        return cfg.validate()

    def digest(self) -> str:
        flat = self.to_flat()
        flat.pop("out_dir")
        return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()[:12]


_KEY_ALIASES = {"lam": "lambda"}
_KEY_NAMES = {v: k for k, v in _KEY_ALIASES.items()}


def load_config(path, overrides: dict[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        flat = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(flat, dict):
        raise ConfigError(f"{path}: top level must be an object of dotted keys")
    flat.update(overrides or {})
    return RunConfig.from_flat(flat)


# ---------------------------------------------------------------- report

@dataclass
class RunReport:
    config: dict[str, Any]
    seed: int
    epochs: list[dict[str, Any]]
    final: dict[str, Any]
    # not serialized: wall time, final model and predictions for emit_report
    wall_time: float = field(default=0.0, compare=False)
    artifacts: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {"config": self.config, "seed": self.seed, "epochs": self.epochs, "final": self.final}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RunReport":
        return cls(doc["config"], doc["seed"], doc["epochs"], doc["final"])


def evaluate(preds, hidden) -> float:
    preds = np.asarray(preds)
    hidden = np.asarray(hidden)
    if preds.shape != hidden.shape:
        raise ValueError(f"prediction length {preds.shape} != label length {hidden.shape}")
    if preds.size == 0:
        raise ValueError("nothing to evaluate")
    return float(np.mean(preds == hidden))


# ------------------------------------------------------------- pipeline

def _load_inputs(cfg: RunConfig) -> tuple[list[LabeledDomain], UnlabeledDomain, LabeledDomain]:
    d = cfg.data
    if d.synthetic is not None:
        sources, target = generate_synthetic(d.synthetic, cfg.seed)
        pretrain = generate_pretraining_split(d.synthetic, cfg.seed, d.teacher_per_class)
        return sources, target, pretrain
    sources = [load_feature_table(p, True, d.class_count, name=f"source{k}") for k, p in enumerate(d.source_paths)]
    C = d.class_count or max(s.class_count for s in sources)
    sources = [LabeledDomain(s.name, s.features, s.labels, C, s.ids) for s in sources]
    if len({s.dim for s in sources}) != 1:
        raise DataError("source tables disagree on feature dimension")
    target = load_feature_table(d.target_path, False, name="target")
    if target.dim != sources[0].dim:
        raise DataError(f"{d.target_path}: dimension {target.dim} != source dimension {sources[0].dim}")
    if d.target_labels_path:
        ids, labels = read_labels(d.target_labels_path)
        order = {i: j for j, i in enumerate(ids)}
        try:
            target.hidden_labels = labels[[order[i] for i in target.ids]]
        except KeyError as exc:
            raise DataError(f"{d.target_labels_path}: no label for id {exc.args[0]}") from None
    if d.teacher_path:
        pretrain = load_feature_table(d.teacher_path, True, C, name="pretrain")
    else:
        pooled = np.concatenate([s.labels for s in sources])
        feats = np.concatenate([s.features for s in sources])
        idx = np.concatenate([np.flatnonzero(pooled == c)[:d.teacher_per_class] for c in range(C)])
        pretrain = LabeledDomain("pretrain", feats[idx], pooled[idx], C)
    return sources, target, pretrain


def _supervised_pass(model: Model, domain: LabeledDomain, hp: Hyperparams, eta: float,
                     rng: np.random.Generator, passes: int) -> tuple[Model, list[float]]:
    state = TrainState.for_params(model.params())
    losses = []
    for _ in range(passes):
        for idx in iterate_minibatches(len(domain), hp.batch_size, rng):
            loss, grads = smoothed_ce_loss(model, domain.features[idx], domain.labels[idx], hp.mu)
            model = train_step(model, grads, state, eta, hp.momentum)
            losses.append(loss)
    return model, losses


def _sigma(mode: str, p: float, epoch: int) -> float:
    if mode == "never":
        return float("inf")
    if mode == "progress":
        return float("inf") if p == 0 else 1.0 / (2.0 * p)
    return schedules(1.0, p, epoch)[1]


def _num(x) -> float | None:
    return None if x is None or not np.isfinite(x) else float(x)


def run_pipeline(config: RunConfig) -> RunReport:
    """Run the selection-and-adaptation loop for ``config.train.epochs`` epochs."""
    cfg = config.validate()
    started = time.perf_counter()
    hp = cfg.hyperparams()
    mode = cfg.adapt.mode
    raw_sources, raw_target, raw_pretrain = _load_inputs(cfg)
    scaler = Standardizer.fit(raw_sources)
    sources = [LabeledDomain(s.name, scaler(s.features), s.labels, s.class_count, s.ids) for s in raw_sources]
    target_x = scaler(raw_target.unlabeled().features)
    target_ids = list(raw_target.ids)
    hidden_labels = raw_target.hidden_labels
    pretrain = LabeledDomain("pretrain", scaler(raw_pretrain.features), raw_pretrain.labels,
                             raw_pretrain.class_count)

    K, C = len(sources), sources[0].class_count
    batch_rng = stream(cfg.seed, "batching")
    model = init_model(sources[0].dim, cfg.train.hidden, C, stream(cfg.seed, "init"))
    teacher = adapt_mod.make_teacher(pretrain, cfg.adapt.joint_dim, cfg.adapt.tau, stream(cfg.seed, "teacher"))
    encoder_before = teacher.vis_encoder.tobytes()
    adapt_state = adapt_mod.AdaptState.initial(teacher)

    live = list(range(K))
    train_sets = list(sources)
    records = []
    ce_before = None
    omega_hat: list[float] = []
    for epoch in range(1, cfg.train.epochs + 1):
        p = (epoch - 1) / cfg.train.epochs
        eta = schedules(hp.eta0, p, epoch)[0]
        sigma = _sigma(hp.sigma_mode, p, epoch)
        supervise = not (mode == "wo_L" and epoch > 1)

        local, src_losses = {}, []
        for k in live:
            passes = cfg.train.local_epochs if supervise else 0
            local[k], losses = _supervised_pass(model.copy(), train_sets[k], hp, eta, batch_rng, passes)
            src_losses += losses

        rows = []
        if mode == "fedavg":
            weights = np.full(len(live), 1.0 / len(live))
            keep = np.ones(len(live), dtype=bool)
            for k in live:
                rows.append({"domain": k, "omega1": None, "omega2": None, "omega": 1.0 / len(live),
                             "kept": True, "n_confident_src": len(sources[k]), "n_confident_tgt": 0})
            threshold = None
        else:
            outcome = select_domains([local[k] for k in live], [sources[k] for k in live], target_x, hp, sigma,
                                     live, include_target=mode != "wo_tarcof", target_ids=target_ids,
                                     domain_count=K if cfg.select.keep_count == "initial" else None)
            weights, keep = outcome.omega, outcome.keep
            threshold = _num(outcome.threshold)
            for i, k in enumerate(live):
                rows.append({"domain": k, "omega1": float(outcome.omega1[i]), "omega2": float(outcome.omega2[i]),
                             "omega": float(outcome.omega[i]), "kept": bool(keep[i]),
                             "n_confident_src": int(outcome.confident_src[i].size),
                             "n_confident_tgt": int(outcome.confident_tgt[i].size)})
                if keep[i] and outcome.renewed_domains[i] is not None:
                    train_sets[k] = outcome.renewed_domains[i]

        kept = [k for k, flag in zip(live, keep) if flag]
        kept_weights = np.asarray(weights)[np.asarray(keep)]
        # stage-2 source supervision on the renewed domains; skipped source-free
        if mode != "autos_sf" and supervise:
            for k in kept:
                local[k], losses = _supervised_pass(local[k], train_sets[k], hp, eta, batch_rng, 1)
                src_losses += losses

        omega_hat = renormalize(kept_weights, np.ones(len(kept), dtype=bool)).omega_kept.tolist()
        model = aggregate([local[k] for k in kept], kept_weights)
        live = kept

        if ce_before is None:
            ce_before = adapt_mod.teacher_student_ce(model, teacher, target_x)
        model, adapt_losses = adapt_mod.adapt_epoch(
            model, teacher, adapt_state, target_x, hp, eta, batch_rng,
            use_external=mode != "wo_Lex", use_internal=mode != "wo_Lin", variance=cfg.adapt.variance)

        preds = adapt_mod.final_labels(model, target_x)
        acc = evaluate(preds, hidden_labels) if hidden_labels is not None else None
        records.append({
            "epoch": epoch, "eta": eta, "sigma": _num(sigma), "threshold": threshold,
            "domains": rows, "kept": [k in live for k in range(K)], "kept_count": len(live),
            "omega_hat": omega_hat,
            "L_src": float(np.mean(src_losses)) if src_losses else None,
            "L_ex": adapt_losses["L_ex"], "L_in": adapt_losses["L_in"],
            "ce_teacher_student": adapt_mod.teacher_student_ce(model, teacher, target_x),
            "target_accuracy": acc,
            "teacher_accuracy": (evaluate(np.argmax(adapt_mod.teacher_predict(teacher, target_x), axis=1),
                                          hidden_labels) if hidden_labels is not None else None),
        })

    if teacher.vis_encoder.tobytes() != encoder_before:
        raise AssertionError("teacher encoder was modified")
    probs = predict_target(model, target_x)
    preds = np.argmax(probs, axis=1)
    digest = cfg.digest()
    final = {
        "kept": [k in live for k in range(K)],
        "kept_count": len(live),
        "accuracy": evaluate(preds, hidden_labels) if hidden_labels is not None else None,
        "ce_before": ce_before,
        "ce_after": records[-1]["ce_teacher_student"],
        "predictions_path": f"run-{digest}.predictions.csv",
        "omega_hat": omega_hat,
    }
    report = RunReport(cfg.to_flat(), cfg.seed, records, final)
    report.wall_time = time.perf_counter() - started
    report.artifacts = {"model": model, "ids": target_ids, "preds": preds, "max_prob": probs.max(axis=1),
                        "features": adapt_mod.forward(model, target_x)[0], "digest": digest}
    return report


# ---------------------------------------------------------------- output

def output_paths(digest: str, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    stem = f"run-{digest}"
    return {name: out / f"{stem}.{suffix}" for name, suffix in [
        ("report", "report.json"), ("selection", "selection.csv"), ("loss", "loss.csv"),
        ("predictions", "predictions.csv"), ("model", "model.json"), ("timing", "timing.json"),
        ("embeddings", "embeddings.csv")]}


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _cell(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def emit_report(report: RunReport, out_dir) -> dict[str, Path]:
    """Write report JSON, selection log, loss trace, predictions and final checkpoint."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        digest = report.artifacts.get("digest") or report.final["predictions_path"].split(".")[0][4:]
        paths = output_paths(digest, out)
        paths["report"].write_text(report.to_json(), encoding="utf-8")
        _write_csv(paths["selection"],
                   ["epoch", "domain", "omega1", "omega2", "omega", "kept", "n_confident_src", "n_confident_tgt"],
                   [[rec["epoch"]] + [_cell(row[k]) for k in ("domain", "omega1", "omega2", "omega", "kept",
                                                              "n_confident_src", "n_confident_tgt")]
                    for rec in report.epochs for row in rec["domains"]])
        _write_csv(paths["loss"], ["epoch", "L_src", "L_ex", "L_in", "target_accuracy"],
                   [[rec["epoch"]] + [_cell(rec[k]) for k in ("L_src", "L_ex", "L_in", "target_accuracy")]
                    for rec in report.epochs])
        art = report.artifacts
        written = {k: paths[k] for k in ("report", "selection", "loss")}
        if "model" in art:
            _write_csv(paths["predictions"], ["id", "pred_label", "max_prob"],
                       [[i, int(y), repr(float(pr))] for i, y, pr in zip(art["ids"], art["preds"], art["max_prob"])])
            doc = model_to_dict(art["model"], report.seed, omega_hat=report.final["omega_hat"])
            paths["model"].write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
            paths["timing"].write_text(json.dumps({"wall_time_s": report.wall_time}) + "\n", encoding="utf-8")
            written.update({k: paths[k] for k in ("predictions", "model", "timing")})
            if report.config.get("dump_embeddings"):
                feats = art["features"]
                _write_csv(paths["embeddings"], ["id"] + [f"h{j}" for j in range(feats.shape[1])],
                           [[i] + [repr(float(v)) for v in row] for i, row in zip(art["ids"], feats)])
                written["embeddings"] = paths["embeddings"]
    except OSError as exc:
        raise OSError(f"{getattr(exc, 'filename', out)}: {exc.strerror or exc}") from exc
    return written


def load_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
