"""Command-line entry point: ``zayan <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data or I/O error, 4 numeric
failure. Failures print a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, _FIELD_TYPES, _KEY_TO_FIELD, canonical_key, load_config, parse_text
from .data import DataError, Dataset, ScalerStats, load_csv, make_synthetic, standardize
from .diagnostics import SECTIONS, DiagnosticsReport, cross_validate, reference_behaviour, run_diagnostics
from .diagnostics.turing import export_turing_sheet, score_turing_sheet
from .numerics import NonFiniteError, load_matrix, load_tensors, save_matrix, save_tensors
from .numerics.checkpoint import CheckpointError
from .pretrain import EncoderState, FeatureEmbeddingMatrix, PretrainError, pretrain
from .transformer import FinetuneError, ZayanModel, finetune

THREADS_ENV = "ZAYAN_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# -- run manifest ------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    dataset: dict
    version: str = __version__
    started: str = ""
    finished: str = ""
    artifacts: dict = field(default_factory=dict)

    def record(self, out: Path, paths) -> None:
        for p in paths:
            self.artifacts[str(Path(p).relative_to(out))] = sha256_file(p)

    def write(self, out: Path) -> Path:
        self.finished = _now()
        p = out / "manifest.json"
        p.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return p


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -- data ----------------------------------------------------------------


def parse_synthetic(text: str) -> Dataset:
    """``synthetic:n=200,m=6,c=2,groups=3,noise=0.3,sep=8,seed=0``."""
    keys = {"n": int, "m": int, "c": int, "groups": int, "noise": float, "sep": float, "seed": int}
    vals = {"n": 200, "m": 6, "c": 2, "groups": 3, "noise": 0.3, "sep": 2.0, "seed": 0}
    body = text.split(":", 1)[1]
    for part in filter(None, body.split(",")):
        k, _, v = part.partition("=")
        if k.strip() not in keys:
            raise ConfigError("data", f"unknown synthetic parameter {k.strip()!r}")
        try:
            vals[k.strip()] = keys[k.strip()](v)
        except ValueError:
            raise ConfigError("data", f"bad value for synthetic parameter {k.strip()!r}") from None
    return make_synthetic(vals["n"], vals["m"], vals["c"], vals["groups"], vals["noise"], vals["seed"], vals["sep"])


def load_dataset(cfg: RunConfig) -> Dataset:
    if not cfg.data:
        raise ConfigError("data", "no dataset given (use --data or set data = ...)")
    if cfg.data.startswith("synthetic:"):
        return parse_synthetic(cfg.data)
    return load_csv(cfg.data, cfg.label_column, impute=cfg.impute)


def read_feature_rows(path, feature_names) -> tuple[np.ndarray, list[list[str]]]:
    """Columns named ``feature_names`` from a CSV; other columns are returned as-is."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [f for f in feature_names if f not in header]
    if missing:
        raise DataError(f"{path}: missing feature columns {missing}")
    idx = [header.index(f) for f in feature_names]
    X = np.empty((len(rows) - 1, len(idx)))
    for i, r in enumerate(rows[1:]):
        for j, c in enumerate(idx):
            try:
                X[i, j] = float(r[c])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{i + 2}: bad value in column {feature_names[j]!r}") from None
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature values")
    return X, rows


def aligned_dataset(cfg: RunConfig, model: ZayanModel) -> tuple[np.ndarray, np.ndarray, Dataset]:
    """Standardized rows and labels of ``cfg.data`` in the model's feature and class order."""
    d = load_dataset(cfg)
    missing = [f for f in model.feature_names if f not in d.feature_names]
    if missing:
        raise DataError(f"dataset lacks model features {missing}")
    d = d.select_features([d.feature_names.index(f) for f in model.feature_names])
    unknown = [c for c in d.class_names if c not in model.class_names]
    if unknown:
        raise DataError(f"labels {unknown} were not seen in training")
    remap = np.array([model.class_names.index(c) for c in d.class_names])
    labels = remap[d.labels]
    X = model.scaler.transform(d.features) if model.scaler is not None else d.features
    return X, labels, d


# -- artifacts ----------------------------------------------------------------


def save_encoder(out: Path, enc: EncoderState, Z: FeatureEmbeddingMatrix, scaler: ScalerStats) -> list[Path]:
    t = dict(enc.parameters().snapshot())
    t.update({"scaler.mean": scaler.mean, "scaler.std": scaler.std,
              "scaler.zero_variance": scaler.zero_variance.astype(np.float64)})
    save_tensors(out / "encoder.bin", t)
    save_matrix(out / "z.bin", Z.Z)
    meta = {"feature_names": list(enc.feature_names), "emb_dim": enc.emb_dim,
            "hidden_dim": enc.hidden_dim, "dropout": enc.drop.p}
    (out / "encoder.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [out / "encoder.bin", out / "z.bin", out / "encoder.json"]


def load_encoder(src: Path) -> tuple[EncoderState, FeatureEmbeddingMatrix, ScalerStats]:
    if not (src / "encoder.json").exists():
        raise FileNotFoundError(f"no pretrained encoder in {src}")
    meta = json.loads((src / "encoder.json").read_text())
    enc = EncoderState(meta["feature_names"], meta["emb_dim"], meta["hidden_dim"], meta["dropout"], seed=0)
    t = load_tensors(src / "encoder.bin")
    scaler = ScalerStats(t.pop("scaler.mean"), t.pop("scaler.std"), t.pop("scaler.zero_variance").astype(bool))
    enc.parameters().load(t)
    return enc, FeatureEmbeddingMatrix(load_matrix(src / "z.bin")), scaler


def load_model(path) -> ZayanModel:
    p = Path(path)
    if (p / "model").is_dir() and not (p / "model.json").exists():
        p = p / "model"
    return ZayanModel.load(p)


# -- subcommands ---------------------------------------------------------------


def cmd_pretrain(cfg: RunConfig, args, out: Path, man: RunManifest) -> dict:
    d = load_dataset(cfg)
    man.dataset = d.fingerprint()
    std, stats = standardize(d)
    enc, Z, hist = pretrain(std, cfg.pretrain_config())
    paths = save_encoder(out, enc, Z, stats)
    (out / "pretrain_history.txt").write_text(hist.to_text())
    paths.append(out / "pretrain_history.txt")
    man.record(out, paths)
    return {"d": Z.d, "m": Z.m, "gram_offdiag_initial": hist.initial_gram_offdiag,
            "gram_offdiag_final": hist.final_gram_offdiag}


def cmd_finetune(cfg: RunConfig, args, out: Path, man: RunManifest) -> dict:
    d = load_dataset(cfg)
    man.dataset = d.fingerprint()
    if args.pretrained:
        enc, Z, stats = load_encoder(Path(args.pretrained))
        if list(enc.feature_names) != list(d.feature_names):
            raise DataError("dataset features differ from the pretrained encoder's")
        std, _ = standardize(d, stats)
    else:
        std, stats = standardize(d)
        enc, Z, _ = pretrain(std, cfg.pretrain_config())
    model, hist = finetune(std, enc, Z, cfg.transformer_config(), scaler=stats)
    paths = model.save(out / "model", extra={"config_hash": cfg.hash()})
    (out / "finetune_history.txt").write_text(hist.to_text())
    paths.append(out / "finetune_history.txt")
    man.record(out, paths)
    return {"train_accuracy": hist.train_accuracy[-1] if hist.train_accuracy else None}


POOLED_SECTIONS = ("accuracy", "ece", "selective", "coverage_margin", "topk", "triage", "confusion")
FOLD_SECTIONS = ("robustness", "sanity", "gram", "geometry")


def cmd_cv(cfg: RunConfig, args, out: Path, man: RunManifest) -> dict:
    d = load_dataset(cfg)
    man.dataset = d.fingerprint()
    t0 = time.perf_counter()
    res = cross_validate(d, cfg.pretrain_config(), cfg.transformer_config(), cfg.folds, cfg.seed, keep_models=True)
    elapsed = time.perf_counter() - t0
    paths = []
    (out / "cv.json").write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n")
    paths.append(out / "cv.json")
    for f in res.folds:
        paths += f.model.save(out / f"fold_{f.fold}", extra={"config_hash": cfg.hash()})
    rep = DiagnosticsReport(metadata={"command": "cv", "seed": cfg.seed, "config_hash": cfg.hash(),
                                      "dataset": d.fingerprint()})
    probs, labels = res.pooled()

    class _Pooled:  # stored out-of-fold predictions; model-free sections only
        def predict_proba(self, X):
            return probs

    run_diagnostics(_Pooled(), np.zeros((len(labels), 1)), labels, POOLED_SECTIONS, cfg.seed, probs=probs, report=rep)
    f0 = res.folds[0]
    run_diagnostics(f0.model, f0.test_rows, f0.labels, FOLD_SECTIONS, cfg.seed, report=rep)
    for name in FOLD_SECTIONS:
        rep.sections[name]["params"]["fold"] = 0
    reference_behaviour(rep, cfg.emb_dim)
    rep.add("cv", "cross_validate", {"k": cfg.folds, "seed": cfg.seed}, res.to_dict())
    rep.timing["cv_seconds"] = elapsed
    paths += rep.write(out)
    man.record(out, paths)
    print(f"accuracy {res.summary()}  folds {np.round(100 * res.fold_accuracies, 2).tolist()}")
    return {"mean": res.mean, "std": res.std, "summary": res.summary()}


FLAG_SECTIONS = {
    "accuracy": "accuracy", "ece": "ece", "selective": "selective", "coverage_margin": "coverage_margin",
    "triage": "triage", "confusion": "confusion", "robustness": "robustness", "sanity": "sanity",
    "ood": "ood", "sensitivity": "sensitivity", "importance": "importance", "gram": "gram",
    "geometry": "geometry", "tta": "tta", "latency": "latency",
}


def selected_sections(args) -> list[str]:
    if args.all:
        return list(SECTIONS)
    chosen = [s for flag, s in FLAG_SECTIONS.items() if getattr(args, flag)]
    if args.topk:
        chosen.append("topk")
    if not chosen:
        raise ConfigError(None, "no diagnostics selected (use --all or section flags)")
    return [s for s in SECTIONS if s in chosen]


def parse_ks(text: str | None) -> tuple[int, ...]:
    if not text:
        return (1, 2, 3, 5)
    try:
        ks = tuple(int(k) for k in text.split(","))
    except ValueError:
        raise ConfigError("topk", f"expected comma-separated integers, got {text!r}") from None
    if any(k < 1 for k in ks):
        raise ConfigError("topk", "k values must be >= 1")
    return ks


def cmd_diagnose(cfg: RunConfig, args, out: Path, man: RunManifest) -> dict:
    model = load_model(args.model)
    X, labels, d = aligned_dataset(cfg, model)
    man.dataset = d.fingerprint()
    sections = selected_sections(args)
    ks = parse_ks(args.topk)
    if args.topk and max(ks) > model.n_classes:
        raise ConfigError("topk", f"k={max(ks)} exceeds the number of classes {model.n_classes}")
    rep = DiagnosticsReport(metadata={"command": "diagnose", "seed": cfg.seed, "config_hash": cfg.hash(),
                                      "dataset": d.fingerprint(), "sections": sections})
    run_diagnostics(model, X, labels, sections, cfg.seed, ks=ks, positive_class=args.positive_class,
                    augment=cfg.augment(), report=rep)
    paths = rep.write(out)
    man.record(out, paths)
    return {"sections": sorted(rep.sections)}


def cmd_predict(cfg: RunConfig, args, out: Path, man: RunManifest) -> dict:
    model = load_model(args.model)
    X, rows = read_feature_rows(cfg.data, model.feature_names)
    man.dataset = {"N": int(X.shape[0]), "m": int(X.shape[1])}
    if model.scaler is not None:
        X = model.scaler.transform(X)
    probs = model.predict_proba(X)
    path = out / "predictions.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + [f"p_{c}" for c in model.class_names] + ["predicted"])
        for i, p in enumerate(probs):
            w.writerow([i] + [repr(float(v)) for v in p] + [model.class_names[int(p.argmax())]])
    man.record(out, [path])
    return {"n": int(X.shape[0]), "predictions": str(path)}


def read_search_space(path) -> dict[str, tuple[float, float, str]]:
    """Lines of ``key = low high [linear|log]``."""
    space = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(None, f"cannot read search space {path}: {exc}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition("=")
        key = canonical_key(key)
        parts = rest.split()
        if _KEY_TO_FIELD.get(key, key) not in _FIELD_TYPES or len(parts) not in (2, 3):
            raise ConfigError(key, f"line {n}: expected 'key = low high [linear|log]'")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError(key, f"line {n}: bounds must be numbers") from None
        scale = parts[2] if len(parts) == 3 else "linear"
        if scale not in ("linear", "log") or not lo <= hi or (scale == "log" and lo <= 0):
            raise ConfigError(key, f"line {n}: invalid range {lo}..{hi} ({scale})")
        space[key] = (lo, hi, scale)
    if not space:
        raise ConfigError(None, "search space is empty")
    return space


def sample_config(base: RunConfig, space, rng: np.random.Generator) -> RunConfig:
    changes = {}
    for key, (lo, hi, scale) in sorted(space.items()):
        u = rng.uniform(np.log(lo), np.log(hi)) if scale == "log" else rng.uniform(lo, hi)
        v = float(np.exp(u)) if scale == "log" else float(u)
        if _FIELD_TYPES[_KEY_TO_FIELD.get(key, key)].startswith("int"):
            v = int(round(v))
        changes[key] = v
    return base.replace(**changes)


def cmd_search(cfg: RunConfig, args, out: Path, man: RunManifest) -> dict:
    if args.trials < 1:
        raise ConfigError("trials", "must be >= 1")
    space = read_search_space(args.space)
    d = load_dataset(cfg)
    man.dataset = d.fingerprint()
    rng = np.random.default_rng([cfg.seed, 0x5EA7C])
    trials = []
    for t in range(args.trials):
        tc = sample_config(cfg, space, rng)
        start = time.perf_counter()
        res = cross_validate(d, tc.pretrain_config(), tc.transformer_config(), tc.folds, tc.seed)
        trials.append({"trial": t, "objective": res.mean, "std": res.std, "config": tc,
                       "seconds": time.perf_counter() - start})
    best = max(trials, key=lambda r: (r["objective"], -r["trial"]))
    log = out / "trials.csv"
    keys = sorted(space)
    with log.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "objective", "std"] + keys)
        for r in trials:
            items = r["config"].to_items()
            w.writerow([r["trial"], repr(r["objective"]), repr(r["std"])] + [items[k] for k in keys])
    (out / "best.cfg").write_text(best["config"].to_text())
    obj = [r["objective"] for r in trials]
    summary = {"n_trials": len(trials), "best_trial": best["trial"], "min": min(obj), "mean": statistics.fmean(obj),
               "median": statistics.median(obj), "max": max(obj)}
    (out / "search_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"trial_seconds": [r["seconds"] for r in trials]}, indent=2) + "\n")
    man.record(out, [log, out / "best.cfg", out / "search_summary.json"])
    return summary


def cmd_turing_export(cfg: RunConfig, args, out: Path, man: RunManifest) -> dict:
    model = load_model(args.model)
    X, labels, d = aligned_dataset(cfg, model)
    man.dataset = d.fingerprint()
    path = export_turing_sheet(model, X, labels, out / "turing_sheet.csv", args.n_max, cfg.seed,
                               model.feature_names, model.class_names)
    man.record(out, [path])
    return {"sheet": str(path)}


def cmd_turing_score(cfg: RunConfig, args, out: Path, man: RunManifest) -> dict:
    try:
        score = score_turing_sheet(args.sheet)
    except OSError as exc:
        raise DataError(f"cannot read {args.sheet}: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    path = out / "turing_score.json"
    path.write_text(json.dumps(score.to_dict(), indent=2, sort_keys=True) + "\n")
    man.record(out, [path])
    return score.to_dict()


COMMANDS = {
    "pretrain": cmd_pretrain, "finetune": cmd_finetune, "cv": cmd_cv, "predict": cmd_predict,
    "diagnose": cmd_diagnose, "search": cmd_search, "turing-export": cmd_turing_export,
    "turing-score": cmd_turing_score,
}


# -- argument handling --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="key = value config file or a bundled preset name")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--label", help="label column name or index")
    g.add_argument("--data", help="dataset CSV or synthetic:... description")
    g.add_argument("--folds", help="number of CV folds")
    g.add_argument("--threads", type=int, help=f"BLAS threads (default ${THREADS_ENV})")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    p = argparse.ArgumentParser(prog="zayan", description="Feature-level contrastive pretraining and "
                                "Transformer classification for tabular data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="contrastive pretraining; writes encoder and Z")
    ft = sub.add_parser("finetune", parents=[common], help="train the classifier; writes a model bundle")
    ft.add_argument("--pretrained", help="directory written by 'pretrain' (otherwise pretrain first)")
    sub.add_parser("cv", parents=[common], help="k-fold cross-validation with report")
    pr = sub.add_parser("predict", parents=[common], help="probabilities for a feature CSV")
    pr.add_argument("--model", required=True)
    dg = sub.add_parser("diagnose", parents=[common], help="run selected diagnostics on labelled data")
    dg.add_argument("--model", required=True)
    dg.add_argument("--all", action="store_true", help="every section")
    for flag in FLAG_SECTIONS:
        dg.add_argument(f"--{flag.replace('_', '-')}", dest=flag, action="store_true")
    dg.add_argument("--topk", metavar="K,K,...", help="top-k accuracy for these k")
    dg.add_argument("--positive-class", type=int, default=0, help="class index for triage")
    se = sub.add_parser("search", parents=[common], help="random search over config ranges")
    se.add_argument("--space", required=True, help="lines of 'key = low high [linear|log]'")
    se.add_argument("--trials", type=int, default=10)
    te = sub.add_parser("turing-export", parents=[common], help="write a human labelling sheet")
    te.add_argument("--model", required=True)
    te.add_argument("--n-max", type=int, default=50)
    ts = sub.add_parser("turing-score", parents=[common], help="score a filled labelling sheet")
    ts.add_argument("--sheet", required=True)
    return p


def resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(None, f"--set expects KEY=VALUE, got {item!r}")
        overrides[k.strip()] = v.strip()
    for key in ("seed", "out", "label", "data", "folds"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = str(v)
    if args.config:
        return load_config(config_path(args.config), overrides)
    return parse_text("", overrides)


def config_path(name: str) -> Path:
    """A file path, or the name of a bundled preset such as ``smoke``."""
    p = Path(name)
    if p.exists() or p.suffix:
        return p
    preset = resources.files("zayan.presets") / f"{name}.cfg"
    return Path(str(preset)) if preset.is_file() else p


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(THREADS_ENV, f"expected an integer, got {env!r}") from None
    return None


def _fail(code: int, exc: BaseException, command: str | None) -> int:
    record = {"status": "error", "exit_code": code, "error": type(exc).__name__, "message": str(exc),
              "command": command}
    key = getattr(exc, "key", None)
    if key:
        record["key"] = key
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        n_threads = _threads(args)
        if n_threads is not None and n_threads < 1:
            raise ConfigError("threads", "must be >= 1")
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        man = RunManifest(args.command, cfg.hash(), {}, started=_now())
        (out / "config.cfg").write_text(cfg.to_text(exclude=("out",)))
        man.record(out, [out / "config.cfg"])
        if n_threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=n_threads):
                result = COMMANDS[args.command](cfg, args, out, man)
        else:
            result = COMMANDS[args.command](cfg, args, out, man)
        man.write(out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, args.command)
    except (DataError, CheckpointError, FileNotFoundError, OSError) as exc:
        return _fail(EXIT_DATA, exc, args.command)
    except (NonFiniteError, PretrainError, FinetuneError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, exc, args.command)
    print(json.dumps({"status": "ok", "command": args.command, "result": result, "out": str(out)},
                     sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
