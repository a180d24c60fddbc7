"""Command-line front end: ``fhbsel <command> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 internal stage error.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import sklearn
from filelock import FileLock, Timeout

from . import __version__
from .bandselect import (
    ImportanceMethod,
    accuracy_vs_k_sweep,
    compute_importance,
    restrict_features,
    save_importance_csv,
    save_sweep_csv,
    top_k_bands,
    window_report,
)
from .classify import (
    CLASSIFIERS,
    evaluate,
    model_from_dict,
    model_to_dict,
    predict,
    train_named,
)
from .cluster import map_clusters_to_classes, save_kscan_csv, select_k
from .hsi_core import (
    ClassLabel,
    Dataset,
    DatasetFormatError,
    HsicFormatError,
    load_cube,
    nearest_band,
    save_cube,
    save_dataset_csv,
    trim_bands,
)
from .preprocess import NORMALIZERS, FeatureMatrix, augment_cubes, build_features, spatial_mean
from .synthesis import DEFAULT_TRIM, DEFAULT_WINDOWS, N_BANDS, SceneSpec, make_endmembers, synth_cube, sample_labels

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4

COMMANDS = ("synth", "pipeline", "scan-k", "rank-bands", "sweep", "train", "eval")

# fixed output names under --out
CUBES_DIR = "cubes"
DATASET_CSV = "dataset.csv"
MANIFEST_JSON = "manifest.json"
REPORT_JSON = "report.json"
KSCAN_CSV = "kscan.csv"
IMPORTANCE_CSV = "importance.csv"
SWEEP_CSV = "sweep.csv"
MODEL_JSON = "model.json"
EVAL_JSON = "eval.json"
LOCK_FILE = ".fhbsel.lock"

CLASSIFIER_PARAMS = {
    "boosted": {"rounds": int, "learning_rate": float, "max_depth": int},
    "svm": {"epochs": int, "reg": float},
}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "fhbsel-out"
    # directory written by ``synth``; None generates the scene in memory
    data_dir: Optional[str] = None
    scene: dict = field(default_factory=dict)
    trim: list = field(default_factory=lambda: list(DEFAULT_TRIM))
    normalize: object = "minmax"
    k_min: int = 2
    k_max: int = 8
    reference_nm: float = 840.0
    importance: str = "impurity"
    importance_trees: int = 100
    importance_depth: int = 3
    mi_bins: int = 16
    top_k: int = 30
    sweep_k: list = field(default_factory=lambda: [3, 10, 30])
    classifier: str = "boosted"
    classifier_params: dict = field(default_factory=dict)
    val_count: int = 34
    windows: list = field(default_factory=lambda: [list(w) for w in DEFAULT_WINDOWS])
    augment: bool = False
    crop_size: int = 24
    # model file for ``eval``; defaults to <out>/model.json
    model: Optional[str] = None

    def scene_spec(self) -> SceneSpec:
        return SceneSpec.from_dict({**self.scene, "seed": self.seed})

    def normalize_mode(self) -> str:
        return {True: "minmax", False: "none"}.get(self.normalize, self.normalize)

    def recorded(self) -> dict:
        """Every value that influences results (the output location does not)."""
        d = asdict(self)
        d.pop("out")
        d["scene"] = self.scene_spec().to_dict()
        d["normalize"] = self.normalize_mode()
        return d


def _fail(msg: str):
    raise ConfigError(msg)


def _int(name, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(f"{name} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(f"{name} must be >= {lo}, got {v}")
    return v


def _num(name, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"{name} must be a number, got {v!r}")
    return float(v)


def validate(cfg: RunConfig) -> RunConfig:
    """Check every field against the preconditions of the stage that uses it."""
    _int("seed", cfg.seed, 0)
    if not isinstance(cfg.out, str) or not cfg.out:
        _fail("out must be a non-empty path")
    if not isinstance(cfg.scene, dict):
        _fail("scene must be an object")
    if "seed" in cfg.scene:
        _fail("scene.seed is not allowed; the run seed drives generation")
    try:
        spec = cfg.scene_spec()
    except (TypeError, ValueError) as exc:
        _fail(f"scene: {exc}")
    if not (isinstance(cfg.trim, list) and len(cfg.trim) == 2):
        _fail("trim must be [leading, trailing]")
    lead, trail = (_int("trim", v, 0) for v in cfg.trim)
    bands = N_BANDS - lead - trail
    if bands < 1:
        _fail(f"trim {cfg.trim} leaves no bands")
    if not isinstance(cfg.normalize, (bool, str)) or cfg.normalize_mode() not in NORMALIZERS:
        _fail(f"normalize must be a flag or one of {NORMALIZERS}, got {cfg.normalize!r}")
    _int("k_min", cfg.k_min, 2)
    _int("k_max", cfg.k_max)
    if cfg.k_max <= cfg.k_min:
        _fail("k_max must exceed k_min")
    _num("reference_nm", cfg.reference_nm)
    try:
        ImportanceMethod(cfg.importance)
    except ValueError:
        _fail(f"importance must be one of {[m.value for m in ImportanceMethod]}, got {cfg.importance!r}")
    _int("importance_trees", cfg.importance_trees, 1)
    _int("importance_depth", cfg.importance_depth, 1)
    _int("mi_bins", cfg.mi_bins, 2)
    _int("top_k", cfg.top_k, 1)
    if not isinstance(cfg.sweep_k, list) or not cfg.sweep_k:
        _fail("sweep_k must be a non-empty list")
    for k in cfg.sweep_k:
        _int("sweep_k", k, 1)
    if cfg.classifier not in CLASSIFIERS:
        _fail(f"classifier must be one of {CLASSIFIERS}, got {cfg.classifier!r}")
    if not isinstance(cfg.classifier_params, dict):
        _fail("classifier_params must be an object")
    allowed = CLASSIFIER_PARAMS[cfg.classifier]
    for key, value in cfg.classifier_params.items():
        if key not in allowed:
            _fail(f"unknown {cfg.classifier} parameter {key!r}; allowed: {sorted(allowed)}")
        if allowed[key] is int:
            _int(f"classifier_params.{key}", value, 1)
        elif _num(f"classifier_params.{key}", value) <= 0:
            _fail(f"classifier_params.{key} must be > 0")
    lr = cfg.classifier_params.get("learning_rate", 0.1)
    if not 0 < lr <= 1:
        _fail("classifier_params.learning_rate must lie in (0, 1]")
    _int("val_count", cfg.val_count, 1)
    if not isinstance(cfg.windows, list):
        _fail("windows must be a list of [lo_nm, hi_nm]")
    for w in cfg.windows:
        if not (isinstance(w, list) and len(w) == 2) or not _num("windows", w[0]) < _num("windows", w[1]):
            _fail(f"window {w!r} must be [lo_nm, hi_nm] with lo < hi")
    spans = sorted(cfg.windows)
    if any(b[0] <= a[1] for a, b in zip(spans, spans[1:])):
        _fail("windows overlap")
    if not isinstance(cfg.augment, bool):
        _fail("augment must be true or false")
    _int("crop_size", cfg.crop_size, 1)
    if cfg.augment and cfg.normalize_mode() == "zscore":
        _fail("augment needs per-sample normalization (minmax or none)")
    for name in ("data_dir", "model"):
        v = getattr(cfg, name)
        if v is not None and not isinstance(v, str):
            _fail(f"{name} must be a path string")

    if cfg.data_dir is None:
        # the in-memory scene fixes sample and band counts up front
        n = sum(spec.samples_per_class)
        if cfg.val_count >= n - 1:
            _fail(f"val_count {cfg.val_count} leaves too few of {n} samples for training")
        if cfg.k_max > n:
            _fail(f"k_max {cfg.k_max} exceeds {n} samples")
        for name, k in [("top_k", cfg.top_k)] + [("sweep_k", k) for k in cfg.sweep_k]:
            if k > bands:
                _fail(f"{name} {k} exceeds the {bands} bands left after trimming")
        if cfg.augment and cfg.crop_size > spec.cube_edge:
            _fail(f"crop_size {cfg.crop_size} exceeds cube_edge {spec.cube_edge}")
    return cfg


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            _fail(f"cannot read config {path}: {exc}")
        except json.JSONDecodeError as exc:
            _fail(f"config {path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            _fail("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        _fail(f"unknown config key(s): {', '.join(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate(RunConfig(**raw))


# --------------------------------------------------------------------------
# data


@dataclass
class Samples:
    cubes: list
    labels: tuple
    sample_ids: tuple


def _stage(name: str):
    """Decorator tagging unexpected exceptions with the stage name."""
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except (ConfigError, DataError, StageError):
                raise
            except Exception as exc:  # noqa: BLE001
                raise StageError(name, exc) from exc
        return inner
    return wrap


def _generate(cfg: RunConfig, trim: Optional[tuple]) -> Samples:
    spec = cfg.scene_spec()
    library = make_endmembers(spec.min_gap, spec.seed, spec.windows)
    labels = sample_labels(spec)
    cubes, ids = [], []
    for i, label in enumerate(labels):
        cube = synth_cube(library, label, spec, [spec.seed, i])
        cubes.append(trim_bands(cube, *trim) if trim else cube)
        ids.append(f"{label.value}_{i:05d}")
    return Samples(cubes, tuple(labels), tuple(ids))


def _load_dir(cfg: RunConfig) -> Samples:
    root = Path(cfg.data_dir)
    try:
        manifest = json.loads((root / MANIFEST_JSON).read_text())
        entries = manifest["samples"]
        cubes = [trim_bands(load_cube(root / e["file"]), *cfg.trim) for e in entries]
        labels = tuple(ClassLabel(e["label"]) for e in entries)
        ids = tuple(str(e["id"]) for e in entries)
    except (OSError, KeyError, TypeError, ValueError, HsicFormatError, DatasetFormatError) as exc:
        raise DataError(f"load {root}: {exc}") from exc
    if not cubes:
        raise DataError(f"load {root}: manifest lists no samples")
    bands = cubes[0].bands
    n = len(cubes)
    for name, k in [("top_k", cfg.top_k)] + [("sweep_k", k) for k in cfg.sweep_k]:
        if k > bands:
            raise DataError(f"{name} {k} exceeds the {bands} bands in {root}")
    if cfg.val_count >= n - 1 or cfg.k_max > n:
        raise DataError(f"{n} samples in {root} are too few for val_count/k_max")
    return Samples(cubes, labels, ids)


def load_samples(cfg: RunConfig) -> Samples:
    if cfg.data_dir is None:
        return _generate(cfg, tuple(cfg.trim))
    return _load_dir(cfg)


def _split(n: int, val_count: int, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[val_count:]), np.sort(perm[:val_count])


@dataclass
class Ranked:
    features: FeatureMatrix
    scan: object
    pseudo: object
    report: object


@_stage("features")
def _features(cfg: RunConfig, samples: Samples) -> FeatureMatrix:
    return build_features(samples.cubes, cfg.normalize_mode(), samples.sample_ids)


@_stage("scan-k")
def _scan(cfg: RunConfig, feats: FeatureMatrix):
    return select_k(feats, cfg.k_min, cfg.k_max, cfg.seed)


@_stage("pseudo-label")
def _pseudo(cfg: RunConfig, scan, feats: FeatureMatrix):
    _, labels = scan.models[scan.chosen_k]
    if labels.k == 2:
        labels = map_clusters_to_classes(labels, feats, nearest_band(feats.wavelengths_nm, cfg.reference_nm))
    return labels


@_stage("importance")
def _importance(cfg: RunConfig, feats: FeatureMatrix, pseudo):
    return compute_importance(cfg.importance, feats, pseudo, cfg.seed,
                              cfg.importance_trees, cfg.importance_depth, cfg.mi_bins)


def rank(cfg: RunConfig, samples: Samples) -> Ranked:
    feats = _features(cfg, samples)
    scan = _scan(cfg, feats)
    pseudo = _pseudo(cfg, scan, feats)
    return Ranked(feats, scan, pseudo, _importance(cfg, feats, pseudo))


@_stage("split")
def _train_val(cfg: RunConfig, samples: Samples, feats: FeatureMatrix):
    tr, va = _split(feats.rows, cfg.val_count, cfg.seed)
    x_tr, y_tr = feats.take(tr), [samples.labels[i] for i in tr]
    if cfg.augment:
        extra = augment_cubes([samples.cubes[i] for i in tr], cfg.crop_size, cfg.seed)
        ids = [f"{feats.sample_ids[i]}_aug" for i in tr]
        aug = build_features(extra, cfg.normalize_mode(), ids)
        x_tr = FeatureMatrix(np.vstack([x_tr.values, aug.values]), x_tr.sample_ids + aug.sample_ids,
                             feats.wavelengths_nm)
        y_tr = y_tr + y_tr
    return (x_tr, y_tr), (feats.take(va), [samples.labels[i] for i in va])


@_stage("train")
def _train(cfg: RunConfig, train, bands):
    x, y = train
    return train_named(cfg.classifier, restrict_features(x, bands), y, seed=cfg.seed,
                       **cfg.classifier_params)


@_stage("evaluate")
def _evaluate(model, val, bands):
    x, y = val
    return evaluate(predict(model, restrict_features(x, bands)), y)


@_stage("sweep")
def _sweep(cfg: RunConfig, train, val, report):
    return accuracy_vs_k_sweep(train, val, report, cfg.sweep_k, cfg.classifier, cfg.seed,
                               **cfg.classifier_params)


# --------------------------------------------------------------------------
# output


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def versions() -> dict:
    return {
        "fhbsel": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "scikit-learn": sklearn.__version__,
        "scipy": scipy.__version__,
    }


def _bundle(model, bands, feats: FeatureMatrix) -> dict:
    return {
        "bands": list(bands),
        "wavelengths_nm": [float(feats.wavelengths_nm[b]) for b in bands],
        "model": model_to_dict(model),
    }


def _confusion_dict(cm, acc) -> dict:
    return {"tp": cm.tp, "tn": cm.tn, "fp": cm.fp, "fn": cm.fn, "total": cm.total, "accuracy": acc}


def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    samples = _generate(cfg, None)
    cube_dir = out / CUBES_DIR
    cube_dir.mkdir(exist_ok=True)
    entries = []
    for cube, label, sid in zip(samples.cubes, samples.labels, samples.sample_ids):
        name = f"{CUBES_DIR}/{sid}.hsic"
        save_cube(cube, out / name)
        entries.append({"id": sid, "label": label.value, "file": name})
    spectra = np.stack([spatial_mean(c).values for c in samples.cubes])
    save_dataset_csv(Dataset(spectra, samples.labels, samples.cubes[0].wavelengths_nm, samples.sample_ids),
                     out / DATASET_CSV, with_ids=True)
    spec = cfg.scene_spec()
    _dump_json({
        "seed": cfg.seed,
        "spec": spec.to_dict(),
        "windows": [list(w) for w in spec.windows],
        "bands": N_BANDS,
        "samples": entries,
        "versions": versions(),
    }, out / MANIFEST_JSON)
    print(f"seed {cfg.seed}: wrote {len(entries)} cubes to {cube_dir}")
    return {"cubes": len(entries)}


def cmd_scan_k(cfg: RunConfig, out: Path) -> dict:
    samples = load_samples(cfg)
    scan = _scan(cfg, _features(cfg, samples))
    save_kscan_csv(scan, out / KSCAN_CSV)
    print(f"chosen K={scan.chosen_k} (elbow {scan.elbow_k}, agreement {scan.agreement})")
    return {"chosen_k": scan.chosen_k}


def cmd_rank_bands(cfg: RunConfig, out: Path) -> dict:
    ranked = rank(cfg, load_samples(cfg))
    save_kscan_csv(ranked.scan, out / KSCAN_CSV)
    save_importance_csv(ranked.report, out / IMPORTANCE_CSV)
    top = top_k_bands(ranked.report, cfg.top_k)
    print(f"top-{cfg.top_k} bands: {top}")
    return {"top_k_bands": top}


def cmd_sweep(cfg: RunConfig, out: Path) -> dict:
    samples = load_samples(cfg)
    ranked = rank(cfg, samples)
    train, val = _train_val(cfg, samples, ranked.features)
    sweep = _sweep(cfg, train, val, ranked.report)
    save_kscan_csv(ranked.scan, out / KSCAN_CSV)
    save_importance_csv(ranked.report, out / IMPORTANCE_CSV)
    save_sweep_csv(sweep, out / SWEEP_CSV)
    for k, acc in zip(sweep.k_values, sweep.accuracies):
        print(f"k={k}: accuracy {acc:.4f}")
    return {"sweep": list(sweep.accuracies)}


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    samples = load_samples(cfg)
    ranked = rank(cfg, samples)
    train, _ = _train_val(cfg, samples, ranked.features)
    bands = top_k_bands(ranked.report, cfg.top_k)
    model = _train(cfg, train, bands)
    save_kscan_csv(ranked.scan, out / KSCAN_CSV)
    save_importance_csv(ranked.report, out / IMPORTANCE_CSV)
    _dump_json(_bundle(model, bands, ranked.features), out / MODEL_JSON)
    print(f"trained {cfg.classifier} on {len(train[1])} samples, {len(bands)} bands")
    return {}


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    path = Path(cfg.model) if cfg.model else out / MODEL_JSON
    try:
        bundle = json.loads(path.read_text())
        model = model_from_dict(bundle["model"])
        bands = [int(b) for b in bundle["bands"]]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"load model {path}: {exc}") from exc
    samples = load_samples(cfg)
    feats = _features(cfg, samples)
    if max(bands) >= feats.cols:
        raise DataError(f"model uses band {max(bands)} but data has {feats.cols} bands")
    _, val = _train_val(cfg, samples, feats)
    cm, acc = _evaluate(model, val, bands)
    _dump_json({"confusion": _confusion_dict(cm, acc), "model_file": str(path), "seed": cfg.seed},
               out / EVAL_JSON)
    print(f"validation accuracy {acc:.4f} on {cm.total} samples")
    return {"accuracy": acc}


def cmd_pipeline(cfg: RunConfig, out: Path) -> dict:
    samples = load_samples(cfg)
    ranked = rank(cfg, samples)
    feats, scan, report = ranked.features, ranked.scan, ranked.report
    train, val = _train_val(cfg, samples, feats)
    bands = top_k_bands(report, cfg.top_k)
    model = _train(cfg, train, bands)
    cm, acc = _evaluate(model, val, bands)
    sweep = _sweep(cfg, train, val, report)
    windows = [tuple(w) for w in cfg.windows]
    fractions = window_report(report, cfg.top_k, windows)

    pseudo_agreement = None
    if ranked.pseudo.class_map is not None:
        named = ranked.pseudo.as_classes()
        pseudo_agreement = float(np.mean([a is b for a, b in zip(named, samples.labels)]))

    result = {
        "accuracy": acc,
        "agreement": scan.agreement,
        "chosen_k": scan.chosen_k,
        "config": cfg.recorded(),
        "confusion": _confusion_dict(cm, acc),
        "elbow_k": scan.elbow_k,
        "importance_method": report.method.value,
        "kscan": [{"k": k, "inertia": i, "silhouette": None if np.isnan(s) else s}
                  for k, i, s in zip(scan.k_values, scan.inertias, scan.silhouettes)],
        "pseudo_label_agreement": pseudo_agreement,
        "samples": {"total": feats.rows, "train": len(train[1]), "val": len(val[1]),
                    "bands": feats.cols},
        "seeds": {"clustering": cfg.seed, "importance": cfg.seed, "scene": cfg.seed,
                  "split": cfg.seed, "classifier": cfg.seed},
        "sweep": [{"k": k, "accuracy": a} for k, a in zip(sweep.k_values, sweep.accuracies)],
        "top_k": [{"band": b, "wavelength_nm": float(feats.wavelengths_nm[b]), "score": float(report.scores[b])}
                  for b in bands],
        "versions": versions(),
        "window_fractions": {
            "windows": [list(w) for w in windows],
            "inside": list(fractions.inside),
            "combined": fractions.combined,
            "outside": fractions.outside,
        },
    }
    save_kscan_csv(scan, out / KSCAN_CSV)
    save_importance_csv(report, out / IMPORTANCE_CSV)
    save_sweep_csv(sweep, out / SWEEP_CSV)
    _dump_json(_bundle(model, bands, feats), out / MODEL_JSON)
    _dump_json(result, out / REPORT_JSON)
    print(f"K={scan.chosen_k} agreement={scan.agreement} top-{cfg.top_k} accuracy={acc:.4f} "
          f"in-window={fractions.combined:.2f}")
    return result


HANDLERS = {
    "synth": cmd_synth,
    "pipeline": cmd_pipeline,
    "scan-k": cmd_scan_k,
    "rank-bands": cmd_rank_bands,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fhbsel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    if cfg.data_dir is not None and not (Path(cfg.data_dir) / MANIFEST_JSON).is_file():
        print(f"error [data]: no {MANIFEST_JSON} in {cfg.data_dir}", file=sys.stderr)
        return EXIT_DATA
    try:
        out.mkdir(parents=True, exist_ok=True)
        with FileLock(str(out / LOCK_FILE), timeout=0):
            HANDLERS[args.command](cfg, out)
    except Timeout:
        print(f"error [lock]: another run holds {out / LOCK_FILE}", file=sys.stderr)
        return EXIT_STAGE
    except DataError as exc:
        print(f"error [data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.__cause__}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"error [write]: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
