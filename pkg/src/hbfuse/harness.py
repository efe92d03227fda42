"""Metrics, pipeline orchestration, inference benchmarking and reports.

Pipelines:

``gaf``, ``rp``, ``mtf``
    one CNN on one encoding, softmax decision.
``mif``
    one CNN on the stacked three-channel image, softmax decision.
``concat``, ``avg``, ``mff``
    one CNN per encoding, penultimate features fused (concatenation,
    unit-weight sum, gated fusion) and classified by a linear SVM.

:func:`run_pipelines` shares the encodings and the three single-modality
networks between pipelines of the same run, so asking for several ids at
once costs no more training than the most expensive one.
"""
from __future__ import annotations

import contextlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import encode as enc
from . import fusion, neuralnet, svm
from .ingest import DatasetSplit, HeartbeatSet, smote, stratified_split, stratified_subsample

logger = logging.getLogger(__name__)

PIPELINES = ("gaf", "rp", "mtf", "concat", "avg", "mif", "mff")
SINGLE = ("gaf", "rp", "mtf")
FEATURE_FUSION = {"concat": "concat", "avg": "avg", "mff": "gfn"}
# each network's seed depends only on its modality, not on which pipelines run
NET_SEED_OFFSET = {"gaf": 101, "rp": 202, "mtf": 303, "mif": 404}


class PipelineError(RuntimeError):
    pass


# -- metrics ---------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_labels(cls, y_true, y_pred, num_classes: int) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        flat = np.bincount(y_true * num_classes + y_pred, minlength=num_classes ** 2)
        return cls(flat.reshape(num_classes, num_classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class Metrics:
    accuracy: float
    precision: list
    recall: list
    macro_precision: float
    macro_recall: float
    flags: list


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, one-vs-rest precision/recall per class and their macro means.

    A zero denominator yields 0 for that metric and a flag such as
    ``"precision[3]"``.
    """
    c = cm.counts.astype(np.float64)
    if c.size == 0 or cm.total == 0:
        raise ValueError("metrics need a non-empty confusion matrix")
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    actual = c.sum(axis=1)
    flags = [f"precision[{i}]" for i in np.flatnonzero(predicted == 0)]
    flags += [f"recall[{i}]" for i in np.flatnonzero(actual == 0)]
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    return Metrics(float(tp.sum() / c.sum()), precision.tolist(), recall.tolist(),
                   float(precision.mean()), float(recall.mean()), flags)


# -- configuration -----------------------------------------------------------

@dataclass
class PipelineConfig:
    image_size: int = 32
    rp_mode: str = "grayscale"
    rp_lambda: str = "p10"
    mtf_bins: int = 10
    conv_channels: tuple = (16, 32, 32)
    feature_width: int = 512
    epochs: int = 10
    patience: int = 5
    learn_rate: float = 0.005
    momentum: float = 0.9
    drop_factor: float = 0.5
    drop_period: int = 10
    l2: float = 0.004
    batch_size: int = 128
    val_fraction: float = 0.1
    svm_lambdas: tuple = (1e-4,)
    svm_epochs: int = 20
    hb_mode: str = "1d"
    hb_c: float = 1.0
    bench_samples: int = 32
    bench_reps: int = 3
    seed: int = 7

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.svm_lambdas = tuple(float(v) for v in self.svm_lambdas)

    def encoder_config(self) -> enc.EncoderConfig:
        return enc.EncoderConfig(rp=enc.RpConfig.from_spec(self.rp_mode, self.rp_lambda),
                                 mtf=enc.MtfConfig(self.mtf_bins))

    def train_config(self, seed: int) -> neuralnet.TrainConfig:
        return neuralnet.TrainConfig(
            momentum=self.momentum, initial_learn_rate=self.learn_rate,
            learn_rate_drop_factor=self.drop_factor, learn_rate_drop_period=self.drop_period,
            l2_regularization=self.l2, mini_batch_size=self.batch_size, epochs=self.epochs,
            patience=self.patience, seed=seed)

    def architecture(self, in_channels: int, num_classes: int) -> neuralnet.CnnArchitecture:
        return neuralnet.CnnArchitecture(in_channels=in_channels, input_size=self.image_size,
                                         conv_channels=self.conv_channels,
                                         feature_width=self.feature_width,
                                         num_classes=num_classes)

    def kernel(self) -> fusion.HighBoostKernel:
        return fusion.HighBoostKernel(self.hb_c, self.hb_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["svm_lambdas"] = list(self.svm_lambdas)
        return d

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from string or typed values; unknown keys raise."""
        kinds = {f.name: f.type for f in fields(cls)}
        default = cls()
        out = {}
        for key, value in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise KeyError(f"unknown pipeline config key {key!r}")
            current = getattr(default, key)
            if isinstance(current, tuple):
                if isinstance(value, str):
                    value = [v for v in value.replace(",", " ").split() if v]
                value = tuple(type(current[0])(v) for v in value)
            elif not isinstance(value, type(current)):
                value = type(current)(value)
            out[key] = value
        return cls(**out)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        """Read ``key = value`` lines (``#`` comments, blank lines ignored)."""
        values = parse_config_file(path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)


def parse_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


DESK = dict(image_size=32, epochs=10)
FULL = dict(image_size=64, epochs=30)


@contextlib.contextmanager
def thread_limit(n=None):
    """Cap BLAS threads at ``n`` or ``$HBFUSE_THREADS`` when set."""
    n = n or os.environ.get("HBFUSE_THREADS")
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=int(n)):
        yield


def desk_split(split: DatasetSplit, train_cap: int = 2000, test_cap: int = 400,
               seed: int = 0, balance: bool = True, k: int = 5) -> DatasetSplit:
    """Stratified per-class caps; with ``balance``, SMOTE lifts every training
    class that is below the cap up to it (the test side is only capped)."""
    train = stratified_subsample(split.train, train_cap, seed)
    if balance:
        counts = np.bincount(train.labels, minlength=train.num_classes)
        targets = {i: train_cap for i in range(train.num_classes) if 0 < counts[i] < train_cap}
        train = smote(train, targets, k=k, seed=seed)
    test = stratified_subsample(split.test, test_cap, seed + 1)
    meta = {**split.meta, "train_cap": train_cap, "test_cap": test_cap, "smote_k": k,
            "balanced": balance}
    return DatasetSplit(train, test, seed, meta)


# -- inference chains ----------------------------------------------------------

@dataclass
class InferenceChain:
    """Raw beats in, class ids out: encode, CNN(s), optional fusion + SVM."""
    kind: str
    encoder: enc.EncoderConfig
    image_size: int
    cnns: dict
    svm_model: svm.SvmModel | None = None
    kernel: fusion.HighBoostKernel = fusion.HighBoostKernel()

    def _images(self, beats):
        return enc.encode_batch(beats, self.encoder, self.image_size)

    def predict(self, beats) -> np.ndarray:
        beats = np.atleast_2d(np.asarray(beats, dtype=np.float64))
        if self.kind in SINGLE:
            images = encode_channel(beats, self.kind, self.encoder, self.image_size)
            return self.cnns[self.kind].predict(images[:, None])
        images = self._images(beats)
        if self.kind == "mif":
            return self.cnns["mif"].predict(images)
        feats = [neuralnet.extract_features(self.cnns[m], images[:, i:i + 1])
                 for i, m in enumerate(SINGLE)]
        fused = fusion.fuse(FEATURE_FUSION[self.kind], *feats, kernel=self.kernel)
        return self.svm_model.predict(fused)


def encode_channel(beats, which: str, cfg: enc.EncoderConfig, size: int) -> np.ndarray:
    """Encode ``(n, L)`` beats with a single encoder to ``(n, size, size)`` float32."""
    fn = {"gaf": lambda s: enc.gaf(s, cfg.gaf), "rp": lambda s: enc.rp(s, cfg.rp),
          "mtf": lambda s: enc.mtf(s, cfg.mtf)}[which]
    out = np.empty((len(beats), size, size), dtype=np.float32)
    for i, x in enumerate(beats):
        out[i] = enc.resize_bilinear(fn(enc.normalize01(x, cfg.gaf.degenerate_value)), size)
    return out


@dataclass
class BenchResult:
    us_per_sample: float
    rep_seconds: list
    samples: int


def bench_inference(chain, samples, reps: int = 3, warmup: int = 1) -> BenchResult:
    """Median per-sample latency (µs) classifying beats one at a time.

    ``chain`` is anything with ``predict(beats)``; each timed repetition runs
    it once per sample.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    for x in samples[:warmup]:
        chain.predict(x[None])
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for x in samples:
            chain.predict(x[None])
        times.append(time.perf_counter() - t0)
    per = float(np.median(times)) / max(len(samples), 1)
    return BenchResult(per * 1e6, times, len(samples))


# -- reports -------------------------------------------------------------------

@dataclass
class ExperimentReport:
    pipeline: str
    dataset: str
    seed: int
    class_names: list
    confusion: list
    accuracy: float
    precision: list
    recall: list
    macro_precision: float
    macro_recall: float
    flags: list
    train_hash: str
    test_hash: str
    config: dict
    details: dict = field(default_factory=dict)
    inference_us: float | None = None
    timings: dict = field(default_factory=dict)

    # fields that depend on wall-clock time
    VOLATILE = ("inference_us", "timings")

    def to_dict(self, deterministic: bool = False) -> dict:
        d = asdict(self)
        if deterministic:
            for key in self.VOLATILE:
                d.pop(key)
        return d

    @classmethod
    def from_dict(cls, d) -> "ExperimentReport":
        return cls(**d)

    @property
    def confusion_matrix(self) -> ConfusionMatrix:
        return ConfusionMatrix(np.array(self.confusion))


def _row(r: ExperimentReport) -> str:
    speed = f"{r.inference_us:10.1f}" if r.inference_us is not None else f"{'-':>10}"
    return (f"{r.pipeline:<8} {100 * r.accuracy:9.2f} {100 * r.macro_precision:10.2f} "
            f"{100 * r.macro_recall:8.2f} {speed}")


def format_table(reports) -> str:
    """Text table (percent) sorted by accuracy, highest first."""
    reports = sorted(reports, key=lambda r: (-r.accuracy, r.pipeline))
    head = f"{'Pipeline':<8} {'Accuracy':>9} {'Precision':>10} {'Recall':>8} {'Speed(us)':>10}"
    lines = [head, "-" * len(head)] + [_row(r) for r in reports]
    if reports:
        r = reports[0]
        lines.append("")
        lines.append(f"dataset={r.dataset} seed={r.seed} test_hash={r.test_hash[:12]}")
    return "\n".join(lines) + "\n"


def emit_report(reports, out_dir, formats=("txt", "json")) -> list:
    """Write ``report.txt`` (table) and/or ``report.json`` (round-trippable list)."""
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    written = []
    if "txt" in formats:
        p = out_dir / "report.txt"
        p.write_text(format_table(reports))
        written.append(p)
    if "json" in formats:
        p = out_dir / "report.json"
        p.write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True))
        written.append(p)
    return written


def load_reports(path) -> list:
    return [ExperimentReport.from_dict(d) for d in json.loads(Path(path).read_text())]


# -- orchestration -------------------------------------------------------------

@contextlib.contextmanager
def _stage(name, timings):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"stage {name!r} failed: {exc}") from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def _validation_split(train: HeartbeatSet, fraction: float, seed: int):
    if fraction <= 0:
        return np.arange(len(train)), np.arange(0)
    idx = np.arange(len(train))
    tagged = HeartbeatSet(idx[:, None].astype(np.float64), train.labels, train.class_names)
    tr, va = stratified_split(tagged, fraction, seed)
    return tr.samples[:, 0].astype(np.int64), va.samples[:, 0].astype(np.int64)


def run_pipelines(pipeline_ids, split: DatasetSplit, config: PipelineConfig = PipelineConfig(),
                  bench: bool = True, progress=None) -> dict:
    """Run several pipelines on one split, sharing encodings and networks.

    Returns ``{pipeline_id: ExperimentReport}``. Everything except timings and
    latency is a deterministic function of ``(split, config)``.
    """
    ids = list(dict.fromkeys(pipeline_ids))
    for pid in ids:
        if pid not in PIPELINES:
            raise PipelineError(f"unknown pipeline {pid!r}; choose from {PIPELINES}")
    say = progress or (lambda msg: logger.info(msg))
    timings: dict = {}
    ncls = split.num_classes
    seed = config.seed
    ecfg = config.encoder_config()
    kernel = config.kernel()

    with thread_limit():
        with _stage("encode", timings):
            say(f"encoding {len(split.train)} train / {len(split.test)} test beats")
            x_train = enc.encode_batch(split.train.samples, ecfg, config.image_size)
            x_test = enc.encode_batch(split.test.samples, ecfg, config.image_size)
        y_train, y_test = split.train.labels, split.test.labels
        tr, va = _validation_split(split.train, config.val_fraction, seed)

        needed = {m for m in SINGLE if m in ids}
        if any(p in FEATURE_FUSION for p in ids):
            needed |= set(SINGLE)
        if "mif" in ids:
            needed.add("mif")

        cnns = {}
        needed = [m for m in (*SINGLE, "mif") if m in needed]
        for m in needed:
            with _stage(f"train_{m}", timings):
                chans = slice(None) if m == "mif" else slice(SINGLE.index(m),
                                                               SINGLE.index(m) + 1)
                arch = config.architecture(3 if m == "mif" else 1, ncls)
                say(f"training {m} network ({arch.num_params()} parameters)")
                cnns[m] = neuralnet.train(
                    x_train[tr][:, chans], y_train[tr], config.train_config(seed + NET_SEED_OFFSET[m]),
                    arch, val_images=x_train[va][:, chans], val_labels=y_train[va],
                    progress=lambda msg, m=m: say(f"  [{m}] {msg}"))

        preds, details, svms = {}, {}, {}
        for m in needed:
            chans = slice(None) if m == "mif" else slice(SINGLE.index(m), SINGLE.index(m) + 1)
            with _stage(f"predict_{m}", timings):
                preds[m] = cnns[m].predict(x_test[:, chans])
            details[m] = {"epochs_run": cnns[m].metadata["epochs_run"],
                          "num_params": cnns[m].metadata["num_params"],
                          "final_loss": cnns[m].metadata["final_loss"]}

        fusion_ids = [p for p in ids if p in FEATURE_FUSION]
        if fusion_ids:
            with _stage("features", timings):
                f_train = [neuralnet.extract_features(cnns[m], x_train[:, i:i + 1])
                           for i, m in enumerate(SINGLE)]
                f_test = [neuralnet.extract_features(cnns[m], x_test[:, i:i + 1])
                          for i, m in enumerate(SINGLE)]
            for pid in fusion_ids:
                with _stage(f"svm_{pid}", timings):
                    method = FEATURE_FUSION[pid]
                    fz_train = fusion.fuse(method, *f_train, kernel=kernel)
                    fz_test = fusion.fuse(method, *f_test, kernel=kernel)
                    model = svm.select_lambda(
                        fz_train[tr], y_train[tr], fz_train[va], y_train[va],
                        config.svm_lambdas, epochs=config.svm_epochs, seed=seed,
                        num_classes=ncls)
                    svms[pid] = model
                    preds[pid] = model.predict(fz_test)
                    details[pid] = {"svm_lambda": model.lam, "fused_dim": int(fz_train.shape[1]),
                                    "val_accuracy": model.metadata.get("val_accuracy")}

        reports = {}
        for pid in ids:
            cm = ConfusionMatrix.from_labels(y_test, preds[pid], ncls)
            met = metrics(cm)
            reports[pid] = ExperimentReport(
                pipeline=pid, dataset=split.meta.get("dataset", "unknown"), seed=seed,
                class_names=list(split.train.class_names), confusion=cm.counts.tolist(),
                accuracy=met.accuracy, precision=met.precision, recall=met.recall,
                macro_precision=met.macro_precision, macro_recall=met.macro_recall,
                flags=met.flags, train_hash=split.train.digest(), test_hash=split.test.digest(),
                config={**config.to_dict(), "split": {k: v for k, v in split.meta.items()}},
                details=details[pid])
            if bench and config.bench_samples > 0:
                chain = InferenceChain(pid, ecfg, config.image_size, cnns, svms.get(pid), kernel)
                with _stage(f"bench_{pid}", timings):
                    b = bench_inference(chain, split.test.samples[:config.bench_samples],
                                        config.bench_reps)
                reports[pid].inference_us = b.us_per_sample
        for r in reports.values():
            r.timings = dict(timings)
    return reports


def run_pipeline(pipeline_id: str, split: DatasetSplit,
                 config: PipelineConfig = PipelineConfig(), bench: bool = True) -> ExperimentReport:
    return run_pipelines([pipeline_id], split, config, bench)[pipeline_id]


def build_chains(split: DatasetSplit, config: PipelineConfig, kinds=("mif", "mff")) -> dict:
    """Train what the requested chains need and return ``{kind: InferenceChain}``."""
    ecfg = config.encoder_config()
    x_train = enc.encode_batch(split.train.samples, ecfg, config.image_size)
    y = split.train.labels
    cnns, svms = {}, {}
    need_single = any(k in SINGLE or k in FEATURE_FUSION for k in kinds)
    if need_single:
        for i, m in enumerate(SINGLE):
            cnns[m] = neuralnet.train(x_train[:, i:i + 1], y, config.train_config(config.seed + NET_SEED_OFFSET[m]),
                                      config.architecture(1, split.num_classes))
    if "mif" in kinds:
        cnns["mif"] = neuralnet.train(x_train, y, config.train_config(config.seed + NET_SEED_OFFSET["mif"]),
                                      config.architecture(3, split.num_classes))
    for k in kinds:
        if k in FEATURE_FUSION:
            feats = [neuralnet.extract_features(cnns[m], x_train[:, i:i + 1])
                     for i, m in enumerate(SINGLE)]
            fz = fusion.fuse(FEATURE_FUSION[k], *feats, kernel=config.kernel())
            svms[k] = svm.svm_train(fz, y, config.svm_lambdas[0], config.svm_epochs, config.seed,
                                    num_classes=split.num_classes)
    return {k: InferenceChain(k, ecfg, config.image_size, cnns, svms.get(k), config.kernel())
            for k in kinds}


def with_overrides(config: PipelineConfig, **kw) -> PipelineConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
