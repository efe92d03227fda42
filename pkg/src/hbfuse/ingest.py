"""Heartbeat datasets: CSV loading, AAMI labels, SMOTE and stratified splits.

Beats are held column-wise in a :class:`HeartbeatSet` (one ``(n, L)`` sample
matrix plus an ``(n,)`` label vector) rather than as a list of objects; single
beats are available through indexing.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MITBIH_CLASSES = ("N", "S", "V", "F", "Q")
PTB_CLASSES = ("normal", "MI")

# MIT-BIH annotation symbols grouped into the AAMI EC57 superclasses.
AAMI_SYMBOLS = {
    "N": ("N", "L", "R", "e", "j"),
    "S": ("A", "a", "J", "S"),
    "V": ("V", "E"),
    "F": ("F",),
    "Q": ("/", "f", "Q"),
}
AAMI_NAMES = {
    "N": ("Normal", "Left/Right bundle branch block", "Atrial escape", "Nodal escape"),
    "S": ("Atrial Premature", "Aberrant atrial premature", "Nodal premature",
          "Supra-ventricular premature"),
    "V": ("Premature ventricular contraction", "Ventricular escape"),
    "F": ("Fusion of ventricular and normal",),
    "Q": ("Paced", "Fusion of paced and normal", "Unclassifiable"),
}

# Training-set class sizes of the standardized MIT-BIH release and the
# post-SMOTE targets used for the full-scale experiments.
MITBIH_TRAIN_COUNTS = {"N": 72471, "S": 2223, "V": 5788, "F": 641, "Q": 6431}
MITBIH_SMOTE_TARGETS = {"N": 72471, "S": 30000, "V": 20000, "F": 20000, "Q": 10000}
MITBIH_TEST_SIZE = 21892
PTB_SPLIT_SIZES = (11641, 2911)

VALUE_TOL = 1e-6


class DataError(ValueError):
    """Raised for malformed or out-of-range dataset content."""


def aami_category(annotation: str) -> str:
    """Map a beat annotation (MIT-BIH symbol or descriptive name) to N/S/V/F/Q."""
    for cat in MITBIH_CLASSES:
        if annotation in AAMI_SYMBOLS[cat]:
            return cat
    lowered = annotation.strip().lower()
    for cat in MITBIH_CLASSES:
        if any(lowered == name.lower() for name in AAMI_NAMES[cat]):
            return cat
    raise KeyError(f"no AAMI category for annotation {annotation!r}")


class Heartbeat(NamedTuple):
    samples: np.ndarray
    label: int


@dataclass
class HeartbeatSet:
    samples: np.ndarray
    labels: np.ndarray
    class_names: tuple = MITBIH_CLASSES

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise DataError(f"samples must be 2-D, got shape {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise DataError("labels must be a vector with one entry per beat")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __getitem__(self, i) -> Heartbeat:
        return Heartbeat(self.samples[i], int(self.labels[i]))

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, index) -> "HeartbeatSet":
        return HeartbeatSet(self.samples[index], self.labels[index], self.class_names)

    def digest(self) -> str:
        """SHA-256 over samples and labels; identifies a split in reports."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.samples, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


@dataclass
class DatasetSplit:
    train: HeartbeatSet
    test: HeartbeatSet
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.train.num_classes


def load_csv(path, expected_len: int = 187, num_classes: int = 5,
             class_names: Sequence[str] | None = None) -> HeartbeatSet:
    """Read one heartbeat per line: ``expected_len`` samples, then a label.

    Values outside [0, 1] (beyond 1e-6) are rejected rather than clamped.
    Row indices in error messages are zero-based.
    """
    if class_names is None:
        class_names = MITBIH_CLASSES if num_classes == 5 else (
            PTB_CLASSES if num_classes == 2 else tuple(str(i) for i in range(num_classes)))
    ncols = expected_len + 1
    rows, labels = [], []
    with open(path, "r") as fh:
        for idx, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != ncols:
                raise DataError(f"row {idx}: expected {ncols} columns, got {len(fields)}")
            try:
                values = np.array(fields, dtype=np.float64)
            except ValueError:
                raise DataError(f"row {idx}: non-numeric field") from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"row {idx}: non-finite value")
            lab = values[-1]
            if lab != np.round(lab) or not 0 <= lab < num_classes:
                raise DataError(f"row {idx}: label {lab!r} outside [0, {num_classes})")
            x = values[:-1]
            if x.min() < -VALUE_TOL or x.max() > 1 + VALUE_TOL:
                raise DataError(f"row {idx}: sample value outside [0, 1]")
            rows.append(x)
            labels.append(int(lab))
    samples = np.array(rows).reshape(len(rows), expected_len)
    return HeartbeatSet(samples, np.array(labels, dtype=np.int64), tuple(class_names))


def save_csv(data: HeartbeatSet, path) -> None:
    """Write ``data`` in the format read by :func:`load_csv` (lossless repr)."""
    with open(path, "w") as fh:
        for x, y in zip(data.samples, data.labels):
            fh.write(",".join(repr(float(v)) for v in x))
            fh.write(f",{int(y)}\n")


def class_counts(data: HeartbeatSet) -> dict:
    """Per-class beat counts keyed by class name (zero for absent classes)."""
    counts = np.bincount(data.labels, minlength=data.num_classes)
    return {name: int(counts[i]) for i, name in enumerate(data.class_names)}


def _resolve_targets(data: HeartbeatSet, targets: Mapping) -> np.ndarray:
    current = np.bincount(data.labels, minlength=data.num_classes)
    out = current.copy()
    for key, value in targets.items():
        cid = data.class_names.index(key) if isinstance(key, str) else int(key)
        out[cid] = int(value)
    return out


def nearest_neighbors(points: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    """Indices of the ``k`` nearest Euclidean neighbors of every row (self excluded).

    Brute force in row chunks; ties resolve to the lower index.
    """
    n = points.shape[0]
    sq = np.einsum("ij,ij->i", points, points)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * points[start:stop] @ points.T
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def smote(data: HeartbeatSet, targets: Mapping, k: int = 5, seed: int = 0,
          return_log: bool = False):
    """Upsample classes to ``targets`` by SMOTE interpolation.

    Each synthetic beat is ``x + u * (x_nn - x)`` with ``x`` a random class
    member, ``x_nn`` one of its ``k`` nearest same-class neighbors and
    ``u ~ U[0, 1]``. Synthetic beats are appended after the originals, class by
    class. Each class draws from its own stream ``SeedSequence([seed, class])``.

    With ``return_log`` the result is ``(data, log)`` where ``log`` maps class
    id to ``(base_index, neighbor_index, u)`` arrays indexing ``data``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    want = _resolve_targets(data, targets)
    have = np.bincount(data.labels, minlength=data.num_classes)
    for cid in range(data.num_classes):
        if want[cid] < have[cid]:
            raise DataError(f"class {data.class_names[cid]}: target {want[cid]} "
                            f"below current count {have[cid]}")
        if want[cid] > have[cid] and have[cid] <= k:
            raise DataError(f"class {data.class_names[cid]}: {have[cid]} members, "
                            f"need more than k={k} to synthesize")
    new_x, new_y, log = [data.samples], [data.labels], {}
    for cid in range(data.num_classes):
        extra = int(want[cid] - have[cid])
        if extra == 0:
            continue
        members = np.flatnonzero(data.labels == cid)
        pts = data.samples[members]
        nbrs = nearest_neighbors(pts, k)
        rng = np.random.default_rng(np.random.SeedSequence([seed, cid]))
        base = rng.integers(0, len(members), size=extra)
        slot = rng.integers(0, k, size=extra)
        u = rng.random(extra)
        partner = nbrs[base, slot]
        synth = pts[base] + u[:, None] * (pts[partner] - pts[base])
        np.clip(synth, 0.0, 1.0, out=synth)
        new_x.append(synth)
        new_y.append(np.full(extra, cid, dtype=np.int64))
        log[cid] = (members[base], members[partner], u)
        logger.info("smote: class %s %d -> %d (k=%d, seed=%d)",
                    data.class_names[cid], have[cid], want[cid], k, seed)
    out = HeartbeatSet(np.concatenate(new_x), np.concatenate(new_y), data.class_names)
    return (out, log) if return_log else out


def stratified_subsample(data: HeartbeatSet, per_class_cap: int, seed: int = 0) -> HeartbeatSet:
    """Keep at most ``per_class_cap`` uniformly chosen beats per class (original order)."""
    if per_class_cap < 1:
        raise ValueError("per_class_cap must be >= 1")
    rng = np.random.default_rng(seed)
    keep = []
    for cid in range(data.num_classes):
        members = np.flatnonzero(data.labels == cid)
        if len(members) > per_class_cap:
            members = rng.choice(members, size=per_class_cap, replace=False)
        keep.append(members)
    return data.subset(np.sort(np.concatenate(keep)))


def stratified_split(data: HeartbeatSet, test_fraction: float = 0.2, seed: int = 0):
    """Seeded stratified split into ``(train, test)``.

    The test size is ``ceil(test_fraction * n)``, distributed over classes by
    largest remainder (ties go to the lower class id).
    """
    n = len(data)
    counts = np.bincount(data.labels, minlength=data.num_classes)
    n_test = int(np.ceil(test_fraction * n - 1e-9))
    quota = test_fraction * counts
    per_class = np.floor(quota).astype(np.int64)
    remainder = quota - per_class
    order = np.argsort(-remainder, kind="stable")
    for cid in order[: n_test - per_class.sum()]:
        per_class[cid] += 1
    rng = np.random.default_rng(seed)
    test_idx = []
    for cid in range(data.num_classes):
        members = np.flatnonzero(data.labels == cid)
        test_idx.append(rng.choice(members, size=per_class[cid], replace=False))
    test_idx = np.sort(np.concatenate(test_idx))
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    return data.subset(~mask), data.subset(mask)


def parse_targets(text: str) -> dict:
    """Parse ``"N=72471,S=30000"`` into ``{"N": 72471, "S": 30000}``."""
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, value = part.partition("=")
        out[name.strip()] = int(value)
    return out


def load_mitbih(data_dir) -> DatasetSplit:
    """The standardized MIT-BIH train/test CSV pair (``mitbih_train.csv``, ``mitbih_test.csv``)."""
    data_dir = Path(data_dir)
    train = load_csv(data_dir / "mitbih_train.csv", 187, 5, MITBIH_CLASSES)
    test = load_csv(data_dir / "mitbih_test.csv", 187, 5, MITBIH_CLASSES)
    return DatasetSplit(train, test, meta={"dataset": "mitbih"})


def load_ptb(data_dir, seed: int = 0) -> DatasetSplit:
    """PTB: pre-split ``ptbdb_train.csv``/``ptbdb_test.csv`` if present, else an
    80/20 stratified split of ``ptbdb_normal.csv`` + ``ptbdb_abnormal.csv``."""
    data_dir = Path(data_dir)
    if (data_dir / "ptbdb_train.csv").exists():
        train = load_csv(data_dir / "ptbdb_train.csv", 187, 2, PTB_CLASSES)
        test = load_csv(data_dir / "ptbdb_test.csv", 187, 2, PTB_CLASSES)
        return DatasetSplit(train, test, seed, {"dataset": "ptb"})
    normal = load_csv(data_dir / "ptbdb_normal.csv", 187, 2, PTB_CLASSES)
    abnormal = load_csv(data_dir / "ptbdb_abnormal.csv", 187, 2, PTB_CLASSES)
    both = HeartbeatSet(np.concatenate([normal.samples, abnormal.samples]),
                        np.concatenate([normal.labels, abnormal.labels]), PTB_CLASSES)
    train, test = stratified_split(both, 0.2, seed)
    return DatasetSplit(train, test, seed, {"dataset": "ptb"})
