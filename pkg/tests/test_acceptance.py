"""Acceptance gate. Each test records a PASS/FAIL line (printed in the terminal
summary) and then asserts.

Criteria 3 and 4 need the standardized MIT-BIH CSVs (``mitbih_train.csv``,
``mitbih_test.csv``) in ``$HBFUSE_DATA_DIR``; without them they fail.
Criterion 5 is the optional full-scale run, enabled with ``HBFUSE_FULL_RUN=1``.
"""
import contextlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from hbfuse import encode as enc
from hbfuse import fusion, harness, ingest, neuralnet
from hbfuse.harness import PipelineConfig
from hbfuse.synthetic import synth_set, synth_split


@contextlib.contextmanager
def criterion(num, title):
    notes = []
    try:
        yield notes
    except pytest.skip.Exception as exc:
        ACCEPTANCE[num] = f"SKIP  {title}: {exc}"
        raise
    except BaseException as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        ACCEPTANCE[num] = f"FAIL  {title}: {msg}"
        raise
    else:
        ACCEPTANCE[num] = f"PASS  {title}" + (f" ({'; '.join(notes)})" if notes else "")


def _mitbih_dir():
    d = os.environ.get("HBFUSE_DATA_DIR")
    if not d or not (Path(d) / "mitbih_train.csv").exists() \
            or not (Path(d) / "mitbih_test.csv").exists():
        pytest.fail("MIT-BIH CSVs not found: set HBFUSE_DATA_DIR to a directory holding "
                    "mitbih_train.csv and mitbih_test.csv", pytrace=False)
    return d


def test_criterion_1_encoder_oracles():
    with criterion(1, "encoder oracle suite") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        beats = np.concatenate([synth_set([100] * 5, 11).samples,
                                rng.random((500, 187))])
        beats[-1] = 0.0
        beats[-2] = 1.0
        assert len(beats) == 1000
        worst_form = worst_trip = worst_row = 0.0
        for s in beats:
            worst_form = max(worst_form, np.abs(enc.gaf_field(s) - enc.gaf_field_angular(s)).max())
            worst_trip = max(worst_trip, np.abs(enc.gaf_diagonal_invert(enc.gaf(s)) - s).max())
            r = enc.rp(s)
            assert np.array_equal(r, r.T) and np.all(np.diag(r) == 1.0)
            rb = enc.rp(s, enc.RpConfig(mode="binary"))
            assert np.array_equal(rb, rb.T) and np.all(np.diag(rb) == 1.0)
            _, w = enc.mtf(s, return_matrix=True)
            worst_row = max(worst_row, np.abs(w.sum(axis=1) - 1).max())
        _, w = enc.mtf([0.0, 0.0, 1.0, 1.0], enc.MtfConfig(2), return_matrix=True)
        assert np.array_equal(w, np.array([[0.5, 0.5], [0.0, 1.0]]))
        elapsed = time.perf_counter() - t0
        notes += [f"forms {worst_form:.1e}", f"round trip {worst_trip:.1e}",
                  f"rows {worst_row:.1e}", f"{elapsed:.1f}s"]
        assert worst_form <= 1e-12
        assert worst_trip <= 1e-9
        assert worst_row <= 1e-12
        assert elapsed < 60


def test_criterion_2_gradient_check():
    with criterion(2, "gradient check") as notes:
        t0 = time.perf_counter()
        arch = neuralnet.tiny_architecture()
        assert arch.input_size == 8 and arch.conv_channels == (2, 2, 2)
        rep = neuralnet.gradient_check(arch, tol=1e-4)
        elapsed = time.perf_counter() - t0
        notes += [f"max rel error {rep.max_rel_error:.2e}", f"{elapsed:.1f}s"]
        assert set(rep.per_param) == set(arch.param_shapes())
        assert rep.max_rel_error < 1e-4
        assert elapsed < 60


def test_criterion_3_smote_counts_on_mitbih():
    with criterion(3, "SMOTE fidelity on MIT-BIH") as notes:
        split = ingest.load_mitbih(_mitbih_dir())
        assert ingest.class_counts(split.train) == ingest.MITBIH_TRAIN_COUNTS
        out = ingest.smote(split.train, ingest.MITBIH_SMOTE_TARGETS, k=5, seed=0)
        counts = ingest.class_counts(out)
        notes.append(f"total {len(out)}")
        assert counts == ingest.MITBIH_SMOTE_TARGETS
        assert len(out) == 152471


DESK_SEEDS = (7, 8, 9)
DESK_IDS = ("gaf", "rp", "mtf", "concat", "mff")


def test_criterion_4_desk_ordering_on_mitbih():
    with criterion(4, "desk-scale ordering on MIT-BIH") as notes:
        split = ingest.load_mitbih(_mitbih_dir())
        t0 = time.perf_counter()
        wins, best = 0, []
        for seed in DESK_SEEDS:
            desk = harness.desk_split(split, 2000, 400, seed)
            cfg = PipelineConfig(image_size=32, epochs=10, seed=seed)
            reps = harness.run_pipelines(DESK_IDS, desk, cfg, bench=False)
            acc = {pid: r.accuracy for pid, r in reps.items()}
            won = all(acc["mff"] >= acc[p] for p in ("gaf", "rp", "mtf", "concat"))
            wins += won
            best.append(acc["mff"])
            notes.append(f"seed {seed}: " + " ".join(f"{p}={acc[p]:.3f}" for p in DESK_IDS))
        elapsed = time.perf_counter() - t0
        notes.append(f"{elapsed / 60:.1f} min")
        assert wins >= 2, f"MFF ahead on {wins}/3 seeds"
        assert all(a >= 0.85 for a in best), f"MFF accuracy {best}"


def test_criterion_5_full_scale():
    with criterion(5, "full-scale MFF accuracy") as notes:
        if os.environ.get("HBFUSE_FULL_RUN") != "1":
            pytest.skip("optional full-scale run, set HBFUSE_FULL_RUN=1")
        data_dir = _mitbih_dir()
        cfg = PipelineConfig(**harness.FULL, seed=7)
        split = ingest.load_mitbih(data_dir)
        train = ingest.smote(split.train, ingest.MITBIH_SMOTE_TARGETS, k=5, seed=7)
        full = ingest.DatasetSplit(train, split.test, 7, split.meta)
        mit = harness.run_pipeline("mff", full, cfg, bench=False).accuracy
        notes.append(f"MIT-BIH {100 * mit:.2f}")
        ptb = harness.run_pipeline("mff", ingest.load_ptb(data_dir, 7), cfg, bench=False).accuracy
        notes.append(f"PTB {100 * ptb:.2f}")
        assert abs(100 * mit - 98.3) <= 2.0
        assert abs(100 * ptb - 96.5) <= 2.5


def _gated_oracle(f1, f2, f3):
    out = np.zeros(len(f1))
    for f in (f1, f2, f3):
        d = len(f)
        for i in range(d):
            h = 3.0 * f[i] - (f[i - 1] if i > 0 else 0.0) - (f[i + 1] if i < d - 1 else 0.0)
            out[i] += f[i] / (1.0 + np.exp(-h))
    return out


def test_criterion_6_fusion_algebra():
    with criterion(6, "fusion algebra suite") as notes:
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(200):
            f = rng.normal(0, 3, (3, 8))
            worst = max(worst, np.abs(fusion.gated_fuse(*f) - _gated_oracle(*f)).max())
        notes.append(f"oracle error {worst:.1e}")
        assert worst <= 1e-12
        for _ in range(20):
            f = rng.normal(size=(3, 512))
            assert np.array_equal(fusion.gated_fuse(*f, override_gates=1),
                                  fusion.average_fuse(*f))
        for d in (3, 16, 512):
            assert fusion.gated_fuse(*rng.normal(size=(3, d))).shape == (d,)
            assert fusion.gated_fuse(*rng.normal(size=(3, 5, d))).shape == (5, d)


def test_criterion_7_determinism():
    with criterion(7, "pipeline determinism") as notes:
        split = synth_split(40, 12, seed=5)
        cfg = PipelineConfig(image_size=16, conv_channels=(8, 16, 16), feature_width=64,
                             epochs=3, batch_size=32, seed=11)
        a = harness.run_pipelines(harness.PIPELINES, split, cfg, bench=False)
        b = harness.run_pipelines(harness.PIPELINES, split, cfg, bench=False)
        for pid in harness.PIPELINES:
            ca = np.asarray(a[pid].confusion, dtype=np.int64).tobytes()
            cb = np.asarray(b[pid].confusion, dtype=np.int64).tobytes()
            assert ca == cb, f"{pid} confusion matrices differ"
            assert json.dumps(a[pid].to_dict(deterministic=True), sort_keys=True) == \
                json.dumps(b[pid].to_dict(deterministic=True), sort_keys=True)
        notes.append(f"{len(harness.PIPELINES)} pipelines, synthetic split")


def test_criterion_8_mif_faster_than_mff():
    with criterion(8, "MIF latency below MFF latency") as notes:
        split = synth_split(20, 10, seed=3)
        # desk-scale networks; latency depends on the architecture, not the weights
        cfg = PipelineConfig(image_size=32, epochs=1, seed=5)
        chains = harness.build_chains(split, cfg, ("mif", "mff"))
        samples = split.test.samples[:32]
        mif = harness.bench_inference(chains["mif"], samples, reps=3).us_per_sample
        mff = harness.bench_inference(chains["mff"], samples, reps=3).us_per_sample
        notes.append(f"MIF {mif:.0f} us, MFF {mff:.0f} us per sample")
        assert mif < mff
