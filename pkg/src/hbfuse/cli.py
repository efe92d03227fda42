"""``hbfuse`` command line interface."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import encode as enc
from . import formats, fusion, harness, ingest, neuralnet, svm

log = logging.getLogger("hbfuse")

ENCODER_TAGS = {"gaf": "GAF", "rp": "RP", "mtf": "MTF"}


def _load_beats(path, args) -> ingest.HeartbeatSet:
    return ingest.load_csv(path, args.expected_len, args.num_classes)


def cmd_ingest(args):
    train = _load_beats(args.train, args)
    test = _load_beats(args.test, args)
    before = ingest.class_counts(train)
    if args.smote_targets:
        train = ingest.smote(train, ingest.parse_targets(args.smote_targets), k=args.k,
                             seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ingest.save_csv(train, out / "train.csv")
    ingest.save_csv(test, out / "test.csv")
    meta = {"seed": args.seed, "smote_k": args.k, "train_before": before,
            "train_after": ingest.class_counts(train), "test": ingest.class_counts(test)}
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    print(json.dumps(meta, indent=1))


def cmd_encode(args):
    beats = _load_beats(args.inp, args)
    cfg = enc.EncoderConfig(rp=enc.RpConfig.from_spec(args.rp_mode, args.rp_lambda),
                            mtf=enc.MtfConfig(args.mtf_bins))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = np.arange(len(beats))
    with harness.thread_limit():
        for name, tag in ENCODER_TAGS.items():
            images = harness.encode_channel(beats.samples, name, cfg, args.size)
            formats.write_image_archive(out / f"{name}.bin", ids, tag, images)
    formats.write_labels(out / "labels.csv", ids, beats.labels)
    print(f"wrote {len(beats)} beats x 3 encodings ({args.size}x{args.size}) to {out}")


def _stack_archives(paths):
    ids0, stacks = None, []
    for p in paths:
        ids, _, images = formats.read_image_archive(p)
        if ids0 is not None and not np.array_equal(ids, ids0):
            raise SystemExit(f"{p}: beat ids differ from {paths[0]}")
        ids0 = ids
        stacks.append(images)
    return ids0, np.stack(stacks, axis=1)


def _labels_for(ids, label_path):
    table = formats.read_labels(label_path)
    try:
        return np.array([table[int(i)] for i in ids], dtype=np.int64)
    except KeyError as exc:
        raise SystemExit(f"no label for beat id {exc.args[0]} in {label_path}")


def cmd_train_cnn(args):
    ids, images = _stack_archives(args.images)
    labels_path = args.labels or Path(args.images[0]).with_name("labels.csv")
    labels = _labels_for(ids, labels_path)
    num_classes = args.num_classes or int(labels.max()) + 1
    if args.arch == "tiny":
        arch = neuralnet.CnnArchitecture(in_channels=images.shape[1],
                                         input_size=images.shape[2], conv_channels=(2, 2, 2),
                                         feature_width=8, num_classes=num_classes)
    else:
        arch = neuralnet.CnnArchitecture(in_channels=images.shape[1],
                                         input_size=images.shape[2], num_classes=num_classes)
    cfg = neuralnet.TrainConfig(epochs=args.epochs, seed=args.seed,
                                mini_batch_size=args.batch_size,
                                initial_learn_rate=args.learn_rate)
    with harness.thread_limit():
        model = neuralnet.train(images, labels, cfg, arch, progress=print)
    neuralnet.save_model(model, args.out)
    print(f"saved {arch.num_params()}-parameter model to {args.out}")


def cmd_extract(args):
    model = neuralnet.load_model(args.model)
    ids, images = _stack_archives(args.images)
    with harness.thread_limit():
        feats = neuralnet.extract_features(model, images)
    formats.write_features(args.out, ids, args.tag, feats)
    print(f"wrote {len(ids)} x {feats.shape[1]} features to {args.out}")


def cmd_fuse(args):
    loaded = [formats.read_features(p) for p in args.features]
    if len(loaded) != 3:
        raise SystemExit("fuse needs exactly three feature files")
    ids = loaded[0][0]
    for p, (other, _, _) in zip(args.features, loaded):
        if not np.array_equal(ids, other):
            raise SystemExit(f"{p}: beat ids differ from {args.features[0]}")
    kernel = fusion.HighBoostKernel(args.c, args.hb_mode)
    fused = fusion.fuse(args.method, *(f for _, _, f in loaded), kernel=kernel)
    formats.write_features(args.out, ids, args.method, fused)
    print(f"wrote {len(ids)} x {fused.shape[1]} fused features to {args.out}")


def cmd_train_svm(args):
    ids, _, feats = formats.read_features(args.features)
    labels = _labels_for(ids, args.labels)
    model = svm.svm_train(feats, labels, lam=args.lam, epochs=args.epochs, seed=args.seed)
    svm.save_svm(model, args.out)
    acc = float(np.mean(model.predict(feats) == labels))
    print(f"saved SVM ({model.num_classes} classes, D={model.dim}); train accuracy {acc:.4f}")


def _dataset(args) -> ingest.DatasetSplit:
    if args.dataset == "synthetic":
        from .synthetic import synth_split
        return synth_split(args.synthetic_train, args.synthetic_test, seed=args.seed)
    data_dir = args.data_dir or os.environ.get("HBFUSE_DATA_DIR")
    if not data_dir:
        raise SystemExit("--data-dir (or HBFUSE_DATA_DIR) is required for real datasets")
    if args.dataset == "mitbih":
        split = ingest.load_mitbih(data_dir)
    else:
        split = ingest.load_ptb(data_dir, args.seed)
    if args.scale == "desk":
        return harness.desk_split(split, args.train_cap, args.test_cap, args.seed)
    if args.dataset == "mitbih":
        train = ingest.smote(split.train, ingest.MITBIH_SMOTE_TARGETS, k=5, seed=args.seed)
        return ingest.DatasetSplit(train, split.test, args.seed, {**split.meta, "smote": True})
    return split


def _config(args) -> harness.PipelineConfig:
    base = harness.DESK if args.scale == "desk" else harness.FULL
    values = {**base}
    if args.config:
        values.update(harness.parse_config_file(args.config))
    values["seed"] = args.seed
    for key in ("image_size", "epochs"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    return harness.PipelineConfig.from_mapping(values)


def _specs(text):
    ids = harness.PIPELINES if text == "all" else tuple(s.strip() for s in text.split(","))
    for s in ids:
        if s not in harness.PIPELINES:
            raise SystemExit(f"unknown pipeline {s!r}; choose from {', '.join(harness.PIPELINES)}")
    return ids


def cmd_pipeline(args):
    split = _dataset(args)
    cfg = _config(args)
    reports = harness.run_pipelines(_specs(args.spec), split, cfg, progress=print)
    written = harness.emit_report(list(reports.values()), args.out)
    print(harness.format_table(reports.values()))
    print("wrote " + ", ".join(str(p) for p in written))


def cmd_bench(args):
    split = _dataset(args)
    cfg = _config(args)
    kinds = _specs(args.spec)
    with harness.thread_limit():
        chains = harness.build_chains(split, cfg, kinds)
        samples = split.test.samples[:args.samples]
        for k in kinds:
            res = harness.bench_inference(chains[k], samples, args.reps)
            print(f"{k:<8} {res.us_per_sample:10.1f} us/sample ({res.samples} samples, "
                  f"{args.reps} reps)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hbfuse", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def beats_opts(sp):
        sp.add_argument("--expected-len", type=int, default=187)
        sp.add_argument("--num-classes", type=int, default=5)

    sp = sub.add_parser("ingest", help="validate CSVs and SMOTE the training split")
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--smote-targets", default="", help="e.g. N=72471,S=30000,V=20000")
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    beats_opts(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("encode", help="encode beats into GAF/RP/MTF image archives")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--rp-mode", choices=("grayscale", "binary"), default="grayscale")
    sp.add_argument("--rp-lambda", default="p10", help="'pNN' percentile or absolute value")
    sp.add_argument("--mtf-bins", type=int, default=10)
    beats_opts(sp)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("train-cnn", help="train the small CNN on one or more archives")
    sp.add_argument("--images", nargs="+", required=True,
                    help="one archive (single modality) or three (GAF RP MTF for MIF)")
    sp.add_argument("--labels")
    sp.add_argument("--arch", choices=("small", "tiny"), default="small")
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--batch-size", type=int, default=128)
    sp.add_argument("--learn-rate", type=float, default=0.005)
    sp.add_argument("--num-classes", type=int)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_cnn)

    sp = sub.add_parser("extract", help="write penultimate-layer features of a trained CNN")
    sp.add_argument("--model", required=True)
    sp.add_argument("--images", nargs="+", required=True)
    sp.add_argument("--tag", default="FEAT")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("fuse", help="fuse three feature files")
    sp.add_argument("--method", choices=("gfn", "avg", "concat"), default="gfn")
    sp.add_argument("--features", nargs=3, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--hb-mode", choices=("1d", "2d"), default="1d")
    sp.add_argument("--c", type=float, default=1.0)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("train-svm", help="train the linear SVM on a feature file")
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_svm)

    def run_opts(sp):
        sp.add_argument("--spec", default="mff", help="pipeline id, comma list, or 'all'")
        sp.add_argument("--dataset", choices=("mitbih", "ptb", "synthetic"), default="mitbih")
        sp.add_argument("--data-dir")
        sp.add_argument("--scale", choices=("desk", "full"), default="desk")
        sp.add_argument("--seed", type=int, default=7)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--image-size", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--train-cap", type=int, default=2000)
        sp.add_argument("--test-cap", type=int, default=400)
        sp.add_argument("--synthetic-train", type=int, default=200)
        sp.add_argument("--synthetic-test", type=int, default=50)

    sp = sub.add_parser("pipeline", help="run experiment pipelines and write a report")
    run_opts(sp)
    sp.add_argument("--out", default="report")
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("bench", help="per-sample inference latency of trained chains")
    run_opts(sp)
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--reps", type=int, default=3)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ingest.DataError, formats.FormatError, harness.PipelineError) as exc:
        print(f"hbfuse: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
