"""
All seven pipelines side by side
================================

Runs the single-modality networks, the three feature-fusion variants and the
stacked-image network on a synthetic split, then prints the report table
with per-sample inference latency.

Set HBFUSE_DATA_DIR to a folder holding mitbih_train.csv / mitbih_test.csv
to run on the real beats at desk scale instead (expect tens of minutes).
"""
import os
import sys

from hbfuse import harness, ingest
from hbfuse.harness import PipelineConfig
from hbfuse.synthetic import synth_split

data_dir = os.environ.get("HBFUSE_DATA_DIR")
if data_dir and "--real" in sys.argv:
    split = harness.desk_split(ingest.load_mitbih(data_dir), 2000, 400, seed=7)
    cfg = PipelineConfig(image_size=32, epochs=10, seed=7)
else:
    split = synth_split(train_per_class=80, test_per_class=30, seed=1)
    cfg = PipelineConfig(image_size=16, conv_channels=(8, 16, 16), feature_width=64,
                         epochs=5, batch_size=32, seed=7)

print("train", ingest.class_counts(split.train))
print("test ", ingest.class_counts(split.test))
reports = harness.run_pipelines(harness.PIPELINES, split, cfg, progress=print)
print()
print(harness.format_table(reports.values()))

mff = reports["mff"]
print("MFF confusion matrix (rows true, columns predicted):")
for name, row in zip(mff.class_names, mff.confusion):
    print(f"  {name:>2} {row}")
