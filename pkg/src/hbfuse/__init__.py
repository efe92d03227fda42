"""Heartbeat classification by multimodal fusion of GAF, RP and MTF images."""
import logging

from .encode import (EncoderConfig, GafConfig, MtfConfig, RpConfig, encode_all, encode_batch,
                     gaf, gaf_diagonal_invert, mtf, normalize01, resize_bilinear, rp)
from .fusion import (HighBoostKernel, average_fuse, compose_mif, concat_fuse, gated_fuse,
                     high_boost_filter)
from .harness import (ConfusionMatrix, ExperimentReport, PipelineConfig, bench_inference,
                      emit_report, metrics, run_pipeline, run_pipelines)
from .ingest import (DatasetSplit, Heartbeat, HeartbeatSet, class_counts, load_csv, save_csv,
                     smote, stratified_subsample)
from .neuralnet import (CnnArchitecture, CnnModel, TrainConfig, extract_features, forward,
                        gradient_check, softmax, train)
from .svm import SvmModel, svm_predict, svm_train

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
