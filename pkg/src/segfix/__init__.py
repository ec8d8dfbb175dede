"""Error detection and targeted correction for supervoxel segmentations."""

from .corrector import (AbstainingCorrector, EmbeddingCorrector, NoisyCorrector, OracleCorrector,
                        PruningTask, SupervoxelDecision, advice_mask, decide,
                        mask_from_vector_field, score_supervoxels)
from .errormap import (ErrorMap, ErrorWindowSpec, NoisyDetector, OracleDetector, binarize,
                       blend_max, combined_error_map, oracle_error_map)
from .metrics import (ContingencyTable, contingency, count_point_errors, per_object_vi,
                      pr_curve, rand_scores, vi_scores)
from .refine import RefinementConfig, RefinementReport, init_state, run, step
from .svgraph import SegGraph, SegmentationView, build_graph
from .synth import SynthConfig, generate_gt, generate_mutations, inject_errors
from .volume import Box3, LabelVolume, RawVolume, VolumeError, read_volume, write_volume

__version__ = "0.1.0"
