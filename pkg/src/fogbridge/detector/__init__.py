from .anchors import anchors_from_boxes, kmeans_anchors, wh_iou
from .checkpoint import load_state, read_manifest, save_checkpoint
from .decode import Detection, box_iou_matrix, decode, decode_grid, nms
from .model import (
    ENTROPY_MODES,
    FEATURE_SOURCES,
    DetectorOutput,
    EntropyFusionModule,
    FusionDetector,
    FusionDetectorConfig,
)

__all__ = [
    "ENTROPY_MODES",
    "FEATURE_SOURCES",
    "Detection",
    "DetectorOutput",
    "EntropyFusionModule",
    "FusionDetector",
    "FusionDetectorConfig",
    "anchors_from_boxes",
    "box_iou_matrix",
    "decode",
    "decode_grid",
    "kmeans_anchors",
    "load_state",
    "nms",
    "read_manifest",
    "save_checkpoint",
    "wh_iou",
]
