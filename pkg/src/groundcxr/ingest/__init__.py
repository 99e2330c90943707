from .dicom import RawImage, read_dicom_file, read_dicom_tags, read_sidecar
from .pixels import normalize_pixels
from .records import (
    AnnotatorLabels,
    PixelFinding,
    StageRecord,
    StudyRecord,
    export_stage_records,
    filter_conflicts,
    load_annotations,
)

__all__ = [
    "AnnotatorLabels",
    "PixelFinding",
    "RawImage",
    "StageRecord",
    "StudyRecord",
    "export_stage_records",
    "filter_conflicts",
    "load_annotations",
    "normalize_pixels",
    "read_dicom_file",
    "read_dicom_tags",
    "read_sidecar",
]
