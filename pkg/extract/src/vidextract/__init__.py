"""Feature and attribute extraction for the captioning pipeline."""

from .attributes import extract_attributes, parse_caption
from .backbone import ColorStatBackbone, get_backbone, register_backbone
from .exceptions import ExtractError, JobError
from .formats import manifest_entry, write_feature_file, write_manifest
from .jobs import ExtractionJob, extract_motion, extract_temporal, run_job, run_jobs
from .video import read_frames

__all__ = [
    "ColorStatBackbone",
    "ExtractError",
    "ExtractionJob",
    "JobError",
    "extract_attributes",
    "extract_motion",
    "extract_temporal",
    "get_backbone",
    "manifest_entry",
    "parse_caption",
    "read_frames",
    "register_backbone",
    "run_job",
    "run_jobs",
    "write_feature_file",
    "write_manifest",
]
