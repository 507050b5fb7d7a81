from .store import SlideStore, StoreWriter
from .annotations import AnnotationRegion, load_annotations, save_annotations
from .synth import ClassSpec, SynthSpec, generate_synthetic
from .extract import (
    extract_patches,
    load_patch_table,
    renumber_patches,
    sample_balanced,
    save_patch_table,
)

__all__ = [
    "AnnotationRegion",
    "ClassSpec",
    "SlideStore",
    "StoreWriter",
    "SynthSpec",
    "extract_patches",
    "generate_synthetic",
    "load_annotations",
    "load_patch_table",
    "renumber_patches",
    "sample_balanced",
    "save_annotations",
    "save_patch_table",
]
