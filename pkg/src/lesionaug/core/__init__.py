from .image import (
    ImageBuffer,
    ImageFormatError,
    MalformedHeader,
    TruncatedPayload,
    UnsupportedFormat,
    UnsupportedMaxval,
    read_image,
    write_image,
)
from .manifest import (
    SPLIT_PRESETS,
    SPLITS,
    DatasetManifest,
    DuplicateId,
    Label,
    ManifestError,
    MissingFile,
    Sample,
    UnknownLabel,
    UnknownSplit,
    load_manifest,
    save_manifest,
)
from .rng import OP_TAGS, RngState, derive_stream, splitmix_next, uniform

__all__ = [
    "ImageBuffer", "ImageFormatError", "MalformedHeader", "TruncatedPayload",
    "UnsupportedFormat", "UnsupportedMaxval", "read_image", "write_image",
    "SPLIT_PRESETS", "SPLITS", "DatasetManifest", "DuplicateId", "Label",
    "ManifestError", "MissingFile", "Sample", "UnknownLabel", "UnknownSplit",
    "load_manifest", "save_manifest",
    "OP_TAGS", "RngState", "derive_stream", "splitmix_next", "uniform",
]
