"""Request-driven hierarchical segmentation toolkit.

Images are recognized through alternating requests on a growing tree:
Type-I asks an instance for its semantic parts (scoped by a versioned
knowledge base), Type-II asks a semantic region which instance occupies a
probe pixel. The package covers tree construction and validation, request
parsing and replay, probe sampling, pluggable prediction backends,
hierarchical panoptic quality scoring, synthetic corpora, and an HTTP
annotation service.
"""
from .errors import VirreqError
from .kb import KbBuilder, KbRegistry, KbVersion
from .masks import BinaryMask, LabelMap, Rle, iou, rle_decode, rle_encode
from .metrics import dataset_hpq, dataset_pq, miou_per_level, node_hpq, part_pq
from .probes import GammaPolicy, GridPolicy, grid_probes, sample_probe
from .requests import Answer, Request, parse_requests
from .tree import ChildSpec, RecognitionTree, new_tree

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "BinaryMask",
    "ChildSpec",
    "GammaPolicy",
    "GridPolicy",
    "KbBuilder",
    "KbRegistry",
    "KbVersion",
    "LabelMap",
    "RecognitionTree",
    "Request",
    "Rle",
    "VirreqError",
    "dataset_hpq",
    "dataset_pq",
    "grid_probes",
    "iou",
    "miou_per_level",
    "new_tree",
    "node_hpq",
    "parse_requests",
    "part_pq",
    "rle_decode",
    "rle_encode",
    "sample_probe",
    "__version__",
]
