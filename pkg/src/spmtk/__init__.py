"""spmtk: scanning-probe image artefact simulation, masking and restoration."""

__version__ = "0.1.0"

from .errors import SpmError
from .imageio import Channel, MaskImage, ManifestEntry, ScanFrame

__all__ = [
    "Channel",
    "MaskImage",
    "ManifestEntry",
    "ScanFrame",
    "SpmError",
    "__version__",
]
