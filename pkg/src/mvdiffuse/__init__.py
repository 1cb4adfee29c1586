"""Multi-view specular-to-diffuse image translation.

Unpaired image translation for glossy object sequences: a pair of
U-Net generators trained adversarially with cycle consistency and a
perceptual correspondence loss that ties translated views together at
matched feature points. Ships with a procedural multi-view renderer
for generating paired training data, a feature detector/matcher for
real sequences, and a CLI covering the whole pipeline.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, MetricError, PatchBorderError, \
    TrainingError
from .losses import LossWeights

__all__ = [
    "ConfigError",
    "DataError",
    "MetricError",
    "PatchBorderError",
    "TrainingError",
    "LossWeights",
    "__version__",
]
