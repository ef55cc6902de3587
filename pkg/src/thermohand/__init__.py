"""Multi-task hand gesture, handedness and keypoint prediction from binary hand silhouettes."""

from .domain import Annotation, GestureVocabulary, Handedness, KeypointSet, Point2, Sample
from .estimator import HandPoseEstimator
from .network import NetworkConfig
from .synth import GeneratorSpec

__version__ = "0.1.0"

__all__ = ["Annotation", "GeneratorSpec", "GestureVocabulary", "HandPoseEstimator", "Handedness",
           "KeypointSet", "NetworkConfig", "Point2", "Sample", "__version__"]
