from .base import (AttentionTap, DetectorOutput, FeatureTap, VictimBundle,
                   VictimError)
from .manifest import BundleManifest, EncoderSpec, ManifestError
from .surrogate import build_surrogate_bundle
from .synthetic import synthetic_face, synthetic_face_u8

__all__ = [
    "AttentionTap", "DetectorOutput", "FeatureTap", "VictimBundle", "VictimError",
    "BundleManifest", "EncoderSpec", "ManifestError", "build_surrogate_bundle",
    "synthetic_face", "synthetic_face_u8",
]
