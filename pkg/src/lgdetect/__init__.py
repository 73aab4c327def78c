"""Local/global patch-evidence deepfake detection at desk scale."""

__version__ = "0.1.0"
