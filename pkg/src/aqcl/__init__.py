"""Auto-quantized contrastive learning for CTR models, in float64 numpy."""

__version__ = "0.1.0"
