"""Vector-quantized embeddings of mixed-integer programs and their downstream heads."""

__version__ = "0.1.0"
