"""Vector-quantized autoencoders with variational information-bottleneck losses."""

__version__ = "0.1.0"
