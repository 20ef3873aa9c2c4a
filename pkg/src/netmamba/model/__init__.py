"""Network definition: embeddings, sequence blocks, encoder/decoder and heads."""

from .attention import naive_attention, streaming_attention
from .blocks import GeGLU, MambaBlock, TransBlock, make_blocks
from .config import ModelConfig
from .embed import Embedding, sinusoidal_encode
from .net import ClassifierHead, Decoder, Encoder, NetMamba
from .ssm import (discretize, linear_recurrence_parallel, linear_recurrence_sequential, selective_scan,
                  selective_scan_parallel, selective_scan_sequential, selective_ssm)

__all__ = [
    "ClassifierHead", "Decoder", "Embedding", "Encoder", "GeGLU", "MambaBlock", "ModelConfig",
    "NetMamba", "TransBlock", "discretize", "linear_recurrence_parallel", "linear_recurrence_sequential",
    "make_blocks", "naive_attention", "selective_scan", "selective_scan_parallel",
    "selective_scan_sequential", "selective_ssm", "sinusoidal_encode", "streaming_attention",
]
