"""Traffic classification from raw flows with selective state-space encoders.

Packet parsing and flow representation, a small numpy autodiff engine,
Mamba-style and Transformer encoders, masked pre-training, long-tail
fine-tuning with OOD scoring, an online flow-table engine and a CLI.
"""

__version__ = "0.1.0"

from .config import RunConfig, Streams, seed_everything, tiny_run_config
from .errors import NetMambaError
from .flow_repr import FlowSample, ReprConfig, extract_samples, load_samples, save_samples
from .packet_io import FiveTuple, PacketRecord, read_packets

__all__ = [
    "__version__", "RunConfig", "Streams", "seed_everything", "tiny_run_config", "NetMambaError",
    "FlowSample", "ReprConfig", "extract_samples", "load_samples", "save_samples", "FiveTuple",
    "PacketRecord", "read_packets",
]
