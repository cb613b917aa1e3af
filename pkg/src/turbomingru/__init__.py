"""minGRU/Mamba-block turbo autoencoder for neural channel coding."""

__version__ = "0.1.0"

from .channel import ChannelSpec, RngStream, awgn_transmit, ebn0_to_sigma  # noqa: E402
from .codec import (  # noqa: E402
    DecoderModel,
    EncoderModel,
    Interleaver,
    decode,
    deinterleave,
    encode,
    hard_decision,
    interleave,
    power_normalize,
)
from .estimator import TurboAutoencoder  # noqa: E402
from .evaluation import EvalPoint, confidence_interval, estimate, sample_schedule  # noqa: E402
from .tensor import ParameterStore, Tensor  # noqa: E402
from .training import TrainConfig, bce_loss  # noqa: E402

__all__ = [
    "ChannelSpec", "RngStream", "awgn_transmit", "ebn0_to_sigma",
    "DecoderModel", "EncoderModel", "Interleaver", "decode", "deinterleave", "encode",
    "hard_decision", "interleave", "power_normalize",
    "TurboAutoencoder",
    "EvalPoint", "confidence_interval", "estimate", "sample_schedule",
    "ParameterStore", "Tensor",
    "TrainConfig", "bce_loss",
]
