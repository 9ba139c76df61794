"""Few-step voice conversion: run-length content codec, masked duration model,
shortcut flow matching decoder, and a synthetic world to test them on."""

from .codec import ReducedContent, length_regulate, rle_decode, rle_encode
from .errors import ConfigurationError, FormatError, InvalidArgumentError
from .sampler import SamplerConfig, SamplerMode, cfg_combine, euler_cfm_sample, shortcut_sample
from .shortcut import SCFMConfig, ShortcutBatch, TimeGrid, cfm_loss, scfm_loss

__version__ = "0.1.0"

__all__ = [
    "ReducedContent", "rle_encode", "rle_decode", "length_regulate",
    "InvalidArgumentError", "ConfigurationError", "FormatError",
    "SamplerConfig", "SamplerMode", "cfg_combine", "shortcut_sample", "euler_cfm_sample",
    "SCFMConfig", "ShortcutBatch", "TimeGrid", "cfm_loss", "scfm_loss",
]
