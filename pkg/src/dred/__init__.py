"""Deep redundancy coding for packet-loss resilience.

Modules:

* :mod:`dred.features` - feature vectors, synthetic sequences, feature files
* :mod:`dred.laplace` - Laplace quantization and rate mathematics
* :mod:`dred.rangecoder` - range coder with discrete Laplace models
* :mod:`dred.latent` - latent transform and per-lambda quantizer tables
* :mod:`dred.training` - rate-distortion training of the quantizer tables
* :mod:`dred.framing` - redundancy payloads, schedules, packet streams
* :mod:`dred.netsim` - burst-loss channel and receiver simulation
"""

from .errors import DredError, FormatError, InvalidArgument
from .features import FeatureSequence, FeatureVector, gen_synthetic_features, read_features, write_features
from .laplace import LaplaceParams, discrete_pmf, quantize_deadzone, rate_bits, theta_implicit
from .latent import QuantizerTable, Transform, encode_stream, reference_transform
from .framing import (RateSchedule, ScheduleRegistry, build_payload, default_registry, default_schedule,
                      parse_payload, payload_bit_budget)
from .netsim import LossModel, LossTrace, RecoveryReport, gen_loss_trace, simulate, sweep
from .training import TrainConfig, grad_check, train_tables

__version__ = "0.1.0"
