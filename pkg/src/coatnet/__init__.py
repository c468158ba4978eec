"""coatnet: hybrid convolution-attention image models on a numpy autodiff core.

The public surface re-exports the pieces most callers need; submodules hold
the rest (``coatnet.train``, ``coatnet.audit``, ``coatnet.checkpoint``, ...).
"""

from .attention import (AttnParams, RelBiasTable, gather_bias, init_bias_table,
                        interpolate_bias, relative_mhsa)
from .audit import AuditReport, summarize
from .blocks import (ConvBlock, MBConvBlock, MBConvCfg, TfmCfg, TransformerBlock,
                     stochastic_depth)
from .config import (FAMILY_NAMES, ModelConfig, StageSpec, config_from_dict,
                     config_from_json, config_to_dict, config_to_json,
                     family_config, validate_config)
from .errors import (CheckpointError, ConfigError, CorruptCheckpointError,
                     DivergedError, IncompatibleCheckpointError, LabelError,
                     NoGraphError, ResolutionError, ShapeError)
from .model import Model, build_model
from .ops import (ConvParams, NormParams, conv2d, global_avg_pool, max_pool2d,
                  norm, squeeze_excite)
from .tensor import (GradMap, Tensor, backward, finite_diff, from_values, full,
                     gelu, log, log_softmax, matmul, ones, sigmoid, softmax,
                     sqrt, take, tape, trunc_normal, zeros)

__version__ = "0.1.0"
