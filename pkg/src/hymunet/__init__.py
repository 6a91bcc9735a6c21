"""Hybrid convolution / selective-state-space U-Net for binary segmentation."""

__version__ = "0.1.0"

# hymunet.nn must finish loading before hymunet.ssm: the SSM parameters
# subclass nn.Module while the VSS block in nn needs the SSM parameters.
from . import nn  # noqa: E402,F401
