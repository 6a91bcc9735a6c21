from .blocks import RCB, DecoderBlock, MGFGate, MGFSkip, OutputHead, PatchEmbed, VSSBlock
from .module import BatchNorm2d, Conv2d, Linear, Module, Parameter
