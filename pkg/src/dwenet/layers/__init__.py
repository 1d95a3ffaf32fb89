"""Network building blocks."""

from dwenet.layers.base import Module, ModuleList
from dwenet.layers.blocks import DenseBlock, PlainBlock, ResidualBlock, Transition
from dwenet.layers.conv import ConvLayer, Projection
from dwenet.layers.head import ClassifierHead, Embedding, InitialConv, Linear

__all__ = [
    "ClassifierHead",
    "ConvLayer",
    "DenseBlock",
    "Embedding",
    "InitialConv",
    "Linear",
    "Module",
    "ModuleList",
    "PlainBlock",
    "Projection",
    "ResidualBlock",
    "Transition",
]
