from factorizer.models.blocks import FactorizerBlock, PositionalEmbedding, WrappedNMF
from factorizer.models.module import Module, ModuleList, Parameter
from factorizer.models.network import Factorizer, NetworkOutput, build
from factorizer.models.nmf import NMF, FactorPair, NmfOverride

__all__ = [
    "FactorPair",
    "Factorizer",
    "FactorizerBlock",
    "Module",
    "ModuleList",
    "NMF",
    "NetworkOutput",
    "NmfOverride",
    "Parameter",
    "PositionalEmbedding",
    "WrappedNMF",
    "build",
]
