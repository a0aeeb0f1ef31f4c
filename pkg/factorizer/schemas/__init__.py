from factorizer.schemas.config import (
    AugmentPolicy,
    BlendMode,
    FactorizerConfig,
    InferConfig,
    MatricizeConfig,
    MatricizeMode,
    NmfConfig,
    OutputMode,
    RunConfig,
    Solver,
    SyntheticTaskSpec,
    TrainConfig,
)

__all__ = [
    "AugmentPolicy",
    "BlendMode",
    "FactorizerConfig",
    "InferConfig",
    "MatricizeConfig",
    "MatricizeMode",
    "NmfConfig",
    "OutputMode",
    "RunConfig",
    "Solver",
    "SyntheticTaskSpec",
    "TrainConfig",
]
