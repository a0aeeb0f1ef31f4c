import numpy as np

# Stream tags keep generators for different purposes independent
STREAM_INIT = 1
STREAM_NMF = 2
STREAM_DATA = 3
STREAM_BATCH = 4
STREAM_AUGMENT = 5


def generator(*keys: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of nonnegative integers."""
    entropy = [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
