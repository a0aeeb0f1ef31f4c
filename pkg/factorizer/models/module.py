import logging
from collections import OrderedDict
from typing import Any, Dict, Iterator, List, Tuple

import numpy as np

from factorizer.autograd.tensor import Tensor
from factorizer.exceptions import DimensionError, FormatError

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """Learnable leaf tensor; the optimizer swaps its data in place via `assign`"""

    def __init__(self, data: Any, dtype: Any = None):
        super().__init__(data, requires_grad=True, dtype=dtype)

    def assign(self, array: np.ndarray) -> None:
        array = np.asarray(array, dtype=self.dtype)
        if array.shape != self.shape:
            raise DimensionError(f"cannot assign shape {array.shape} to parameter of shape {self.shape}")
        view = array.view()
        view.flags.writeable = False
        self.data = view


class Module:
    """
    Base class for layers.

    Parameters and submodules assigned as attributes are registered in
    assignment order, which fixes `named_parameters` order and therefore
    initialization and checkpoint layout.
    """

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value: Any) -> None:
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        return iter(self._modules.items())

    def modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield (f"{prefix}.{name}" if prefix else name), param
        for name, child in self._modules.items():
            yield from child.named_parameters(f"{prefix}.{name}" if prefix else name)

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(param.size for param in self.parameters()))

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, param.numpy()) for name, param in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise FormatError(f"state mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, param in own.items():
            param.assign(state[name])
        logger.debug(f"Loaded {len(own)} parameter tensors")


class ModuleList(Module):
    """Indexable container of submodules"""

    def __init__(self, modules: List[Module] = ()):
        super().__init__()
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._modules)), module)

    def __getitem__(self, index: int) -> Module:
        return list(self._modules.values())[index]

    def __iter__(self) -> Iterator[Module]:
        return iter(self._modules.values())

    def __len__(self) -> int:
        return len(self._modules)
