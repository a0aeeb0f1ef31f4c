from factorizer.autograd.tensor import Function, Graph, Tensor, as_tensor, is_grad_enabled, no_grad
from factorizer.autograd import functional
from factorizer.autograd.functional import gradcheck

__all__ = [
    "Function",
    "Graph",
    "Tensor",
    "as_tensor",
    "functional",
    "gradcheck",
    "is_grad_enabled",
    "no_grad",
]
