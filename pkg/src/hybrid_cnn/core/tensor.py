"""
Dense float64 tensor with reverse-mode automatic differentiation.

Every differentiable primitive (see `hybrid_cnn.core.functional`) produces a
new `Tensor` that remembers its parents and a closure mapping the upstream
gradient to one gradient per parent. `Tape.from_output` orders that graph
topologically and `backward` walks it once in reverse.

The graph lives entirely on the tensors themselves, so independent graphs
can be built and differentiated on separate threads without sharing state.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from hybrid_cnn.errors import NonFiniteError, UsageError

logger = logging.getLogger(__name__)

__all__ = ["Tensor", "Tape", "backward", "as_array"]

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def as_array(data: ArrayLike) -> np.ndarray:
    """Convert input data into a contiguous float64 numpy array (always copies)."""
    return np.array(data, dtype=np.float64, copy=True, order="C")


class Tensor:
    """A float64 array that can take part in gradient computation.

    Attributes:
        data: The row-major float64 values.
        requires_grad: Whether gradients should be accumulated into `grad`.
        grad: Gradient buffer with the same shape as `data`, or None before
            the first backward pass.
        name: Optional label used in error messages and checkpoints.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        self.data: np.ndarray = as_array(data)
        self.requires_grad: bool = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name: Optional[str] = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op: str = ""

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward_fn: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Wrap the result of a primitive and attach it to the graph.

        The backward closure is only kept when at least one parent needs a
        gradient.
        """
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"Non-finite values produced by '{op}'")
        out = cls.__new__(cls)
        out.data = np.require(np.asarray(data, dtype=np.float64), requirements="C")
        out.grad = None
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        out._op = op
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def op(self) -> str:
        return self._op

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Copy of the values, cut from the graph and without gradient tracking."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from hybrid_cnn.core.functional import add

        return add(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from hybrid_cnn.core.functional import mul_elementwise, scale

        if isinstance(other, Tensor):
            return mul_elementwise(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from hybrid_cnn.core.functional import scale

        return scale(self, -1.0)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return self + (-other)

    def __repr__(self) -> str:
        label = f", name='{self.name}'" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


@dataclass
class Tape:
    """Topologically ordered record of the operations that produced an output.

    `nodes[i]` never depends on `nodes[j]` for j > i, so walking the list in
    reverse visits every consumer before its inputs.
    """

    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        # Iterative post-order DFS; deep residual stacks would overflow recursion.
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(nodes=order)

    def __len__(self) -> int:
        return len(self.nodes)

    def run_backward(self, seed: np.ndarray) -> None:
        """Propagate `seed` (the gradient of the output) through the tape.

        Gradients are accumulated into `.grad` of every `requires_grad`
        tensor on the tape; calling this twice without resetting grads sums
        both passes.
        """
        if not self.nodes:
            return
        pending: Dict[int, np.ndarray] = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            upstream = pending.pop(id(node), None)
            if upstream is None or not node.requires_grad:
                continue
            if node.grad is None:
                node.grad = np.array(upstream, dtype=np.float64, copy=True)
            else:
                node.grad = node.grad + upstream
            if node._backward is None:
                continue
            parent_grads = node._backward(upstream)
            for parent, grad in zip(node._parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                if grad.shape != parent.data.shape:
                    raise AssertionError(
                        f"Backward of '{node._op}' returned gradient shape {grad.shape} "
                        f"for parent of shape {parent.data.shape}"
                    )
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteError(f"Non-finite gradient in backward of '{node._op}'")
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + grad
                else:
                    pending[key] = grad


def backward(loss: Tensor) -> None:
    """Populate gradients for every `requires_grad` tensor reachable from `loss`.

    Args:
        loss: A scalar (single element) tensor.

    Raises:
        UsageError: If `loss` has more than one element.
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward() called on a tensor that does not require grad")
        return
    tape = Tape.from_output(loss)
    tape.run_backward(np.ones_like(loss.data))
