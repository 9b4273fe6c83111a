"""
Template banks and weight generation for soft parameter sharing.

A sharing group owns k templates of one kernel shape and an L x k coefficient
matrix. Layer i of the group uses the kernel sum_j A[i, j] * T_j; the same
output can be computed by convolving with every template and mixing the k
feature maps (the template-layer view). Both paths are exposed through
`shared_conv_forward`.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hybrid_cnn.core import Tensor
from hybrid_cnn.core import functional as F
from hybrid_cnn.errors import DimensionError, UsageError

logger = logging.getLogger(__name__)

__all__ = [
    "ForwardStrategy",
    "TemplateBank",
    "CoefficientMatrix",
    "SharingGroup",
    "init_kernel",
    "init_templates",
    "generate_weights",
    "shared_conv_forward",
]


class ForwardStrategy(Enum):
    """How a shared convolution is evaluated."""

    GENERATED_WEIGHTS = "weights"
    TEMPLATE_LAYERS = "templates"


def init_kernel(shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """He-normal kernel values, std = sqrt(2 / fan_in) with fan_in = Cin*Kh*Kw."""
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(tuple(shape)) * np.sqrt(2.0 / fan_in)


@dataclass
class TemplateBank:
    """k parameter templates that all have the same kernel shape."""

    templates: List[Tensor]

    def __post_init__(self) -> None:
        if not self.templates:
            raise UsageError("a template bank needs at least one template")
        shape = self.templates[0].shape
        for t in self.templates:
            if t.shape != shape:
                raise DimensionError(f"templates must share one shape, got {shape} and {t.shape}")

    @property
    def k(self) -> int:
        return len(self.templates)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.templates[0].shape

    @property
    def template_size(self) -> int:
        return int(np.prod(self.shape))


def init_templates(
    k: int, shape: Sequence[int], rng: np.random.Generator, name_prefix: str = "template"
) -> TemplateBank:
    """Create k templates initialised like ordinary conv kernels.

    With unit-norm coefficient rows the generated kernels then have the usual
    He variance.
    """
    if k < 1:
        raise UsageError(f"number of templates must be >= 1, got {k}")
    return TemplateBank(
        [
            Tensor(init_kernel(shape, rng), requires_grad=True, name=f"{name_prefix}.{j}")
            for j in range(k)
        ]
    )


@dataclass
class CoefficientMatrix:
    """The L x k matrix A; row i holds the mixing coefficients of layer i."""

    values: Tensor

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise DimensionError(f"coefficient matrix must be 2D, got shape {self.values.shape}")

    @property
    def num_layers(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.values.data[i]

    def as_array(self) -> np.ndarray:
        return self.values.data.copy()


@dataclass
class SharingGroup:
    """Layers that draw their kernels from one template bank.

    Attributes:
        group_id: Name of the group (unique within a network).
        bank: The shared templates.
        coefficients: One coefficient row per member layer.
        members: Global layer indices of the member layers, in network order.
        strategy: Default forward strategy for `shared_conv_forward`.
    """

    group_id: str
    bank: TemplateBank
    coefficients: CoefficientMatrix
    members: List[int] = field(default_factory=list)
    strategy: ForwardStrategy = ForwardStrategy.GENERATED_WEIGHTS

    def __post_init__(self) -> None:
        if self.coefficients.k != self.bank.k:
            raise DimensionError(
                f"group '{self.group_id}': coefficient matrix has {self.coefficients.k} "
                f"columns but the bank holds {self.bank.k} templates"
            )
        if not self.members:
            self.members = list(range(self.coefficients.num_layers))
        if len(self.members) != self.coefficients.num_layers:
            raise DimensionError(
                f"group '{self.group_id}': {len(self.members)} members but "
                f"{self.coefficients.num_layers} coefficient rows"
            )

    @property
    def num_layers(self) -> int:
        return len(self.members)

    @property
    def k(self) -> int:
        return self.bank.k

    def position_of(self, layer_id: int) -> int:
        """Row of the coefficient matrix that belongs to global layer `layer_id`."""
        try:
            return self.members.index(layer_id)
        except ValueError:
            raise UsageError(f"layer {layer_id} is not a member of group '{self.group_id}'") from None

    def num_parameters(self) -> int:
        """k*L coefficients plus k full templates."""
        return self.k * self.num_layers + self.k * self.bank.template_size

    def tensors(self) -> List[Tensor]:
        return [*self.bank.templates, self.coefficients.values]


def _check_index(group: SharingGroup, layer_index: int) -> None:
    if not 0 <= layer_index < group.num_layers:
        raise UsageError(
            f"layer index {layer_index} out of range for group '{group.group_id}' "
            f"with {group.num_layers} layers"
        )


def generate_weights(group: SharingGroup, layer_index: int) -> Tensor:
    """Kernel of the group's `layer_index`-th layer: sum_j A[i, j] * T_j."""
    _check_index(group, layer_index)
    return F.linear_combination(group.coefficients.values, layer_index, group.bank.templates)


def shared_conv_forward(
    group: SharingGroup,
    layer_index: int,
    input: Tensor,
    padding: int,
    strategy: Optional[ForwardStrategy] = None,
) -> Tensor:
    """Convolve `input` with the kernel of a shared layer.

    Args:
        group: The sharing group.
        layer_index: Position of the layer inside the group.
        input: Tensor of shape [N, Cin, H, W].
        padding: Zero padding on each spatial side.
        strategy: GENERATED_WEIGHTS builds the kernel then convolves once;
            TEMPLATE_LAYERS convolves with each template and mixes the
            outputs. Defaults to the group's strategy.
    """
    _check_index(group, layer_index)
    cin = group.bank.shape[1]
    if input.ndim != 4 or input.shape[1] != cin:
        raise DimensionError(
            f"group '{group.group_id}' expects {cin} input channels, got input shape {input.shape}"
        )
    strategy = strategy or group.strategy
    if strategy is ForwardStrategy.GENERATED_WEIGHTS:
        return F.conv2d(input, generate_weights(group, layer_index), padding=padding)
    template_outputs = [F.conv2d(input, t, padding=padding) for t in group.bank.templates]
    return F.linear_combination(group.coefficients.values, layer_index, template_outputs)
