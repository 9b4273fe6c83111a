"""
Shape-level architecture descriptions and exact parameter counting.

An `ArchitectureSpec` is a flat list of `LayerSpec`s plus the sharing groups
that some of its convolutions draw from. Specs are plain data: they can be
counted, serialised to JSON and (for stride-1 conv/bn/relu/skip stacks)
instantiated by `hybrid_cnn.models.network.Network`.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from hybrid_cnn.errors import DimensionError, UsageError

logger = logging.getLogger(__name__)

__all__ = [
    "LayerKind",
    "LayerSpec",
    "GroupSpec",
    "ArchitectureSpec",
    "ParamCountReport",
    "count_params",
]


class LayerKind(Enum):
    CONV1X1 = "conv1x1"
    CONV3X3 = "conv3x3"
    BN = "bn"
    RELU = "relu"
    SKIP_ADD = "skip-add"
    GLOBAL_POOL = "pool"
    LINEAR = "linear"

    @property
    def is_conv(self) -> bool:
        return self in (LayerKind.CONV1X1, LayerKind.CONV3X3)

    @property
    def kernel_size(self) -> int:
        return 3 if self is LayerKind.CONV3X3 else 1


@dataclass(frozen=True)
class LayerSpec:
    """One layer of an architecture.

    Attributes:
        kind: Layer type.
        in_channels: Input channels. For skip-add: channels of the residual
            source (the input of layer `residual_from`).
        out_channels: Output channels.
        group: Sharing group id for convolutions, None for individual kernels.
        name: Human readable label.
        bias: Whether a conv or linear layer carries a bias vector.
        stride: Convolution stride (shape-only specs may use 2).
        residual_from: For skip-add, index of the layer whose input is added.
        projection: For skip-add, whether the residual passes a 1x1 conv
            (needed when in_channels != out_channels).
    """

    kind: LayerKind
    in_channels: int
    out_channels: int
    group: Optional[str] = None
    name: str = ""
    bias: bool = False
    stride: int = 1
    residual_from: Optional[int] = None
    projection: bool = False

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        k = self.kind.kernel_size
        return (self.out_channels, self.in_channels, k, k)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "LayerSpec":
        d = dict(d)
        d["kind"] = LayerKind(d["kind"])
        return cls(**d)


@dataclass(frozen=True)
class GroupSpec:
    """A sharing group: k templates of `weight_shape`."""

    group_id: str
    k: int
    weight_shape: Tuple[int, int, int, int]

    def to_dict(self) -> Dict[str, Any]:
        return {"group_id": self.group_id, "k": self.k, "weight_shape": list(self.weight_shape)}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "GroupSpec":
        return cls(group_id=d["group_id"], k=int(d["k"]), weight_shape=tuple(d["weight_shape"]))


@dataclass
class ArchitectureSpec:
    name: str
    layers: List[LayerSpec]
    groups: Dict[str, GroupSpec] = field(default_factory=dict)
    input_channels: int = 2

    def group_members(self, group_id: str) -> List[int]:
        """Indices of the layers that belong to `group_id`, in order."""
        return [i for i, layer in enumerate(self.layers) if layer.group == group_id]

    def conv_indices(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind.is_conv]

    def validate(self) -> None:
        """Check channel chaining and that grouped layers match their bank shape.

        Raises:
            DimensionError: On any inconsistency.
        """
        channels = self.input_channels
        inputs: List[int] = []
        for i, layer in enumerate(self.layers):
            inputs.append(channels)
            where = f"{self.name} layer {i} ({layer.kind.value}{' ' + layer.name if layer.name else ''})"
            if layer.kind is LayerKind.SKIP_ADD:
                src = layer.residual_from
                if src is None or not 0 <= src < i:
                    raise DimensionError(f"{where}: residual_from must point to an earlier layer")
                if layer.in_channels != inputs[src]:
                    raise DimensionError(
                        f"{where}: residual carries {inputs[src]} channels, spec says {layer.in_channels}"
                    )
                if layer.out_channels != channels:
                    raise DimensionError(
                        f"{where}: main path has {channels} channels, spec says {layer.out_channels}"
                    )
                if layer.in_channels != layer.out_channels and not layer.projection:
                    raise DimensionError(f"{where}: channel change on the residual needs a projection")
                continue
            if layer.in_channels != channels:
                raise DimensionError(
                    f"{where}: expects {layer.in_channels} input channels, previous layer gives {channels}"
                )
            if layer.kind in (LayerKind.BN, LayerKind.RELU, LayerKind.GLOBAL_POOL):
                if layer.out_channels != layer.in_channels:
                    raise DimensionError(f"{where}: must preserve channels")
            if layer.group is not None:
                if not layer.kind.is_conv:
                    raise DimensionError(f"{where}: only convolutions can join a sharing group")
                if layer.group not in self.groups:
                    raise DimensionError(f"{where}: unknown group '{layer.group}'")
                if self.groups[layer.group].weight_shape != layer.weight_shape:
                    raise DimensionError(
                        f"{where}: weight shape {layer.weight_shape} differs from group "
                        f"'{layer.group}' bank shape {self.groups[layer.group].weight_shape}"
                    )
            channels = layer.out_channels
        for group_id, group in self.groups.items():
            if not self.group_members(group_id):
                raise DimensionError(f"{self.name}: group '{group_id}' has no member layers")
            if group.k < 1:
                raise DimensionError(f"{self.name}: group '{group_id}' needs k >= 1")

    @property
    def output_channels(self) -> int:
        return self.layers[-1].out_channels if self.layers else self.input_channels

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "input_channels": self.input_channels,
            "layers": [layer.to_dict() for layer in self.layers],
            "groups": [g.to_dict() for g in self.groups.values()],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ArchitectureSpec":
        groups = [GroupSpec.from_dict(g) for g in d.get("groups", [])]
        spec = cls(
            name=d["name"],
            layers=[LayerSpec.from_dict(layer) for layer in d["layers"]],
            groups={g.group_id: g for g in groups},
            input_channels=int(d.get("input_channels", 2)),
        )
        spec.validate()
        return spec

    def to_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "ArchitectureSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except DimensionError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise UsageError(f"Invalid architecture spec '{path}': {e}") from e


@dataclass
class ParamCountReport:
    """Learnable parameter counts split by component."""

    templates: int = 0
    coefficients: int = 0
    bn: int = 0
    individual_convs: int = 0
    classifier: int = 0

    @property
    def total(self) -> int:
        return self.templates + self.coefficients + self.bn + self.individual_convs + self.classifier

    @property
    def total_millions(self) -> float:
        return round(self.total / 1e6, 1)

    def as_dict(self) -> Dict[str, int]:
        return {
            "templates": self.templates,
            "coefficients": self.coefficients,
            "bn": self.bn,
            "individual_convs": self.individual_convs,
            "classifier": self.classifier,
            "total": self.total,
        }


def count_params(spec: ArchitectureSpec) -> ParamCountReport:
    """Exact learnable parameter count of a spec.

    Grouped convolutions contribute their group's k templates once plus one
    coefficient per (member layer, template); all other layers contribute
    their full tensors. Conv biases count as individual conv parameters.
    """
    spec.validate()
    report = ParamCountReport()
    for layer in spec.layers:
        kind = layer.kind
        if kind.is_conv:
            if layer.group is None:
                k = kind.kernel_size
                report.individual_convs += layer.out_channels * layer.in_channels * k * k
            if layer.bias:
                report.individual_convs += layer.out_channels
        elif kind is LayerKind.BN:
            report.bn += 2 * layer.out_channels
        elif kind is LayerKind.LINEAR:
            report.classifier += layer.in_channels * layer.out_channels
            if layer.bias:
                report.classifier += layer.out_channels
        elif kind is LayerKind.SKIP_ADD and layer.projection:
            report.individual_convs += layer.in_channels * layer.out_channels
    for group_id, group in spec.groups.items():
        members = len(spec.group_members(group_id))
        template_size = 1
        for extent in group.weight_shape:
            template_size *= extent
        report.templates += group.k * template_size
        report.coefficients += members * group.k
    return report
