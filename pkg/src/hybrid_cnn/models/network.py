"""
Trainable network instantiated from an `ArchitectureSpec`.

Supports stride-1 conv1x1/conv3x3 (individual or template-shared), batchnorm,
relu and identity skip-adds, which covers the shortest-path CNN/SCNN and any
custom stack of the same layer kinds.
"""

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple, Union

import numpy as np

from hybrid_cnn.core import RunningStats, Tensor
from hybrid_cnn.core import functional as F
from hybrid_cnn.errors import DimensionError, StateError, UsageError
from hybrid_cnn.models.specs import ArchitectureSpec, LayerKind
from hybrid_cnn.sharing import (
    ForwardStrategy,
    InitScheme,
    SharingGroup,
    SparseDistribution,
    generate_weights,
    init_coefficients,
    init_kernel,
    init_templates,
    shared_conv_forward,
)

if TYPE_CHECKING:
    from hybrid_cnn.analysis.tying import TieAssignment

logger = logging.getLogger(__name__)

__all__ = ["NamedParameter", "Network"]


@dataclass
class NamedParameter:
    name: str
    tensor: Tensor
    is_coefficient: bool = False


class Network:
    """A network whose layers follow an `ArchitectureSpec`.

    Args:
        spec: The architecture; validated on construction.
        seed: Seed for kernel, template and coefficient initialisation.
        init_scheme: Coefficient initialisation for every sharing group.
        strategy: Forward strategy of the shared convolutions.
        sparse_distribution: Entry distribution of the sparse coefficient init.
    """

    def __init__(
        self,
        spec: ArchitectureSpec,
        seed: int = 0,
        init_scheme: Union[InitScheme, str] = InitScheme.ORTHOGONAL,
        strategy: Union[ForwardStrategy, str] = ForwardStrategy.GENERATED_WEIGHTS,
        sparse_distribution: Union[SparseDistribution, str] = SparseDistribution.NORMAL,
    ) -> None:
        spec.validate()
        unsupported = [
            layer.kind.value
            for layer in spec.layers
            if layer.kind in (LayerKind.GLOBAL_POOL, LayerKind.LINEAR)
            or layer.stride != 1
            or layer.projection
        ]
        if unsupported:
            raise UsageError(
                f"spec '{spec.name}' is shape-only; unsupported runtime layers: {sorted(set(unsupported))}"
            )
        self.spec = spec
        self.strategy = ForwardStrategy(strategy)
        self.init_scheme = InitScheme(init_scheme)
        self.sparse_distribution = SparseDistribution(sparse_distribution)
        rng = np.random.default_rng(seed)

        self.kernels: Dict[int, Tensor] = {}
        self.biases: Dict[int, Tensor] = {}
        self.bn_params: Dict[int, Tuple[Tensor, Tensor]] = {}
        self.running: Dict[int, RunningStats] = {}
        # -1 entries apply the sign folding of tied layers to the conv input.
        self.input_signs: Dict[int, float] = {}
        self.groups: Dict[str, SharingGroup] = {}

        for group_id, group_spec in spec.groups.items():
            members = spec.group_members(group_id)
            bank = init_templates(
                group_spec.k, group_spec.weight_shape, rng, name_prefix=f"groups.{group_id}.templates"
            )
            coefficients = init_coefficients(
                len(members),
                group_spec.k,
                scheme=self.init_scheme,
                seed=rng,
                distribution=self.sparse_distribution,
                name=f"groups.{group_id}.coefficients",
            )
            self.groups[group_id] = SharingGroup(
                group_id=group_id,
                bank=bank,
                coefficients=coefficients,
                members=members,
                strategy=self.strategy,
            )

        for i, layer in enumerate(spec.layers):
            if layer.kind.is_conv:
                if layer.group is None:
                    self.kernels[i] = Tensor(
                        init_kernel(layer.weight_shape, rng), requires_grad=True, name=f"layers.{i}.weight"
                    )
                if layer.bias:
                    self.biases[i] = Tensor(np.zeros(layer.out_channels), requires_grad=True, name=f"layers.{i}.bias")
            elif layer.kind is LayerKind.BN:
                self.bn_params[i] = (
                    Tensor(np.ones(layer.out_channels), requires_grad=True, name=f"layers.{i}.gamma"),
                    Tensor(np.zeros(layer.out_channels), requires_grad=True, name=f"layers.{i}.beta"),
                )
                self.running[i] = RunningStats()
        logger.debug(f"Network '{spec.name}' initialised with {self.num_parameters()} parameters")

    # ------------------------------------------------------------------ params
    def named_parameters(self) -> List[NamedParameter]:
        """All learnable tensors in a fixed order (groups first, then layers)."""
        params: List[NamedParameter] = []
        for group_id, group in self.groups.items():
            for t in group.bank.templates:
                params.append(NamedParameter(t.name, t))
            params.append(NamedParameter(group.coefficients.values.name, group.coefficients.values, True))
        for i in range(len(self.spec.layers)):
            if i in self.kernels:
                params.append(NamedParameter(self.kernels[i].name, self.kernels[i]))
            if i in self.biases:
                params.append(NamedParameter(self.biases[i].name, self.biases[i]))
            if i in self.bn_params:
                gamma, beta = self.bn_params[i]
                params.append(NamedParameter(gamma.name, gamma))
                params.append(NamedParameter(beta.name, beta))
        return params

    def parameters(self) -> List[Tensor]:
        return [p.tensor for p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.tensor.size for p in self.named_parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def sharing_groups(self) -> List[SharingGroup]:
        return list(self.groups.values())

    # ----------------------------------------------------------------- forward
    def kernel_for(self, layer_index: int) -> Tensor:
        """Effective kernel of conv layer `layer_index` (generated for shared layers)."""
        layer = self.spec.layers[layer_index]
        if not layer.kind.is_conv:
            raise UsageError(f"layer {layer_index} is not a convolution")
        if layer.group is None:
            return self.kernels[layer_index]
        group = self.groups[layer.group]
        return generate_weights(group, group.position_of(layer_index))

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        """Run the network on x of shape [N, Cin, H, W]; returns raw logits."""
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise DimensionError(
                f"network '{self.spec.name}' expects [N, {self.spec.input_channels}, H, W], got {x.shape}"
            )
        layer_inputs: List[Tensor] = []
        h = x
        for i, layer in enumerate(self.spec.layers):
            layer_inputs.append(h)
            kind = layer.kind
            if kind.is_conv:
                conv_in = h
                sign = self.input_signs.get(i, 1.0)
                if sign != 1.0:
                    conv_in = F.scale(conv_in, sign)
                padding = kind.kernel_size // 2
                if layer.group is None:
                    h = F.conv2d(conv_in, self.kernels[i], padding=padding)
                else:
                    group = self.groups[layer.group]
                    h = shared_conv_forward(group, group.position_of(i), conv_in, padding=padding)
                if i in self.biases:
                    h = F.add_channel_bias(h, self.biases[i])
            elif kind is LayerKind.BN:
                gamma, beta = self.bn_params[i]
                h = F.batchnorm2d(h, gamma, beta, self.running[i], train=train)
            elif kind is LayerKind.RELU:
                h = F.relu(h)
            elif kind is LayerKind.SKIP_ADD:
                h = F.add(layer_inputs[layer.residual_from], h)
        return h

    __call__ = forward

    def predict(self, inputs: np.ndarray, batch_size: int = 32, threads: int = 1) -> np.ndarray:
        """Eval-mode logits for a numpy batch, evaluated in chunks.

        Eval mode only reads parameters and running statistics, so chunks can
        be spread over `threads` worker threads.
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        starts = list(range(0, inputs.shape[0], batch_size))
        if not starts:
            return np.zeros((0, self.spec.output_channels) + inputs.shape[2:])

        def _chunk(start: int) -> np.ndarray:
            return self.forward(Tensor(inputs[start : start + batch_size]), train=False).data

        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outputs = list(pool.map(_chunk, starts))
        else:
            outputs = [_chunk(s) for s in starts]
        return np.concatenate(outputs)

    @property
    def has_running_stats(self) -> bool:
        return all(stats.initialized for stats in self.running.values())

    def infer(self, inputs: np.ndarray, batch_size: int = 32, threads: int = 1) -> np.ndarray:
        """Logits for evaluation, also for networks that never took a training step.

        Uses `predict` when every batchnorm has running statistics; otherwise
        each chunk is normalised with its own batch statistics on a throwaway
        copy, leaving this network untouched.
        """
        if self.has_running_stats:
            return self.predict(inputs, batch_size=batch_size, threads=threads)
        logger.debug(f"Network '{self.spec.name}' has no running statistics, using batch statistics")
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.shape[0] == 0:
            return np.zeros((0, self.spec.output_channels) + inputs.shape[2:])
        scratch = self.copy()
        outputs = [
            scratch.forward(Tensor(inputs[s : s + batch_size]), train=True).data
            for s in range(0, inputs.shape[0], batch_size)
        ]
        return np.concatenate(outputs)

    # ------------------------------------------------------------------- state
    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter and batchnorm buffer, keyed by name."""
        state = {p.name: p.tensor.data.copy() for p in self.named_parameters()}
        for i, stats in self.running.items():
            if stats.initialized:
                state[f"layers.{i}.running_mean"] = stats.mean.copy()
                state[f"layers.{i}.running_var"] = stats.var.copy()
        for i, sign in sorted(self.input_signs.items()):
            state[f"layers.{i}.input_sign"] = np.array([sign])
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Load values produced by `state_dict`.

        Raises:
            DimensionError: A tensor is missing or has the wrong shape; the
                message names the offending tensor.
        """
        for p in self.named_parameters():
            if p.name not in state:
                raise DimensionError(f"state is missing tensor '{p.name}'")
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.tensor.shape:
                raise DimensionError(
                    f"tensor '{p.name}' has shape {value.shape} in the state but {p.tensor.shape} in the network"
                )
        for p in self.named_parameters():
            p.tensor.data[...] = state[p.name]
        for i in self.running:
            mean = state.get(f"layers.{i}.running_mean")
            var = state.get(f"layers.{i}.running_var")
            if mean is None or var is None:
                self.running[i] = RunningStats()
                continue
            c = self.bn_params[i][0].shape[0]
            if np.shape(mean) != (c,) or np.shape(var) != (c,):
                raise DimensionError(f"running statistics of layer {i} do not have shape ({c},)")
            self.running[i] = RunningStats(mean=np.array(mean, dtype=np.float64), var=np.array(var, dtype=np.float64))
        self.input_signs = {
            i: float(state[f"layers.{i}.input_sign"][0])
            for i in self.spec.conv_indices()
            if f"layers.{i}.input_sign" in state
        }

    def copy(self) -> "Network":
        """Independent deep copy (parameters, buffers and groups)."""
        return copy.deepcopy(self)

    def fold_signs(self, assignment: "TieAssignment") -> int:
        """Move the -1 of negatively tied layers from the kernel to the input edge.

        A layer tied with sign -1 holds -alpha(rep); it is rewritten to hold
        +alpha(rep) and gets an input multiplier of -1. Since
        conv(-x, W) == conv(x, -W) the network function is unchanged.

        Returns:
            Number of layers whose sign was folded.

        Raises:
            UsageError: The assignment's group is not part of this network.
            StateError: A negatively tied row is not -alpha(rep), i.e. the
                tie has not been applied to this network.
        """
        if assignment.group_id not in self.groups:
            raise UsageError(f"network has no sharing group '{assignment.group_id}'")
        group = self.groups[assignment.group_id]
        values = group.coefficients.values.data
        folded = 0
        for pos, sign in sorted(assignment.sign.items()):
            layer = group.members[pos]
            if sign > 0 or self.input_signs.get(layer, 1.0) < 0:
                continue
            rep = assignment.representative[pos]
            if not np.array_equal(values[pos], -values[rep]):
                raise StateError(
                    f"layer {layer} of group '{group.group_id}' is not tied to -alpha({rep}); apply the tie first"
                )
            values[pos] = values[rep]
            self.input_signs[layer] = -1.0
            folded += 1
        logger.debug(f"Folded {folded} negative ties of group '{group.group_id}' into input multipliers")
        return folded

    def bn_after(self, conv_index: int) -> Optional[int]:
        """Index of the batchnorm layer fed directly by conv `conv_index`, if any."""
        nxt = conv_index + 1
        if nxt < len(self.spec.layers) and self.spec.layers[nxt].kind is LayerKind.BN:
            return nxt
        return None
