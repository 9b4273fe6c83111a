"""
Builders for the architectures used in experiments and parameter audits.
"""

import logging
from typing import List, Optional, Union

from hybrid_cnn.errors import UsageError
from hybrid_cnn.models.specs import ArchitectureSpec, GroupSpec, LayerKind, LayerSpec

logger = logging.getLogger(__name__)

__all__ = ["PER_LAYER", "build_shortest_path_model", "build_wrn_cifar_spec"]

PER_LAYER = "per-layer"

BODY_GROUP = "body"


def build_shortest_path_model(
    shared: bool,
    depth: int = 20,
    width: int = 32,
    templates: Optional[int] = None,
    input_channels: int = 2,
) -> ArchitectureSpec:
    """CNN / SCNN for the shortest-path task.

    Layout: 1x1 conv (input_channels -> width), then `depth` residual blocks
    out = x + relu(bn(conv3x3(x))), then a 1x1 conv (width -> 1) with bias.

    Args:
        shared: Put all 3x3 convolutions into one sharing group.
        depth: Number of residual blocks.
        width: Channel count inside the body.
        templates: Templates of the body group; defaults to one per layer.
        input_channels: Input planes (queries and obstacles).
    """
    if depth < 1 or width < 1:
        raise UsageError(f"depth and width must be >= 1, got depth={depth}, width={width}")
    k = depth if templates is None else int(templates)
    if shared and k < 1:
        raise UsageError(f"templates must be >= 1, got {k}")

    group = BODY_GROUP if shared else None
    layers: List[LayerSpec] = [
        LayerSpec(LayerKind.CONV1X1, input_channels, width, name="stem"),
    ]
    for b in range(depth):
        conv_index = len(layers)
        layers.extend(
            [
                LayerSpec(LayerKind.CONV3X3, width, width, group=group, name=f"block{b}.conv"),
                LayerSpec(LayerKind.BN, width, width, name=f"block{b}.bn"),
                LayerSpec(LayerKind.RELU, width, width, name=f"block{b}.relu"),
                LayerSpec(
                    LayerKind.SKIP_ADD, width, width, name=f"block{b}.skip", residual_from=conv_index
                ),
            ]
        )
    layers.append(LayerSpec(LayerKind.CONV1X1, width, 1, name="head", bias=True))

    groups = {}
    if shared:
        groups[BODY_GROUP] = GroupSpec(BODY_GROUP, k, (width, width, 3, 3))
    name = f"{'scnn' if shared else 'cnn'}-d{depth}-w{width}" + (
        f"-k{k}" if shared and k != depth else ""
    )
    spec = ArchitectureSpec(name=name, layers=layers, groups=groups, input_channels=input_channels)
    spec.validate()
    return spec


def build_wrn_cifar_spec(
    depth: int,
    widen: int,
    templates: Union[int, str] = PER_LAYER,
    shared: bool = True,
    num_classes: int = 10,
) -> ArchitectureSpec:
    """Shape-only (SW)RN-depth-widen description for CIFAR, for counting.

    Pre-activation wide residual blocks in 3 stages of width 16w, 32w, 64w.
    With `shared`, every stage's 3x3 convolutions except the first two (the
    channel-changing block) form one sharing group of (depth-4)/3 - 2 layers
    with `templates` templates each ("per-layer" = one per layer).

    Raises:
        UsageError: If (depth - 4) is not divisible by 6.
    """
    if depth < 10 or (depth - 4) % 6 != 0:
        raise UsageError(f"WRN depth must satisfy (depth - 4) % 6 == 0 and depth >= 10, got {depth}")
    if widen < 1:
        raise UsageError(f"widen factor must be >= 1, got {widen}")
    blocks_per_stage = (depth - 4) // 6
    group_size = 2 * blocks_per_stage - 2
    if templates == PER_LAYER:
        k = group_size
    else:
        k = int(templates)
        if k < 1:
            raise UsageError(f"templates must be >= 1 or '{PER_LAYER}', got {templates}")

    widths = [16, 16 * widen, 32 * widen, 64 * widen]
    layers: List[LayerSpec] = [LayerSpec(LayerKind.CONV3X3, 3, widths[0], name="conv1")]
    groups = {}
    for stage in range(3):
        c_in, c_out = widths[stage], widths[stage + 1]
        group_id = f"stage{stage + 1}" if shared else None
        if shared:
            groups[group_id] = GroupSpec(group_id, k, (c_out, c_out, 3, 3))
        for block in range(blocks_per_stage):
            block_in = c_in if block == 0 else c_out
            prefix = f"stage{stage + 1}.block{block}"
            first = block == 0
            start = len(layers)
            layers.extend(
                [
                    LayerSpec(LayerKind.BN, block_in, block_in, name=f"{prefix}.bn1"),
                    LayerSpec(LayerKind.RELU, block_in, block_in, name=f"{prefix}.relu1"),
                    LayerSpec(
                        LayerKind.CONV3X3,
                        block_in,
                        c_out,
                        group=None if first else group_id,
                        name=f"{prefix}.conv1",
                        stride=2 if first and stage > 0 else 1,
                    ),
                    LayerSpec(LayerKind.BN, c_out, c_out, name=f"{prefix}.bn2"),
                    LayerSpec(LayerKind.RELU, c_out, c_out, name=f"{prefix}.relu2"),
                    LayerSpec(
                        LayerKind.CONV3X3,
                        c_out,
                        c_out,
                        group=None if first else group_id,
                        name=f"{prefix}.conv2",
                    ),
                    LayerSpec(
                        LayerKind.SKIP_ADD,
                        block_in,
                        c_out,
                        name=f"{prefix}.skip",
                        residual_from=start,
                        projection=block_in != c_out,
                    ),
                ]
            )
    c_final = widths[-1]
    layers.extend(
        [
            LayerSpec(LayerKind.BN, c_final, c_final, name="bn_final"),
            LayerSpec(LayerKind.RELU, c_final, c_final, name="relu_final"),
            LayerSpec(LayerKind.GLOBAL_POOL, c_final, c_final, name="pool"),
            LayerSpec(LayerKind.LINEAR, c_final, num_classes, name="fc", bias=True),
        ]
    )
    if shared:
        label = "" if templates == PER_LAYER else f"-{k}"
        name = f"swrn-{depth}-{widen}{label}"
    else:
        name = f"wrn-{depth}-{widen}"
    spec = ArchitectureSpec(name=name, layers=layers, groups=groups, input_channels=3)
    spec.validate()
    logger.debug(f"Built {name}: {len(layers)} layers, group size {group_size}, k={k}")
    return spec
