import logging
from pathlib import Path
from typing import Dict, Hashable, Iterator, List, Optional, Union

import numpy as np
import pandas as pd

__all__ = ["write_lsm_csv", "pgm_text", "write_pgm", "folded_graph_dot", "write_dot"]

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def write_lsm_csv(values: np.ndarray, path: PathLike) -> None:
    """L x L matrix as headerless CSV with 9 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(np.asarray(values, dtype=np.float64)).to_csv(
        path, header=False, index=False, float_format="%.9g"
    )


def pgm_text(values: np.ndarray) -> str:
    """ASCII PGM ("P2", maxval 255) with pixel = round(255 * value), values clipped to [0, 1]."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    pixels = np.rint(255.0 * np.clip(values, 0.0, 1.0)).astype(int)
    lines = ["P2", f"{w} {h}", "255"]
    lines.extend(" ".join(str(p) for p in row) for row in pixels)
    return "\n".join(lines) + "\n"


def write_pgm(values: np.ndarray, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(pgm_text(values), encoding="ascii")


def _gvquote(s) -> str:
    return '"{}"'.format(str(s).replace('"', r"\""))


def _node_id(cluster: Hashable) -> str:
    return _gvquote(f"c{cluster}")


def folded_graph_dot(
    graph,
    members: Optional[Dict[Hashable, List[int]]] = None,
    name: str = "folded",
) -> Iterator[str]:
    """Graphviz lines for a `FoldedGraph`.

    Loops are drawn as a back edge from the last to the first body node,
    labelled ``xN``; layers whose input carries a -1 multiplier get an extra
    red edge labelled ``-1``.

    Use like so::

        with open("graph.dot", "w") as f:
            f.writelines(folded_graph_dot(graph))
    """
    yield "digraph {} {{\n".format(_gvquote(name))
    yield "  rankdir=LR;\n"
    yield '  "in" [shape="point"];\n'
    yield '  "out" [shape="point"];\n'
    for cluster in graph.nodes:
        label = f"cluster {cluster}"
        if members and cluster in members:
            label += "\\nlayers " + ",".join(str(m) for m in members[cluster])
        yield "  {} [shape=\"box\" label={}];\n".format(_node_id(cluster), _gvquote(label))

    sequence = graph.unroll()
    yield '  "in" -> {};\n'.format(_node_id(sequence[0]))
    seen = set()
    for a, b in graph.forward_edges():
        if (a, b) in seen:
            continue
        seen.add((a, b))
        yield "  {} -> {};\n".format(_node_id(a), _node_id(b))
    for loop in graph.loops:
        yield "  {} -> {} [label={} style=\"dashed\"];\n".format(
            _node_id(loop.exit), _node_id(loop.entry), _gvquote(f"x{loop.count}")
        )
    for position in sorted(graph.input_signs):
        source = '"in"' if position == 0 else _node_id(sequence[position - 1])
        yield "  {} -> {} [label=\"-1\" color=\"red\"];\n".format(source, _node_id(sequence[position]))
    yield '  {} -> "out";\n'.format(_node_id(sequence[-1]))
    yield "}\n"


def write_dot(lines, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(lines)
    logger.debug(f"Wrote DOT graph to {path}")
