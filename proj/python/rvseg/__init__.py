"""Referring video segmentation: language-guided two-stream encoder with
multi-scale dynamic filtering, at desk scale and in double precision.

The heavy lifting lives in the compiled extension ``rvseg._core``; this
package just re-exports its public surface.
"""

from rvseg._core import (
    Model,
    __version__,
    boundary_f,
    check,
    evaluate,
    iou,
    load_vocab,
    render_scene,
    tokenize,
)

__all__ = [
    "Model",
    "__version__",
    "boundary_f",
    "check",
    "evaluate",
    "iou",
    "load_vocab",
    "render_scene",
    "tokenize",
]
