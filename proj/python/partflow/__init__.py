"""Part-aware 3D generation: voxel grids, box codec, generation, metrics."""

try:
    from ._partflow import *  # noqa: F401,F403  (installed layout)
except ImportError:  # in-tree build: module sits on PYTHONPATH next to the lib
    from _partflow import *  # noqa: F401,F403
