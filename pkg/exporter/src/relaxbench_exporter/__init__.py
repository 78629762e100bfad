"""Checkpoint and dataset exporter for the dense-ReLU verifier.

Lowers sequential dense/conv/ReLU torch models to stacks of plain affine
layers (convolutions become explicit sparse-patterned dense matrices) and
writes them in the verifier's network JSON format, together with CSV dataset
subsets.
"""

from relaxbench_exporter.lowering import (
    ExportError,
    ExportManifest,
    conv2d_to_matrix,
    export_dataset,
    export_network,
    lower_sequential,
)

__all__ = [
    "ExportError",
    "ExportManifest",
    "conv2d_to_matrix",
    "export_dataset",
    "export_network",
    "lower_sequential",
]
