"""Lowering of sequential torch models to dense affine stacks.

Supported modules: Linear, Conv2d (stride and zero padding, single group, no
dilation), ReLU, and Flatten.  Consecutive affine operations are composed
into one matrix so the output alternates strictly affine / ReLU, matching the
verifier's network format.  Every export runs a randomized forward-agreement
check against the source model and fails loudly on disagreement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

__all__ = [
    "ExportError",
    "ExportManifest",
    "conv2d_to_matrix",
    "lower_sequential",
    "export_network",
    "export_dataset",
]


class ExportError(RuntimeError):
    """The checkpoint cannot be exported faithfully."""


@dataclass
class ExportManifest:
    checkpoint: str
    input_shape: tuple[int, ...]  # (C, H, W) for conv models, (N,) for MLPs
    out_network: str
    dataset: str | None = None  # tensor file path or "random"
    subset_size: int = 100
    out_csv: str | None = None
    seed: int = 0
    agreement_samples: int = 100
    agreement_rtol: float = 1e-4


def conv2d_to_matrix(conv: nn.Conv2d, input_shape) -> tuple[np.ndarray, np.ndarray, tuple[int, int, int]]:
    """Dense matrix and bias equivalent to a Conv2d on a fixed input shape.

    Rows follow the flattened (channel, row, column) output layout, so a
    matrix-vector product on a flattened image reproduces the convolution.
    Returns (matrix, bias, output_shape).
    """
    if conv.groups != 1:
        raise ExportError("grouped convolutions are not supported")
    if any(d != 1 for d in conv.dilation):
        raise ExportError("dilated convolutions are not supported")
    c_in, h_in, w_in = input_shape
    if conv.in_channels != c_in:
        raise ExportError(
            f"conv expects {conv.in_channels} channels, input has {c_in}"
        )
    kh, kw = conv.kernel_size
    sh, sw = conv.stride
    ph, pw = conv.padding if isinstance(conv.padding, tuple) else (conv.padding, conv.padding)
    h_out = (h_in + 2 * ph - kh) // sh + 1
    w_out = (w_in + 2 * pw - kw) // sw + 1
    if h_out <= 0 or w_out <= 0:
        raise ExportError("convolution output is empty for this input shape")

    weight = conv.weight.detach().numpy()
    c_out = conv.out_channels
    M = np.zeros((c_out * h_out * w_out, c_in * h_in * w_in))
    for co in range(c_out):
        for ho in range(h_out):
            for wo in range(w_out):
                row = (co * h_out + ho) * w_out + wo
                for ci in range(c_in):
                    for dh in range(kh):
                        hi = ho * sh - ph + dh
                        if hi < 0 or hi >= h_in:
                            continue
                        for dw in range(kw):
                            wi = wo * sw - pw + dw
                            if wi < 0 or wi >= w_in:
                                continue
                            col = (ci * h_in + hi) * w_in + wi
                            M[row, col] = weight[co, ci, dh, dw]
    if conv.bias is not None:
        bias = np.repeat(conv.bias.detach().numpy(), h_out * w_out)
    else:
        bias = np.zeros(c_out * h_out * w_out)
    return M, bias, (c_out, h_out, w_out)


def lower_sequential(model: nn.Module, input_shape) -> list[tuple[np.ndarray, np.ndarray]]:
    """Affine layer stack (weights, bias) equivalent to the model.

    Affine operations not separated by a ReLU are composed, so the result
    alternates affine / ReLU / affine ... with no trailing ReLU.
    """
    modules = _flatten_modules(model)
    shape = tuple(input_shape)
    size = int(np.prod(shape))
    # running affine accumulator, identity to start
    acc_M = np.eye(size)
    acc_b = np.zeros(size)
    acc_nontrivial = False
    layers: list[tuple[np.ndarray, np.ndarray]] = []

    for module in modules:
        if isinstance(module, nn.Linear):
            W = module.weight.detach().numpy()
            b = module.bias.detach().numpy() if module.bias is not None else np.zeros(W.shape[0])
            if W.shape[1] != acc_M.shape[0]:
                raise ExportError(
                    f"linear layer expects {W.shape[1]} inputs, model carries {acc_M.shape[0]}"
                )
            acc_M = W @ acc_M
            acc_b = W @ acc_b + b
            acc_nontrivial = True
            shape = (W.shape[0],)
        elif isinstance(module, nn.Conv2d):
            if len(shape) != 3:
                raise ExportError("convolution applied to a flattened tensor")
            M, b, shape = conv2d_to_matrix(module, shape)
            acc_M = M @ acc_M
            acc_b = M @ acc_b + b
            acc_nontrivial = True
        elif isinstance(module, nn.ReLU):
            if not acc_nontrivial:
                raise ExportError("ReLU with no preceding affine operation")
            layers.append((acc_M, acc_b))
            size = acc_M.shape[0]
            acc_M = np.eye(size)
            acc_b = np.zeros(size)
            acc_nontrivial = False
        elif isinstance(module, nn.Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(module, (nn.Identity, nn.Dropout)):
            continue  # identity at inference time
        else:
            raise ExportError(f"unsupported module type {type(module).__name__}")

    if not acc_nontrivial:
        raise ExportError("model must end in an affine operation, not an activation")
    layers.append((acc_M, acc_b))
    return layers


def _flatten_modules(model: nn.Module):
    if isinstance(model, nn.Sequential):
        out = []
        for child in model:
            out.extend(_flatten_modules(child))
        return out
    return [model]


def _stack_forward(layers, x: np.ndarray) -> np.ndarray:
    for k, (W, b) in enumerate(layers):
        x = W @ x + b
        if k < len(layers) - 1:
            x = np.maximum(x, 0.0)
    return x


def check_forward_agreement(
    model: nn.Module,
    layers,
    input_shape,
    n_samples: int = 100,
    rtol: float = 1e-4,
    seed: int = 0,
) -> float:
    """Worst relative disagreement between the source model and the lowered
    stack on random inputs; raises ExportError beyond tolerance."""
    rng = np.random.default_rng(seed)
    model = model.eval()
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_samples):
            x = rng.uniform(0.0, 1.0, size=input_shape).astype(np.float64)
            want = model(torch.tensor(x[None], dtype=torch.float64)).numpy().ravel()
            got = _stack_forward(layers, x.ravel())
            err = float(np.abs(got - want).max())
            scale = max(1.0, float(np.abs(want).max()))
            worst = max(worst, err / scale)
    if worst > rtol:
        raise ExportError(
            f"lowered network disagrees with the source model: "
            f"relative error {worst:.3e} exceeds {rtol:.1e}"
        )
    return worst


def export_network(manifest: ExportManifest) -> list[tuple[np.ndarray, np.ndarray]]:
    """Lower the checkpoint and write the network JSON.

    The forward-agreement check is mandatory; a failing export writes
    nothing.
    """
    model = torch.load(manifest.checkpoint, weights_only=False)
    if not isinstance(model, nn.Module):
        raise ExportError(f"{manifest.checkpoint}: not a torch module")
    model = model.double().eval()
    layers = lower_sequential(model, manifest.input_shape)
    check_forward_agreement(
        model,
        layers,
        manifest.input_shape,
        n_samples=manifest.agreement_samples,
        rtol=manifest.agreement_rtol,
        seed=manifest.seed,
    )
    doc = {
        "layers": [
            {"weights": W.tolist(), "bias": b.tolist()} for W, b in layers
        ]
    }
    with open(manifest.out_network, "w") as fh:
        json.dump(doc, fh)
    return layers


def export_dataset(manifest: ExportManifest, model: nn.Module | None = None) -> int:
    """Write a CSV subset: one row per sample, integer label first, then the
    flattened values in [0, 1].  The subset choice is a seeded shuffle, so a
    fixed seed always selects the same rows."""
    if manifest.out_csv is None:
        raise ExportError("no output CSV path given")
    rng = np.random.default_rng(manifest.seed)
    size = int(np.prod(manifest.input_shape))

    if manifest.dataset == "random":
        data = rng.uniform(0.0, 1.0, size=(manifest.subset_size, size))
        if model is None:
            model = torch.load(manifest.checkpoint, weights_only=False)
        model = model.double().eval()
        with torch.no_grad():
            batch = torch.tensor(
                data.reshape(-1, *manifest.input_shape), dtype=torch.float64
            )
            labels = model(batch).argmax(dim=1).numpy()
        chosen = data
    else:
        data, labels = _load_tensor_dataset(manifest.dataset)
        if data.shape[0] < manifest.subset_size:
            raise ExportError(
                f"dataset has {data.shape[0]} samples, need {manifest.subset_size}"
            )
        order = rng.permutation(data.shape[0])[: manifest.subset_size]
        chosen = data[order].reshape(manifest.subset_size, -1)
        labels = labels[order]
        if chosen.shape[1] != size:
            raise ExportError(
                f"dataset rows have {chosen.shape[1]} values, expected {size}"
            )
        lo, hi = float(chosen.min()), float(chosen.max())
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise ExportError(f"dataset values outside [0, 1]: range [{lo}, {hi}]")
        chosen = np.clip(chosen, 0.0, 1.0)

    with open(manifest.out_csv, "w") as fh:
        for label, row in zip(labels, chosen):
            fh.write(",".join([str(int(label))] + [format(v, ".10g") for v in row]) + "\n")
    return manifest.subset_size


def _load_tensor_dataset(path):
    if str(path).endswith(".npz"):
        blob = np.load(path)
        return np.asarray(blob["data"], dtype=float), np.asarray(blob["labels"], dtype=int)
    blob = torch.load(path, weights_only=False)
    if isinstance(blob, dict) and "data" in blob and "labels" in blob:
        data = np.asarray(blob["data"], dtype=float)
        labels = np.asarray(blob["labels"], dtype=int)
        return data, labels
    raise ExportError(f"{path}: expected an .npz or torch dict with 'data' and 'labels'")
