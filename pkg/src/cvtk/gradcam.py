"""Class-discriminative localization maps from gradients at the final
convolutional layer, plus heatmap overlay rendering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .models import cam_layer
from .train import Checkpoint, instantiate_model, preprocess


class GradCamError(RuntimeError):
    pass


@dataclass
class CamMap:
    grid: np.ndarray  # rectified map at feature resolution, all >= 0
    target_class: int
    upsampled: np.ndarray  # input-resolution map, min-max normalized to [0, 1]


def grad_cam(
    model: torch.nn.Module,
    input_tensor: torch.Tensor,
    target_class: int,
    target_layer: torch.nn.Module,
) -> CamMap:
    """Localization map for ``target_class`` from one preprocessed image.

    Channel weights are the spatial means of the class-score gradient on the
    target layer's feature maps; the map is the rectified weighted sum,
    bilinearly upsampled to the input resolution and min-max normalized.
    Needs exclusive use of the model's gradient state.
    """
    if input_tensor.dim() == 3:
        input_tensor = input_tensor.unsqueeze(0)
    if input_tensor.shape[0] != 1:
        raise GradCamError("grad_cam processes one image at a time")
    # gradients must reach the target layer even when it sits at the input
    input_tensor = input_tensor.detach().clone().requires_grad_(True)

    activations: list[torch.Tensor] = []
    gradients: list[torch.Tensor] = []

    def fwd_hook(_module, _inp, out):
        activations.append(out)

    def bwd_hook(_module, _grad_in, grad_out):
        gradients.append(grad_out[0])

    h1 = target_layer.register_forward_hook(fwd_hook)
    h2 = target_layer.register_full_backward_hook(bwd_hook)
    was_training = model.training
    try:
        model.eval()
        model.zero_grad(set_to_none=True)
        logits = model(input_tensor)
        if not 0 <= target_class < logits.shape[1]:
            raise GradCamError(f"target class {target_class} out of range")
        logits[0, target_class].backward()
    finally:
        h1.remove()
        h2.remove()
        model.train(was_training)

    if not activations or not gradients:
        raise GradCamError("target layer produced no activations/gradients")
    acts = activations[0]
    grads = gradients[0]
    if acts.dim() != 4:
        raise GradCamError("target layer output is not a conv feature map")

    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * acts).sum(dim=1, keepdim=True))
    grid = cam[0, 0].detach().cpu().numpy()

    up = F.interpolate(cam, size=input_tensor.shape[-2:], mode="bilinear", align_corners=False)
    up = up[0, 0].detach().cpu().numpy()
    peak = float(up.max())
    if peak <= 0:
        up = np.zeros_like(up)
    elif peak - float(up.min()) < 1e-12:
        # constant positive map: normalize to all-ones
        up = np.ones_like(up)
    else:
        up = (up - up.min()) / (peak - up.min())
    return CamMap(grid=grid, target_class=int(target_class), upsampled=up)


def grad_cam_checkpoint(
    ckpt: Checkpoint,
    image: Image.Image,
    target_class: int,
    model: Optional[torch.nn.Module] = None,
) -> CamMap:
    """Grad-CAM over a checkpointed backbone, resolving its conv layer."""
    if model is None:
        model = instantiate_model(ckpt)
    layer = cam_layer(model, ckpt.backbone)
    tensor = preprocess(image, ckpt.image_size())
    return grad_cam(model, tensor, target_class, layer)


_JET_STOPS = np.array(
    [
        (0.0, (0, 0, 128)),
        (0.35, (0, 255, 255)),
        (0.5, (0, 255, 0)),
        (0.65, (255, 255, 0)),
        (1.0, (128, 0, 0)),
    ],
    dtype=object,
)


def _jet(values: np.ndarray) -> np.ndarray:
    """Deterministic jet-style colormap; values in [0,1] -> uint8 RGB."""
    stops = [float(s) for s, _ in _JET_STOPS]
    colors = np.array([c for _, c in _JET_STOPS], dtype=np.float64)
    out = np.zeros(values.shape + (3,), dtype=np.float64)
    v = np.clip(values, 0.0, 1.0)
    for k in range(len(stops) - 1):
        lo, hi = stops[k], stops[k + 1]
        mask = (v >= lo) & (v <= hi) if k == len(stops) - 2 else (v >= lo) & (v < hi)
        t = np.zeros_like(v)
        t[mask] = (v[mask] - lo) / (hi - lo)
        out[mask] = colors[k] * (1 - t[mask])[..., None] + colors[k + 1] * t[mask][..., None]
    return out.round().astype(np.uint8)


def overlay(cam: CamMap, image: Image.Image, alpha: float = 0.5) -> Image.Image:
    """Alpha-blend the heat-colored map over the input image.

    The map must already be at image resolution; rendering is deterministic.
    """
    rgb = image.convert("RGB")
    w, h = rgb.size
    if cam.upsampled.shape != (h, w):
        raise GradCamError(
            f"map shape {cam.upsampled.shape} does not match image size {(h, w)}"
        )
    heat = _jet(cam.upsampled)
    base = np.asarray(rgb, dtype=np.float64)
    blended = (1 - alpha) * base + alpha * heat
    return Image.fromarray(blended.round().astype(np.uint8), mode="RGB")
