"""Backbone registry, classification-head adaptation and complexity reporting.

All torchvision backbones used in the experiments are supported, plus a
``tiny`` CNN for fast CPU tests and toy pipelines. The final classification
layer of every backbone is replaced with a task-sized head; the rest of the
network can be initialized from ImageNet pretraining.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch
import torch.nn as nn
from torchvision import models as tv_models

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class UnknownBackboneError(ValueError):
    pass


class TinyBackbone(nn.Module):
    """Three-conv CNN mirroring the features/classifier layout of the big nets."""

    def __init__(self, num_classes: int = 2):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(64, num_classes)

    def forward(self, x):
        x = self.features(x)
        x = torch.flatten(self.avgpool(x), 1)
        return self.classifier(x)


@dataclass(frozen=True)
class BackboneEntry:
    name: str
    tv_name: Optional[str]  # torchvision model name; None for local nets
    head: str  # head replacement strategy
    input_size: int = 224
    cam_attr: str = "features"  # module holding the final conv feature maps


BACKBONES: dict[str, BackboneEntry] = {
    "resnet18": BackboneEntry("resnet18", "resnet18", "fc", 224, "layer4"),
    "resnet50": BackboneEntry("resnet50", "resnet50", "fc", 224, "layer4"),
    "resnet101": BackboneEntry("resnet101", "resnet101", "fc", 224, "layer4"),
    "alexnet": BackboneEntry("alexnet", "alexnet", "classifier.6", 224, "features"),
    "vgg16": BackboneEntry("vgg16", "vgg16", "classifier.6", 224, "features"),
    "densenet121": BackboneEntry("densenet121", "densenet121", "classifier", 224, "features"),
    "squeezenet": BackboneEntry("squeezenet", "squeezenet1_0", "squeezenet", 224, "features"),
    "inception_v3": BackboneEntry("inception_v3", "inception_v3", "fc", 299, "Mixed_7c"),
    "mobilenet_v2": BackboneEntry("mobilenet_v2", "mobilenet_v2", "classifier.1", 224, "features"),
    "efficientnet_b1": BackboneEntry("efficientnet_b1", "efficientnet_b1", "classifier.1", 224, "features"),
    "tiny": BackboneEntry("tiny", None, "classifier", 64, "features"),
}

_ALIASES = {
    "squeezenet1_0": "squeezenet",
    "inception": "inception_v3",
    "inceptionnet_v3": "inception_v3",
    "densenet": "densenet121",
    "mobilenet": "mobilenet_v2",
    "efficientnet": "efficientnet_b1",
    "efficientnet-b1": "efficientnet_b1",
}


def resolve_backbone(name: str) -> BackboneEntry:
    key = name.lower().replace(" ", "_")
    key = _ALIASES.get(key, key)
    try:
        return BACKBONES[key]
    except KeyError:
        raise UnknownBackboneError(
            f"unknown backbone {name!r}; registry: {sorted(BACKBONES)}"
        ) from None


def input_size_for(name: str) -> int:
    return resolve_backbone(name).input_size


def _get_attr(model: nn.Module, path: str) -> nn.Module:
    obj = model
    for part in path.split("."):
        obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
    return obj


def _set_attr(model: nn.Module, path: str, value: nn.Module) -> None:
    parts = path.split(".")
    obj = model
    for part in parts[:-1]:
        obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
    last = parts[-1]
    if last.isdigit():
        obj[int(last)] = value
    else:
        setattr(obj, last, value)


def _build_base(entry: BackboneEntry, pretrained: bool, num_classes: int) -> nn.Module:
    if entry.tv_name is None:
        return TinyBackbone(num_classes)
    kwargs = {}
    if pretrained:
        kwargs["weights"] = tv_models.get_model_weights(entry.tv_name).DEFAULT
    else:
        kwargs["weights"] = None
        if entry.tv_name == "inception_v3":
            # Skip the slow truncated-normal init; heads are retrained anyway.
            kwargs["init_weights"] = False
    model = tv_models.get_model(entry.tv_name, **kwargs)
    if entry.tv_name == "inception_v3":
        # Keep only the main classification path.
        model.aux_logits = False
        model.AuxLogits = None
    return model


def _replace_head(model: nn.Module, entry: BackboneEntry, num_classes: int, head_dropout: float) -> None:
    if entry.head == "squeezenet":
        # Head is a 1x1 conv followed by pooling; swap the conv.
        model.classifier[1] = nn.Conv2d(512, num_classes, kernel_size=1)
        if head_dropout > 0:
            model.classifier[0] = nn.Dropout(p=head_dropout)
        model.num_classes = num_classes
        return
    old = _get_attr(model, entry.head)
    new = nn.Linear(old.in_features, num_classes)
    if head_dropout > 0:
        new = nn.Sequential(nn.Dropout(p=head_dropout), new)
    _set_attr(model, entry.head, new)


def build_model(
    backbone: str,
    num_classes: int,
    pretrained: bool = True,
    head_dropout: float = 0.0,
) -> nn.Module:
    """Backbone with its final layer replaced by a ``num_classes``-way head.

    With ``pretrained=True`` all non-head parameters come from ImageNet
    pretraining (requires the torchvision weight files to be downloadable or
    cached).
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    entry = resolve_backbone(backbone)
    model = _build_base(entry, pretrained, num_classes)
    _replace_head(model, entry, num_classes, head_dropout)
    return model


def feature_extractor(backbone: str, pretrained: bool = True) -> tuple[nn.Module, int]:
    """Backbone with the classification head removed; returns (module, feat dim).

    The module maps a batch of images to flat feature vectors.
    """
    entry = resolve_backbone(backbone)
    model = _build_base(entry, pretrained, num_classes=2)
    if entry.head == "squeezenet":
        model.classifier = nn.Sequential(nn.AdaptiveAvgPool2d((1, 1)))
        return model, 512
    if entry.tv_name is None:
        dim = model.classifier.in_features
        model.classifier = nn.Identity()
        return model, dim
    head = _get_attr(model, entry.head)
    dim = head.in_features
    _set_attr(model, entry.head, nn.Identity())
    return model, dim


class MultitaskModel(nn.Module):
    """Shared backbone with one linear head per task, outputs concatenated.

    The output layout is the per-task class counts in the given task order;
    segment boundaries are the prefix sums of ``num_classes``.
    """

    def __init__(
        self,
        backbone: str,
        num_classes: list[int] | tuple[int, ...],
        pretrained: bool = True,
        head_dropout: float = 0.0,
    ):
        super().__init__()
        self.backbone_name = backbone
        self.num_classes = tuple(int(n) for n in num_classes)
        self.encoder, feat_dim = feature_extractor(backbone, pretrained)
        self.head_dropout = nn.Dropout(head_dropout) if head_dropout > 0 else nn.Identity()
        self.heads = nn.ModuleList(nn.Linear(feat_dim, n) for n in self.num_classes)

    def forward(self, x):
        feats = self.encoder(x)
        if feats.dim() > 2:
            feats = torch.flatten(feats, 1)
        feats = self.head_dropout(feats)
        return torch.cat([head(feats) for head in self.heads], dim=1)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def canonical_parameter_count(backbone: str) -> Optional[int]:
    """Parameter count of the unmodified architecture (original 1000-way head)."""
    entry = resolve_backbone(backbone)
    if entry.tv_name is None:
        return None
    return parameter_count(tv_models.get_model(entry.tv_name, weights=None))


def complexity_report(backbones: list[str], num_classes: int) -> list[dict]:
    """Table-style complexity rows: adapted and canonical parameter counts.

    ``params_adapted`` counts the model with its ``num_classes``-way head;
    ``params_canonical`` the stock architecture. Weight size assumes fp32.
    """
    rows = []
    for name in backbones:
        model = build_model(name, num_classes, pretrained=False)
        n = parameter_count(model)
        canonical = canonical_parameter_count(name)
        rows.append(
            {
                "backbone": resolve_backbone(name).name,
                "params_adapted": n,
                "params_adapted_m": round(n / 1e6, 2),
                "params_canonical": canonical,
                "params_canonical_m": round(canonical / 1e6, 2) if canonical else None,
                "weights_mb": round(n * 4 / 2**20, 2),
            }
        )
        del model
    return rows


def cam_layer(model: nn.Module, backbone: str) -> nn.Module:
    """The module whose output are the final convolutional feature maps."""
    entry = resolve_backbone(backbone)
    try:
        return _get_attr(model, entry.cam_attr)
    except AttributeError:
        raise UnknownBackboneError(
            f"backbone {backbone!r} does not expose conv features at {entry.cam_attr!r}"
        ) from None
