"""Feature backbones for the exporter.

Each backbone maps a resized RGB image to a dense feature map together with
its pixel geometry (the pixel coordinate of the first feature and the pixel
step between neighboring features), so the exporter can resample features
onto the requested output grid.

Two backbones are provided:

- ``dino_vits8``: the pretrained self-supervised ViT-S/8 transformer fetched
  through torch.hub. Needs downloadable weights.
- ``randconv``: a weight-frozen random convolutional network seeded from a
  constant. It needs no downloads, is deterministic, and is translation
  equivariant up to border effects, which makes it suitable for offline
  pipelines and contract tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class ModelLoadError(RuntimeError):
    """Backbone weights could not be obtained or instantiated."""


@dataclass(frozen=True)
class FeatureMap:
    """Dense features plus their geometry in resized-image pixels."""

    data: np.ndarray  # (fh, fw, dim) float32
    origin_px: tuple[float, float]  # pixel center of feature (0, 0)
    step_px: float  # pixel distance between adjacent features


def _image_tensor(rgb: np.ndarray) -> torch.Tensor:
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


class RandConvBackbone:
    """Three random convolution layers with fixed weights.

    Stride-1 convolutions with zero padding keep one feature per pixel, so
    the effective feature step is 1 px and any output stride is valid.
    """

    name = "randconv"
    min_step_px = 1
    dim = 64

    def __init__(self, seed: int = 0):
        gen = torch.Generator().manual_seed(seed)
        layers = []
        channels = [3, 32, 64, self.dim]
        for c_in, c_out in zip(channels, channels[1:]):
            conv = torch.nn.Conv2d(c_in, c_out, kernel_size=5, padding=2)
            with torch.no_grad():
                torch.nn.init.normal_(conv.weight, std=(2.0 / (25 * c_in)) ** 0.5,
                                      generator=gen)
                torch.nn.init.zeros_(conv.bias)
            layers.append(conv)
        self._layers = layers
        for layer in layers:
            layer.eval()

    @torch.no_grad()
    def features(self, rgb: np.ndarray, layer: int = -1,
                 facet: str = "token") -> FeatureMap:
        x = _image_tensor(rgb)
        x = x - x.mean(dim=(2, 3), keepdim=True)
        for i, conv in enumerate(self._layers):
            x = conv(x)
            if i < len(self._layers) - 1:
                x = torch.relu(x)
        feat = x.squeeze(0).permute(1, 2, 0).numpy().astype(np.float32)
        return FeatureMap(data=feat, origin_px=(0.0, 0.0), step_px=1.0)


class DinoViTBackbone:
    """Pretrained DINO ViT-S/8 via torch.hub; features are the final-layer
    tokens or, with facet="key", the key projections of the last attention
    block (common dense-descriptor practice)."""

    name = "dino_vits8"
    patch_px = 8
    min_step_px = 4  # half-patch overlap is the finest supported extraction

    def __init__(self):
        try:
            self._model = torch.hub.load("facebookresearch/dino:main",
                                         "dino_vits8")
        except Exception as e:  # hub raises a zoo of network/IO errors
            raise ModelLoadError(
                f"cannot fetch dino_vits8 weights ({e}); pass --model "
                "randconv for the offline backbone") from e
        self._model.eval()

    @torch.no_grad()
    def features(self, rgb: np.ndarray, layer: int = -1,
                 facet: str = "token") -> FeatureMap:
        h, w = rgb.shape[:2]
        ph = (h // self.patch_px) * self.patch_px
        pw = (w // self.patch_px) * self.patch_px
        x = _image_tensor(rgb[:ph, :pw])
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        x = (x - mean) / std

        captured = {}
        if facet == "key":
            block = self._model.blocks[layer]

            def hook(_module, _inp, out):
                captured["qkv"] = out

            handle = block.attn.qkv.register_forward_hook(hook)
            try:
                self._model.get_intermediate_layers(x, n=1)
            finally:
                handle.remove()
            qkv = captured["qkv"]  # (1, 1 + tokens, 3 * dim)
            dim = qkv.shape[-1] // 3
            tokens = qkv[0, 1:, dim:2 * dim]
        elif facet == "token":
            out = self._model.get_intermediate_layers(x, n=abs(layer))
            tokens = out[0][0, 1:, :]
        else:
            raise ValueError(f"unknown facet {facet!r}")

        fh, fw = ph // self.patch_px, pw // self.patch_px
        feat = tokens.reshape(fh, fw, -1).numpy().astype(np.float32)
        half = (self.patch_px - 1) / 2.0
        return FeatureMap(data=feat, origin_px=(half, half),
                          step_px=float(self.patch_px))


_BACKBONES = {
    RandConvBackbone.name: RandConvBackbone,
    DinoViTBackbone.name: DinoViTBackbone,
}


def backbone_class(name: str):
    try:
        return _BACKBONES[name]
    except KeyError:
        raise ModelLoadError(
            f"unknown model {name!r}; available: {sorted(_BACKBONES)}") from None


def load_backbone(name: str):
    return backbone_class(name)()
