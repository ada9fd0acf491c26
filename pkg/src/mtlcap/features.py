"""Per-image spatial feature grids from a pluggable backbone, plus a binary
on-disk cache.

Real backbones (ResNet / VGGNet, ImageNet-pretrained) are consumed through
the provider registry and are frozen feature extractors; the deterministic
toy backbone ships here so the whole pipeline runs with no model downloads.

Cache entry format (little-endian): magic 'AFGR', u32 version=1, u32 L,
u32 D, then L*D float32 values row-major. Filename: <image_id>.<backbone>.afgr
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CacheMiss, CorruptEntry, ProviderUnavailable, ShapeMismatch, UndecodableImage

CACHE_MAGIC = b"AFGR"
CACHE_VERSION = 1

# (L, D) per backbone: 7x7 spatial grids for the pretrained nets,
# 4x4 for the toy backbone
BACKBONE_SHAPES = {"resnet": (49, 2048), "vggnet": (49, 512), "toy": (16, 32)}


@dataclass
class FeatureGrid:
    """L spatial positions x D channels of backbone output for one image."""

    values: np.ndarray  # (L, D) float32

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeMismatch(f"feature grid must be 2-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature values")

    @property
    def L(self):
        return self.values.shape[0]

    @property
    def D(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    weights_ref: str = ""

    def __post_init__(self):
        if self.name not in BACKBONE_SHAPES:
            raise ValueError(f"unknown backbone {self.name!r}")

    @property
    def output_L(self):
        return BACKBONE_SHAPES[self.name][0]

    @property
    def output_D(self):
        return BACKBONE_SHAPES[self.name][1]


def toy_backbone(pixels, seed: int = 0) -> FeatureGrid:
    """Deterministic test backbone: 32x32x3 pixels in [0,1] -> (16, 32) grid.

    The image is average-pooled into a 4x4 grid of cells, each cell keeping
    a 2x2x3 block of pooled values (12 numbers; pooling kernel 4x4), which
    is mapped through a fixed seeded 12x32 matrix and ReLU. Each pixel
    affects exactly one cell, i.e. one row of the grid.
    """
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.shape != (32, 32, 3):
        raise ShapeMismatch(f"expected 32x32x3 pixels, got {pixels.shape}")
    # 4x4 average pooling -> (8, 8, 3)
    pooled = pixels.reshape(8, 4, 8, 4, 3).mean(axis=(1, 3))
    # group into 4x4 cells of 2x2x3 values -> (16, 12)
    cells = pooled.reshape(4, 2, 4, 2, 3).transpose(0, 2, 1, 3, 4).reshape(16, 12)
    proj = np.random.default_rng(seed).standard_normal((12, 32)).astype(np.float32) / np.sqrt(12.0, dtype=np.float32)
    return FeatureGrid(np.maximum(cells @ proj, 0.0))


def _toy_seed(spec: BackboneSpec) -> int:
    # weights_ref "toy:<seed>" selects the projection seed; default 0
    if spec.weights_ref.startswith("toy:"):
        return int(spec.weights_ref.split(":", 1)[1])
    return 0


def _load_pixels_32(image_path):
    from PIL import Image

    try:
        with Image.open(image_path) as img:
            img = img.convert("RGB").resize((32, 32), Image.BILINEAR)
            return np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, ValueError):
        raise UndecodableImage(str(image_path)) from None


def _toy_provider(image_path, spec: BackboneSpec) -> FeatureGrid:
    return toy_backbone(_load_pixels_32(image_path), seed=_toy_seed(spec))


def _torchvision_provider(image_path, spec: BackboneSpec) -> FeatureGrid:
    """Penultimate spatial activations of a frozen ImageNet model.

    Needs torch/torchvision plus locally available pretrained weights;
    raises ProviderUnavailable otherwise.
    """
    try:
        import torch
        import torchvision.models as tvm
        from PIL import Image
        from torchvision import transforms
    except ImportError as e:
        raise ProviderUnavailable(spec.name, str(e)) from None
    try:
        if spec.name == "resnet":
            net = tvm.resnet50(weights=tvm.ResNet50_Weights.IMAGENET1K_V1)
            trunk = torch.nn.Sequential(*list(net.children())[:-2])
        else:
            net = tvm.vgg16(weights=tvm.VGG16_Weights.IMAGENET1K_V1)
            trunk = net.features
        trunk.eval()
    except Exception as e:  # weights not downloadable in offline setups
        raise ProviderUnavailable(spec.name, str(e)) from None
    prep = transforms.Compose([
        transforms.Resize(256), transforms.CenterCrop(224), transforms.ToTensor(),
        transforms.Normalize([0.485, 0.456, 0.406], [0.229, 0.224, 0.225]),
    ])
    try:
        with Image.open(image_path) as img:
            x = prep(img.convert("RGB")).unsqueeze(0)
    except (OSError, ValueError):
        raise UndecodableImage(str(image_path)) from None
    with torch.no_grad():
        fmap = trunk(x)[0]  # (D, 7, 7)
    grid = fmap.permute(1, 2, 0).reshape(-1, fmap.shape[0]).numpy()
    return FeatureGrid(grid)


_PROVIDERS = {
    "toy": _toy_provider,
    "resnet": _torchvision_provider,
    "vggnet": _torchvision_provider,
}


def register_backbone(name: str, provider) -> None:
    """Install a custom provider: callable(image_path, spec) -> FeatureGrid."""
    _PROVIDERS[name] = provider


def extract_features(image_path, spec: BackboneSpec) -> FeatureGrid:
    """Run the backbone provider on one image; deterministic for fixed
    image and weights."""
    provider = _PROVIDERS.get(spec.name)
    if provider is None:
        raise ProviderUnavailable(spec.name)
    grid = provider(image_path, spec)
    if (grid.L, grid.D) != (spec.output_L, spec.output_D):
        raise ShapeMismatch(
            f"provider for {spec.name} returned {(grid.L, grid.D)}, expected {(spec.output_L, spec.output_D)}")
    return grid


def cache_path(image_id: str, cache_dir, backbone: str) -> str:
    return os.path.join(cache_dir, f"{image_id}.{backbone}.afgr")


def cache_write(image_id: str, grid: FeatureGrid, cache_dir, backbone: str = "toy") -> str:
    """Write a cache entry atomically (temp file + rename)."""
    os.makedirs(cache_dir, exist_ok=True)
    path = cache_path(image_id, cache_dir, backbone)
    payload = (CACHE_MAGIC + struct.pack("<III", CACHE_VERSION, grid.L, grid.D)
               + np.ascontiguousarray(grid.values, dtype="<f4").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)
    return path


def cache_read(image_id: str, cache_dir, backbone: str = "toy") -> FeatureGrid:
    path = cache_path(image_id, cache_dir, backbone)
    try:
        data = open(path, "rb").read()
    except FileNotFoundError:
        raise CacheMiss(image_id) from None
    if len(data) < 16 or data[:4] != CACHE_MAGIC:
        raise CorruptEntry(image_id, "bad magic")
    version, L, D = struct.unpack("<III", data[4:16])
    if version != CACHE_VERSION:
        raise CorruptEntry(image_id, f"unsupported version {version}")
    if len(data) != 16 + L * D * 4:
        raise CorruptEntry(image_id, "length mismatch")
    values = np.frombuffer(data[16:], dtype="<f4").reshape(L, D)
    return FeatureGrid(values.copy())
