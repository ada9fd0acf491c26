"""Synthetic desk-scale dataset. 24 images of colored shapes with Arabic
captions (16 train / 4 val / 4 test), a 2-class action set and a 3-class
object set in the CIFAR binary layout. Everything is rendered
deterministically from one seed so the full pipeline runs with no
downloads and reproduces bit-for-bit.

Layout written under the target root:
    captions.token          Flickr-style "name.png#idx<TAB>caption" lines
    splits/{train,val,test}.txt
    images/*.png            32x32 caption images
    action/<class>/*.png    folder-per-class action set
    object/batch_0.bin      CIFAR-format binary batch
    object/classes.txt      fine-label id -> class name
"""

import os

import numpy as np
from PIL import Image

from .corpus import CifarImage, write_cifar_batch
from .seeding import derive_rng

SHAPES = ("circle", "square", "triangle")
# adjective forms agree with the shape noun's gender
SHAPE_WORDS = {"circle": "دائرة", "square": "مربع", "triangle": "مثلث"}
COLOR_WORDS = {
    "circle": {"red": "حمراء", "blue": "زرقاء", "green": "خضراء", "yellow": "صفراء"},
    "square": {"red": "احمر", "blue": "ازرق", "green": "اخضر", "yellow": "اصفر"},
    "triangle": {"red": "احمر", "blue": "ازرق", "green": "اخضر", "yellow": "اصفر"},
}
SIZE_WORDS = {
    "circle": {"big": "كبيرة", "small": "صغيرة"},
    "square": {"big": "كبير", "small": "صغير"},
    "triangle": {"big": "كبير", "small": "صغير"},
}
COLORS = {"red": (255, 0, 0), "blue": (0, 0, 255), "green": (0, 200, 0),
          "yellow": (255, 220, 0)}
BACKGROUND = (245, 245, 245)


# per-shape vertical offset keeps the classes well separated even after the
# toy backbone's aggressive pooling
_SHAPE_CY = {"circle": 11, "square": 16, "triangle": 20}


def render_shape(shape: str, color: str, size: str) -> np.ndarray:
    """Render one 32x32x3 uint8 image of a shape at its class position."""
    img = np.tile(np.array(BACKGROUND, dtype=np.uint8), (32, 32, 1))
    r = 12 if size == "big" else 8
    yy, xx = np.mgrid[0:32, 0:32]
    cy, cx = _SHAPE_CY[shape], 16
    if shape == "circle":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif shape == "square":
        mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    else:  # triangle pointing up
        mask = (yy >= cy - r) & (yy <= cy + r) & (np.abs(xx - cx) <= (yy - (cy - r)) / 2)
    img[mask] = COLORS[color]
    return img


def _caption(shape, color, size):
    return f"{SHAPE_WORDS[shape]} {COLOR_WORDS[shape][color]} {SIZE_WORDS[shape][size]}"


def _caption_variant(shape, color, size):
    # same words, size adjective first
    return f"{SHAPE_WORDS[shape]} {SIZE_WORDS[shape][size]} {COLOR_WORDS[shape][color]}"


def _texture(kind: str, rng) -> np.ndarray:
    """Striped 32x32 textures for the two action classes."""
    yy, xx = np.mgrid[0:32, 0:32]
    base = (yy + xx) if kind == "diagonal" else yy
    img = np.zeros((32, 32, 3), dtype=np.uint8)
    phase = int(rng.integers(0, 8))
    stripe = ((base + phase) // 4) % 2 == 0
    tone = rng.integers(140, 220)
    img[stripe] = (tone, tone // 2, 60)
    img[~stripe] = (40, 60, tone)
    return img


def generate_toy_dataset(root, seed: int = 0) -> dict:
    """Write the complete toy dataset; returns summary counts."""
    root = str(root)
    rng = derive_rng(seed, "toydata")
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "splits"), exist_ok=True)

    combos = [(s, c, z) for s in SHAPES for c in COLORS for z in ("big", "small")]
    order = rng.permutation(len(combos))
    assigned = [combos[i] for i in order]
    split_of = ["train"] * 16 + ["val"] * 4 + ["test"] * 4

    token_lines = []
    split_lists = {"train": [], "val": [], "test": []}
    for i, ((shape, color, size), split) in enumerate(zip(assigned, split_of)):
        name = f"img_{i:03d}.png"
        Image.fromarray(render_shape(shape, color, size)).save(os.path.join(root, "images", name))
        token_lines.append(f"{name}#0\t{_caption(shape, color, size)}")
        if split != "train":
            token_lines.append(f"{name}#1\t{_caption_variant(shape, color, size)}")
        split_lists[split].append(name)

    with open(os.path.join(root, "captions.token"), "w", encoding="utf-8") as f:
        f.write("\n".join(token_lines) + "\n")
    for split, names in split_lists.items():
        with open(os.path.join(root, "splits", f"{split}.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(names) + "\n")

    # 2-class action set, 6 images per class
    for cls, kind in (("running", "diagonal"), ("walking", "horizontal")):
        cdir = os.path.join(root, "action", cls)
        os.makedirs(cdir, exist_ok=True)
        for j in range(6):
            Image.fromarray(_texture(kind, rng)).save(os.path.join(cdir, f"{cls}_{j}.png"))

    # 3-class object set in the CIFAR binary layout, 6 records per class
    os.makedirs(os.path.join(root, "object"), exist_ok=True)
    records = []
    for label, shape in enumerate(SHAPES):
        for _ in range(6):
            color = list(COLORS)[int(rng.integers(0, 4))]
            size = ("big", "small")[int(rng.integers(0, 2))]
            records.append(CifarImage(label, 0, render_shape(shape, color, size)))
    write_cifar_batch(records, os.path.join(root, "object", "batch_0.bin"))
    with open(os.path.join(root, "object", "classes.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(SHAPES) + "\n")

    return {"caption_images": 24, "train": 16, "val": 4, "test": 4,
            "action_images": 12, "object_records": len(records)}
