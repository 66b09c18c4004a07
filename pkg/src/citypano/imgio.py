"""Image file I/O for the rendered products.

Float layers (depth, normals) use little-endian PFM with the conventional
bottom-to-top row order. Depth files encode the sky as 0 (in memory it is
+inf). Normals are written as raw camera-frame floats. Segment ids are
16-bit grayscale PNGs; semantic labels are paletted PNGs with the palette
below.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import DomainError, FormatError
from .mesh import SemanticTag

SKY_LABEL = 0

# label id -> (name, RGB)
SEMANTIC_PALETTE = {
    SKY_LABEL: ("sky", (135, 206, 235)),
    int(SemanticTag.BUILDING): ("building", (228, 26, 28)),
    int(SemanticTag.TERRAIN): ("terrain", (77, 175, 74)),
    int(SemanticTag.BRIDGE): ("bridge", (255, 127, 0)),
    int(SemanticTag.TREE): ("tree", (0, 104, 55)),
    int(SemanticTag.WATER): ("water", (55, 126, 184)),
    int(SemanticTag.OTHER): ("other", (153, 153, 153)),
}


def write_pfm(path, data: np.ndarray) -> None:
    """Write a (h, w) or (h, w, 3) float32 PFM, little-endian, rows bottom-up."""
    a = np.asarray(data, dtype=np.float32)
    if a.ndim == 2:
        header = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = b"PF"
    else:
        raise DomainError(f"PFM needs (h, w) or (h, w, 3), got {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")  # negative scale = little-endian
        fh.write(np.flipud(a).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise FormatError(f"not a PFM file: {path}")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        channels = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * channels * 4), dtype=dtype)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float32).copy()


def write_depth_pfm(path, depth: np.ndarray) -> None:
    """Depth with +inf (sky) encoded as 0."""
    d = np.asarray(depth, dtype=np.float32).copy()
    d[~np.isfinite(d)] = 0.0
    write_pfm(path, d)


def read_depth_pfm(path) -> np.ndarray:
    d = read_pfm(path)
    d[d == 0.0] = np.inf
    return d


def write_rgb_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)


def read_rgb_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def write_semantic_png(path, labels: np.ndarray) -> None:
    img = Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="P")
    palette = [0] * 768
    for label, (_, rgb) in SEMANTIC_PALETTE.items():
        palette[3 * label : 3 * label + 3] = rgb
    img.putpalette(palette)
    img.save(path)


def read_semantic_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.uint8)


def write_segment_png(path, segment_id: np.ndarray) -> None:
    seg = np.asarray(segment_id)
    if seg.max(initial=0) > 65535:
        raise DomainError("more than 65535 segments visible; cannot encode 16-bit PNG")
    Image.fromarray(seg.astype(np.uint16)).save(path)


def read_segment_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.uint32)
