"""Training data: a seeded synthetic generator and a tensor-record directory.

The synthetic task is deliberately separable: each class lights up a
different quadrant in a different color channel on top of Gaussian noise.
On-disk datasets reuse the checkpoint record format, one file per sample
with records ``image`` (C x H x W) and ``label`` (one-hot vector).
"""

from __future__ import annotations

import os

import numpy as np

from ..engine import Tensor
from ..errors import ConfigError
from ..params import ParamTree, load_checkpoint, save_checkpoint


class SyntheticQuadrants:
    """Two-or-more-class colored-quadrant images, deterministic per seed."""

    # (quadrant row, quadrant col, channel) per class
    _LAYOUT = [(0, 0, 0), (1, 1, 2), (0, 1, 1), (1, 0, 0)]

    def __init__(self, image_size: int = 64, num_classes: int = 2,
                 noise: float = 0.3, seed: int = 0):
        if num_classes > len(self._LAYOUT):
            raise ConfigError(f"at most {len(self._LAYOUT)} synthetic classes")
        self.image_size = image_size
        self.num_classes = num_classes
        self.noise = noise
        self.rng = np.random.default_rng(seed)

    def sample(self, n: int):
        """Return (images (n,3,S,S), integer labels (n,))."""
        s = self.image_size
        half = s // 2
        labels = self.rng.integers(0, self.num_classes, size=n)
        images = self.rng.standard_normal((n, 3, s, s)) * self.noise
        for i, lab in enumerate(labels):
            qr, qc, ch = self._LAYOUT[lab]
            images[i, ch, qr * half:(qr + 1) * half, qc * half:(qc + 1) * half] += 1.0
        return images, labels

    def one_hot(self, labels: np.ndarray) -> np.ndarray:
        out = np.zeros((len(labels), self.num_classes))
        out[np.arange(len(labels)), labels] = 1.0
        return out


def save_dataset(directory: str, images: np.ndarray, labels_onehot: np.ndarray):
    """Write one record file per sample using the checkpoint tensor format."""
    os.makedirs(directory, exist_ok=True)
    for i, (img, lab) in enumerate(zip(images, labels_onehot)):
        tree = ParamTree()
        tree.add("image", Tensor(np.asarray(img, dtype=np.float64)), True)
        tree.add("label", Tensor(np.asarray(lab, dtype=np.float64)), True)
        save_checkpoint(tree, os.path.join(directory, f"sample_{i:06d}.hiri"))


def load_dataset(directory: str):
    """Read a record directory back into (images, one-hot labels)."""
    names = sorted(f for f in os.listdir(directory) if f.endswith(".hiri"))
    if not names:
        raise ConfigError(f"dataset directory {directory!r} has no .hiri records")
    images, labels = [], []
    for name in names:
        tree = load_checkpoint(os.path.join(directory, name))
        images.append(tree["image"].data)
        labels.append(tree["label"].data)
    return np.stack(images), np.stack(labels)
