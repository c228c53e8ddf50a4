"""Labeled-tensor directory adapter.

A directory holds one ``.npy`` file per image, each an ``(H, W, C)`` array,
plus an optional ``labels.json`` mapping file name to integer class.  Files
are read in sorted name order.  Any cropping or normalization has to be
baked into the arrays before they land here.
"""
import json
from pathlib import Path

import numpy as np

from .tensor_core import tensor3

LABELS_FILE = "labels.json"


def load_images(directory):
    directory = Path(directory)
    files = sorted(directory.glob("*.npy"))
    if not files:
        raise FileNotFoundError(f"no .npy images in {directory}")
    return [tensor3(np.load(f)) for f in files], [f.name for f in files]


def load_labeled_dir(directory):
    """Return ``[(image, label), ...]``."""
    directory = Path(directory)
    images, names = load_images(directory)
    labels_path = directory / LABELS_FILE
    if not labels_path.is_file():
        raise FileNotFoundError(f"{labels_path} is missing")
    labels = json.loads(labels_path.read_text(encoding="utf-8"))
    missing = [n for n in names if n not in labels]
    if missing:
        raise KeyError(f"no label for {missing[:5]}")
    return [(img, int(labels[n])) for img, n in zip(images, names)]


def save_labeled_dir(directory, images, labels=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"{i:06d}.npy"
        np.save(directory / name, np.asarray(img, dtype=np.float32))
        names.append(name)
    if labels is not None:
        doc = {n: int(lab) for n, lab in zip(names, labels)}
        (directory / LABELS_FILE).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return directory
