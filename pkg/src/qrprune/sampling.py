"""Seeded sampling of contribution matrices over calibration images.

A sample site is ``(image, output channel j, h, w)`` of the target layer's
output.  Sites are drawn by a streaming sampler: draw ``t`` depends only on
the seed and draws ``0..t-1``, so a run with ``N'`` samples is exactly the
first ``N'`` columns of a run with ``N > N'`` samples.
"""
from __future__ import annotations

import json
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SamplingExhaustedError, WrongVariantError
from .inference import TapRequest, contributions_at, forward_taps
from .model_graph import BottleneckUnit, Conv2D, Graph

_SOURCE_CHOICE_STREAM = 1 << 20


@dataclass(frozen=True)
class SampleConfig:
    seed: int
    n_samples: Optional[int] = None  # default: max(4000, 20 * C)
    max_per_image: Optional[int] = None  # default: every site of an image
    source_weights: tuple = (0.5, 0.5)
    threads: int = 1

    def resolved_n(self, n_channels):
        return self.n_samples if self.n_samples is not None else max(4000, 20 * n_channels)

    def with_seed(self, seed):
        return SampleConfig(seed, self.n_samples, self.max_per_image, self.source_weights,
                            self.threads)


@dataclass
class ContributionMatrix:
    A: np.ndarray  # (C, N) float64
    B: np.ndarray  # (1, N) float64
    provenance: list  # (image, layer_id, j, h, w) per column
    config: SampleConfig = None
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.A.shape[1]

    def column_sum_error(self) -> float:
        """max_n |B_n - sum_c A_cn| / max(1, |B_n|)."""
        diff = np.abs(self.B[0] - self.A.sum(axis=0))
        return float((diff / np.maximum(1.0, np.abs(self.B[0]))).max(initial=0.0))

    def save(self, path) -> Path:
        """Dump as ``<stem>.bin`` (little-endian f64, A row-major then B) plus JSON."""
        path = Path(path).with_suffix(".json")
        blob = (np.ascontiguousarray(self.A, dtype="<f8").tobytes()
                + np.ascontiguousarray(self.B, dtype="<f8").tobytes())
        blob_path = path.with_suffix(".bin")
        blob_path.write_bytes(blob)
        c, n = self.A.shape
        doc = {
            "format": "qrprune-contributions",
            "blob": blob_path.name,
            "blob_crc32": zlib.crc32(blob),
            "A": {"dtype": "f64", "shape": [c, n], "blob_offset": 0, "blob_len": c * n * 8},
            "B": {"dtype": "f64", "shape": [1, n], "blob_offset": c * n * 8, "blob_len": n * 8},
            "config": None if self.config is None else asdict(self.config),
            "provenance": [list(p) for p in self.provenance],
            "meta": self.meta,
        }
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        return path


def load_contributions(path) -> ContributionMatrix:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    blob = (path.parent / doc["blob"]).read_bytes()

    def read(ref):
        count = int(np.prod(ref["shape"]))
        return np.frombuffer(blob, "<f8", count, ref["blob_offset"]).astype(np.float64).reshape(ref["shape"])

    cfg = doc.get("config")
    if cfg is not None:
        cfg = SampleConfig(**{**cfg, "source_weights": tuple(cfg["source_weights"])})
    prov = [tuple(p) for p in doc["provenance"]]
    return ContributionMatrix(read(doc["A"]), read(doc["B"]), prov, cfg, doc.get("meta", {}))


class _SiteStream:
    """Uniform draws without replacement from ``n_images`` pools of ``n_sites``,
    at most ``cap`` per image (sparse Fisher-Yates per image)."""

    def __init__(self, rng, n_images, n_sites, cap):
        self.rng = rng
        self.n_sites = n_sites
        self.cap = min(cap, n_sites)
        self.used = [0] * n_images
        self.swaps = [dict() for _ in range(n_images)]
        self.open = list(range(n_images))

    @property
    def available(self):
        return sum(self.cap - u for u in self.used)

    def draw(self):
        img = self.open[int(self.rng.integers(len(self.open)))]
        used, swaps = self.used[img], self.swaps[img]
        r = int(self.rng.integers(used, self.n_sites))
        site = swaps.get(r, r)
        swaps[r] = swaps.get(used, used)
        self.used[img] = used + 1
        if self.used[img] >= self.cap:
            self.open.remove(img)
        return img, site


def _check_calib(calib):
    calib = list(calib)
    if not calib:
        raise ValueError("calibration set is empty")
    return calib


def _site_stream(config, source, n_images, n_sites):
    rng = np.random.default_rng([config.seed, source])
    cap = config.max_per_image if config.max_per_image is not None else n_sites
    if cap < 1:
        raise ValueError("max_per_image must be >= 1")
    return _SiteStream(rng, n_images, n_sites, cap)


def _warn_small(n, c):
    if n < 10 * c:
        warnings.warn(f"{n} samples for {c} channels is fewer than 10 per channel", stacklevel=3)


def _tap_inputs(graph, tap_id, calib, images, threads):
    tap = TapRequest(tap_id, "layer_input")

    def run(i):
        return forward_taps(graph, calib[i], [tap])[0]

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return dict(zip(images, pool.map(run, images)))
    return {i: run(i) for i in images}


def _assemble(draws, sources, inputs, n_channels):
    """draws: list of (source, image, site); returns A, B, provenance."""
    n = len(draws)
    A = np.empty((n_channels, n))
    B = np.empty(n)
    prov = [None] * n
    groups = {}
    for col, (src, img, site) in enumerate(draws):
        groups.setdefault((src, img), []).append((col, site))
    for (src, img), items in sorted(groups.items()):
        layer_id, conv, (ho, wo) = sources[src]
        cols = np.array([c for c, _ in items])
        sites = np.array([s for _, s in items])
        j = sites % conv.cout
        hw = sites // conv.cout
        pos = np.stack([hw // wo, hw % wo], axis=1)
        a, b = contributions_at(inputs[img], conv.kernel, conv.params, pos, j)
        A[:, cols] = a
        B[cols] = b
        for col, jj, (h, w) in zip(cols, j, pos):
            prov[col] = (int(img), layer_id, int(jj), int(h), int(w))
    return A, B[None, :], prov


def _out_hw(conv: Conv2D, x_shape):
    return conv.params.output_hw(x_shape[0], x_shape[1], *conv.kernel.shape[:2])


def collect_contributions(graph: Graph, layer_id: str, calib, config: SampleConfig) -> ContributionMatrix:
    conv = graph.layer(layer_id)
    if not isinstance(conv, Conv2D):
        raise TypeError(f"{layer_id} is not a Conv2D")
    calib = _check_calib(calib)
    c = conv.cin
    n = config.resolved_n(c)
    _warn_small(n, c)

    first = forward_taps(graph, calib[0], [TapRequest(layer_id)])[0]
    ho, wo = _out_hw(conv, first.shape)
    stream = _site_stream(config, 0, len(calib), ho * wo * conv.cout)
    if n > stream.available:
        raise SamplingExhaustedError(n, stream.available)
    draws = [(0, *stream.draw()) for _ in range(n)]

    images = sorted({img for _, img, _ in draws})
    inputs = _tap_inputs(graph, layer_id, calib, images, config.threads)
    A, B, prov = _assemble(draws, [(layer_id, conv, (ho, wo))], inputs, c)
    return ContributionMatrix(A, B, prov, config, {"layer": layer_id})


def collect_joint_contributions(graph: Graph, unit_id: str, calib, config: SampleConfig) -> ContributionMatrix:
    """Sample from both conv1 and the projection conv of a projection unit.

    Each draw first picks a source with probability ``source_weights``, then a
    site from that source's own stream.  Source 0 (conv1) uses the same site
    stream as :func:`collect_contributions`.
    """
    unit = graph.layer(unit_id)
    if not isinstance(unit, BottleneckUnit):
        raise TypeError(f"{unit_id} is not a bottleneck unit")
    if not unit.is_projection:
        raise WrongVariantError(f"{unit_id} has an identity shortcut; joint sampling needs a projection")
    calib = _check_calib(calib)
    w = np.asarray(config.source_weights, dtype=np.float64)
    if w.shape != (2,) or w.min() < 0 or w.sum() <= 0:
        raise ValueError(f"source_weights must be two non-negative weights, got {config.source_weights}")
    p_first = w[0] / w.sum()

    c = unit.conv1.cin
    n = config.resolved_n(c)
    _warn_small(n, c)
    first = forward_taps(graph, calib[0], [TapRequest(unit_id, "layer_input")])[0]
    sources, streams = [], []
    for k, slot in enumerate(("conv1", "projection")):
        conv = getattr(unit, slot)
        ho, wo = _out_hw(conv, first.shape)
        sources.append((f"{unit_id}/{slot}", conv, (ho, wo)))
        streams.append(_site_stream(config, k, len(calib), ho * wo * conv.cout))
    live = [k for k, share in enumerate((p_first, 1.0 - p_first)) if share > 0]
    available = sum(streams[k].available for k in live)
    if n > available:
        raise SamplingExhaustedError(n, available)

    chooser = np.random.default_rng([config.seed, _SOURCE_CHOICE_STREAM])
    draws = []
    for _ in range(n):
        k = 0 if chooser.random() < p_first else 1
        if streams[k].available == 0:
            k = 1 - k
        draws.append((k, *streams[k].draw()))

    images = sorted({img for _, img, _ in draws})
    inputs = _tap_inputs(graph, f"{unit_id}/conv1", calib, images, config.threads)
    A, B, prov = _assemble(draws, sources, inputs, c)
    return ContributionMatrix(A, B, prov, config, {"unit": unit_id})
