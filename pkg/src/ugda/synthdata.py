"""Synthetic layered phantoms with two scanner-like appearance styles.

Each phantom is a stack of horizontal bands (background / retinal /
choroidal / background) whose boundaries carry a smooth random wiggle.
A :class:`DomainStyle` then changes appearance only, so the labels of a
phantom are identical in both domains.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .core import DomainTag

NUM_CLASSES = 3
CLASS_NAMES = ("background", "retinal", "choroidal")
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    boundary_fractions: tuple[float, float, float] = (0.3, 0.55, 0.75)
    boundary_wiggle: float = 3.0
    layer_means: tuple[float, float, float] = (0.1, 0.5, 0.3)
    texture: float = 0.04
    num_classes: int = NUM_CLASSES

    def validate(self) -> None:
        fr = self.boundary_fractions
        if len(fr) != 3 or not all(0.0 < f < 1.0 for f in fr):
            raise ValueError(f"boundary_fractions must be 3 values in (0, 1), got {fr}")
        if not (fr[0] < fr[1] < fr[2]):
            raise ValueError(f"boundary_fractions must be strictly increasing, got {fr}")
        if len(self.layer_means) != self.num_classes:
            raise ValueError("need one layer mean per class")
        if self.boundary_wiggle < 0:
            raise ValueError("boundary_wiggle must be >= 0")
        # worst case: neighbouring boundaries deflect towards each other by the full amplitude
        rows = [f * self.height for f in fr]
        gaps = [rows[0], rows[1] - rows[0], rows[2] - rows[1], self.height - rows[2]]
        min_gap = min(gaps[1:3])
        if min_gap - 2 * self.boundary_wiggle < 1 or min(gaps[0], gaps[3]) - self.boundary_wiggle < 1:
            raise ValueError(
                f"boundary_wiggle={self.boundary_wiggle} lets layer boundaries cross "
                f"(smallest band is {min(gaps):.1f} rows)"
            )


@dataclass(frozen=True)
class DomainStyle:
    gamma: float = 1.0
    contrast: float = 1.0
    noise_sigma: float = 0.0
    blur_radius: float = 0.0


SOURCE_STYLE = DomainStyle(gamma=1.0, contrast=1.0, noise_sigma=0.02, blur_radius=0.0)
TARGET_STYLE = DomainStyle(gamma=1.6, contrast=0.8, noise_sigma=0.08, blur_radius=1.0)
DOMAIN_STYLES = {DomainTag.SOURCE: SOURCE_STYLE, DomainTag.TARGET: TARGET_STYLE}


@dataclass
class ManifestEntry:
    id: str
    image: str
    label: str
    domain: DomainTag
    split: str


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def select(self, domain=None, split=None) -> list[ManifestEntry]:
        out = self.entries
        if domain is not None:
            out = [e for e in out if e.domain == DomainTag(domain)]
        if split is not None:
            out = [e for e in out if e.split == split]
        return out


def _smooth_curve(rng: np.random.Generator, width: int, n_waves: int = 3) -> np.ndarray:
    """Random sum of low-frequency sinusoids, scaled into [-1, 1]."""
    t = np.arange(width) / width
    curve = np.zeros(width)
    for k in range(1, n_waves + 1):
        curve += rng.normal() / k * np.sin(2 * np.pi * (k * t + rng.uniform()))
    peak = np.abs(curve).max()
    return curve / peak if peak > 0 else curve


def generate_phantom(spec: PhantomSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Render one unstyled phantom.

    Returns ``(image [1, 1, H, W] float32, labels [1, H, W] int64)``.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    boundaries = []
    for frac in spec.boundary_fractions:
        wiggle = spec.boundary_wiggle * _smooth_curve(rng, w) if spec.boundary_wiggle > 0 else 0.0
        boundaries.append(frac * h + np.broadcast_to(wiggle, (w,)))
    rows = np.arange(h)[:, None]
    labels = np.zeros((h, w), dtype=np.int64)
    labels[(rows >= boundaries[0]) & (rows < boundaries[1])] = 1
    labels[(rows >= boundaries[1]) & (rows < boundaries[2])] = 2

    means = np.asarray(spec.layer_means, dtype=np.float64)
    image = means[labels]
    if spec.texture > 0:
        tex = gaussian_filter(rng.normal(size=(h, w)), sigma=2.0, mode="reflect")
        tex /= tex.std() + 1e-12
        image = image + spec.texture * tex
    image = np.clip(image, 0.0, 1.0)
    return image[None, None].astype(np.float32), labels[None]


def apply_domain_style(img: np.ndarray, style: DomainStyle, seed: int) -> np.ndarray:
    """``clip(contrast * blur(img) ** gamma + noise, 0, 1)``, per image in the batch."""
    rng = np.random.default_rng(seed)
    out = np.asarray(img, dtype=np.float64)
    if style.blur_radius > 0:
        sigma = [0] * (out.ndim - 2) + [style.blur_radius, style.blur_radius]
        out = gaussian_filter(out, sigma=sigma, mode="reflect")
    out = style.contrast * np.clip(out, 0.0, None) ** style.gamma
    if style.noise_sigma > 0:
        out = out + rng.normal(scale=style.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def sample_spec(rng: np.random.Generator, base: PhantomSpec) -> PhantomSpec:
    """Jitter the band positions of ``base`` for one corpus sample."""
    shift = rng.uniform(-0.06, 0.06)
    fr = tuple(float(f + shift + rng.uniform(-0.02, 0.02)) for f in base.boundary_fractions)
    return PhantomSpec(
        height=base.height,
        width=base.width,
        boundary_fractions=fr,
        boundary_wiggle=base.boundary_wiggle,
        layer_means=base.layer_means,
        texture=base.texture,
    )


def render_sample(seed: int, stream: int, index: int, base_spec: PhantomSpec, style: DomainStyle):
    """One styled corpus sample; the phantom depends on ``(seed, stream, index)`` only."""
    ss = np.random.SeedSequence([seed, stream, index])
    spec_seed, phantom_seed, style_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    spec = sample_spec(np.random.default_rng(spec_seed), base_spec)
    image, labels = generate_phantom(spec, phantom_seed)
    return apply_domain_style(image, style, style_seed), labels


def write_pgm(path: Path, arr: np.ndarray) -> None:
    try:
        Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8), mode="L").save(path, format="PPM")
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale PGM, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def build_corpus(
    n_source: int,
    n_target: int,
    out_dir,
    seed: int = 0,
    base_spec: PhantomSpec | None = None,
    train_fraction: float = 0.8,
) -> DatasetManifest:
    """Write a two-domain phantom corpus plus ``manifest.json`` into ``out_dir``."""
    base_spec = base_spec or PhantomSpec()
    root = Path(out_dir)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "labels").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"could not create corpus directory {root}: {exc}") from exc

    entries: list[ManifestEntry] = []
    for d_index, (domain, count, prefix) in enumerate(
        [(DomainTag.SOURCE, n_source, "src"), (DomainTag.TARGET, n_target, "tgt")]
    ):
        split_rng = np.random.default_rng([seed, d_index, 0xD1])
        order = split_rng.permutation(count)
        n_train = int(train_fraction * count + 0.5)
        is_train = np.zeros(count, dtype=bool)
        is_train[order[:n_train]] = True
        for i in range(count):
            image, labels = render_sample(seed, d_index, i, base_spec, DOMAIN_STYLES[domain])
            sid = f"{prefix}_{i:04d}"
            img_rel = f"images/{sid}.pgm"
            lab_rel = f"labels/{sid}.pgm"
            write_pgm(root / img_rel, to_uint8(image[0, 0]))
            write_pgm(root / lab_rel, labels[0].astype(np.uint8))
            entries.append(
                ManifestEntry(sid, img_rel, lab_rel, domain, "train" if is_train[i] else "test")
            )

    manifest = DatasetManifest(root=root, entries=entries)
    payload = {
        "seed": seed,
        "phantom": asdict(base_spec),
        "styles": {d.value: asdict(s) for d, s in DOMAIN_STYLES.items()},
        "samples": [{**asdict(e), "domain": e.domain.value} for e in entries],
    }
    path = root / MANIFEST_NAME
    tmp = path.with_suffix(".json.tmp")
    try:
        tmp.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc
    return manifest


def load_manifest(path) -> DatasetManifest:
    """Read a manifest (or a directory containing one) and check every referenced file."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    payload = json.loads(path.read_text(encoding="utf-8"))
    root = path.parent
    entries = [
        ManifestEntry(s["id"], s["image"], s["label"], DomainTag(s["domain"]), s["split"])
        for s in payload["samples"]
    ]
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    missing = [
        str(root / rel) for e in entries for rel in (e.image, e.label) if not (root / rel).is_file()
    ]
    if missing:
        raise FileNotFoundError(f"{len(missing)} missing files: " + ", ".join(missing[:10]))
    for e in entries:
        if e.split not in ("train", "test"):
            raise ValueError(f"{e.id}: unknown split {e.split!r}")
    return DatasetManifest(root=root, entries=entries)


def load_split(manifest: DatasetManifest, domain, split) -> tuple[list[str], torch.Tensor, torch.Tensor]:
    """Load ``(ids, images [n, 1, H, W] float, labels [n, H, W] int64)`` for one subset."""
    entries = manifest.select(domain, split)
    if not entries:
        return [], torch.empty(0, 1, 0, 0), torch.empty(0, 0, 0, dtype=torch.long)
    images, labels = [], []
    for e in entries:
        img = read_pgm(manifest.root / e.image)
        lab = read_pgm(manifest.root / e.label)
        if img.shape != lab.shape:
            raise ValueError(f"{e.id}: image {img.shape} and label {lab.shape} differ in shape")
        images.append(img.astype(np.float32) / 255.0)
        labels.append(lab.astype(np.int64))
    x = torch.from_numpy(np.stack(images)[:, None])
    y = torch.from_numpy(np.stack(labels))
    return [e.id for e in entries], x, y
