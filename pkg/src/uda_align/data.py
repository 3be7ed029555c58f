"""Synthetic two-domain shape benchmark and paired image/label directory IO."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import IGNORE_INDEX
from .errors import ConfigError, DataError

# Class 0 is background; foreground colours are indexed by class id.
PALETTE = np.array([
    [0.45, 0.50, 0.42],
    [0.85, 0.25, 0.20],
    [0.20, 0.70, 0.30],
    [0.25, 0.35, 0.85],
    [0.90, 0.85, 0.20],
    [0.80, 0.25, 0.80],
    [0.20, 0.80, 0.85],
    [0.95, 0.55, 0.15],
    [0.50, 0.20, 0.60],
])
SHAPE_KINDS = ("rectangle", "disk", "bar")


@dataclass
class DatasetSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    foreground_ids: tuple | None = None
    seed: int = 0
    channel_gain: tuple = (0.55, 1.35, 0.8)
    channel_bias: tuple = (0.3, -0.2, 0.12)
    noise_amp: float = 0.06
    size_delta: float = 0.15
    texture_amp: float = 0.08
    shapes_per_image: tuple = (3, 6)

    def __post_init__(self):
        if self.foreground_ids is None and isinstance(self.num_classes, int):
            self.foreground_ids = tuple(range(1, max(self.num_classes, 1)))
        if self.foreground_ids is not None:
            self.foreground_ids = tuple(int(k) for k in self.foreground_ids)

    def validate(self):
        if not isinstance(self.num_classes, int) or not 2 <= self.num_classes <= len(PALETTE):
            raise ConfigError(f"data.num_classes must be an integer in [2, {len(PALETTE)}], "
                              f"got {self.num_classes!r}")
        for name in ("height", "width"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 8:
                raise ConfigError(f"data.{name} must be an integer >= 8, got {value!r}")
        if not set(self.foreground_ids) <= set(range(self.num_classes)):
            raise ConfigError(f"data.foreground_ids {self.foreground_ids} not a subset of "
                              f"0..{self.num_classes - 1}")
        if len(self.channel_gain) != 3 or len(self.channel_bias) != 3:
            raise ConfigError("data.channel_gain and data.channel_bias need 3 entries")
        if any(g <= 0 for g in self.channel_gain):
            raise ConfigError("data.channel_gain entries must be positive")
        if self.noise_amp < 0 or self.texture_amp < 0 or self.size_delta <= -1:
            raise ConfigError("data.noise_amp/texture_amp must be >= 0 and size_delta > -1")
        lo, hi = self.shapes_per_image
        if not 0 <= lo <= hi:
            raise ConfigError("data.shapes_per_image must be (min, max) with 0 <= min <= max")
        return self

    @property
    def has_shift(self):
        return (tuple(self.channel_gain) != (1, 1, 1) or any(self.channel_bias)
                or self.noise_amp > 0 or self.size_delta != 0)


@dataclass(frozen=True)
class Sample:
    """Labeled image: ``image`` is H x W x C in [0, 1], ``label`` is H x W uint8."""
    image: np.ndarray
    label: np.ndarray
    domain: str
    id: str


@dataclass(frozen=True)
class UnlabeledSample:
    """Trainer-facing target image; deliberately has no label attribute."""
    image: np.ndarray
    domain: str
    id: str


@dataclass
class PairDataset:
    source: list
    target: list
    target_labels: dict = field(default_factory=dict)

    def target_eval(self):
        """Target samples joined with their held-out labels (evaluation only)."""
        return [Sample(s.image, self.target_labels[s.id], "target", s.id) for s in self.target]


def _freeze(arr):
    arr.setflags(write=False)
    return arr


def _quantize(img):
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def _paint(rng, kind, h, w, scale):
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    if kind == "rectangle":
        hh, ww = rng.uniform(8, 16, size=2) * scale / 2
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww)
    if kind == "disk":
        r = rng.uniform(4, 8) * scale
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    length = rng.uniform(18, 32) * scale / 2
    thick = rng.uniform(3, 5) * scale / 2
    if rng.random() < 0.5:
        return (np.abs(yy - cy) <= thick) & (np.abs(xx - cx) <= length)
    return (np.abs(yy - cy) <= length) & (np.abs(xx - cx) <= thick)


def render_scene(rng, spec: DatasetSpec, size_scale=1.0):
    """One clean image and its label map from the shared layout process."""
    h, w = spec.height, spec.width
    texture = gaussian_filter(rng.standard_normal((h, w, 3)), sigma=(2.5, 2.5, 0))
    texture /= max(texture.std(), 1e-8)
    image = PALETTE[0] + spec.texture_amp * texture
    label = np.zeros((h, w), dtype=np.uint8)
    shape_classes = [k for k in range(1, spec.num_classes)]
    lo, hi = spec.shapes_per_image
    for _ in range(int(rng.integers(lo, hi + 1))):
        cls = int(rng.choice(shape_classes))
        mask = _paint(rng, SHAPE_KINDS[(cls - 1) % len(SHAPE_KINDS)], h, w, size_scale)
        color = PALETTE[cls] + rng.uniform(-0.06, 0.06, size=3)
        image[mask] = color + 0.3 * spec.texture_amp * rng.standard_normal((int(mask.sum()), 3))
        label[mask] = cls
    return np.clip(image, 0.0, 1.0), label


def apply_domain_shift(rng, image, spec: DatasetSpec):
    shifted = image * np.asarray(spec.channel_gain) + np.asarray(spec.channel_bias)
    if spec.noise_amp > 0:
        shifted = shifted + spec.noise_amp * rng.standard_normal(image.shape)
    return np.clip(shifted, 0.0, 1.0)


def generate_pair_datasets(spec: DatasetSpec, n_source: int, n_target: int) -> PairDataset:
    """Draw labeled source scenes and shifted target scenes with held-out labels."""
    spec.validate()
    if n_source < 1 or n_target < 1:
        raise ConfigError("n_source and n_target must be >= 1")
    src_rng = np.random.default_rng([spec.seed, 0])
    tgt_rng = np.random.default_rng([spec.seed, 1])
    source = []
    for i in range(n_source):
        img, lab = render_scene(src_rng, spec)
        source.append(Sample(_freeze(_quantize(img)), _freeze(lab), "source", f"src_{i:05d}"))
    target, held_out = [], {}
    for i in range(n_target):
        img, lab = render_scene(tgt_rng, spec, size_scale=1.0 + spec.size_delta)
        img = apply_domain_shift(tgt_rng, img, spec)
        sid = f"tgt_{i:05d}"
        target.append(UnlabeledSample(_freeze(_quantize(img)), "target", sid))
        held_out[sid] = _freeze(lab)
    return PairDataset(source, target, held_out)


def stack_images(samples):
    """(N, C, H, W) float32 batch from a list of samples."""
    return np.stack([s.image for s in samples]).transpose(0, 3, 1, 2).astype(np.float32)


# ---------------------------------------------------------------- disk IO

def _save_image(path, image):
    Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)).save(path)


def _save_label(path, label):
    Image.fromarray(np.asarray(label, dtype=np.uint8)).save(path)


def write_directory(samples, root, write_labels=True):
    """Write ``images/`` (and ``labels/`` for labeled samples) under ``root``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    labeled = write_labels and all(hasattr(s, "label") for s in samples)
    if labeled:
        (root / "labels").mkdir(parents=True, exist_ok=True)
    for s in samples:
        _save_image(root / "images" / f"{s.id}.png", s.image)
        if labeled:
            _save_label(root / "labels" / f"{s.id}.png", s.label)
    return root


def load_directory(path, images_dir="images", labels_dir=None, id_map=None,
                   domain="source", size=None, ignore_index=IGNORE_INDEX):
    """Load ``<path>/<images_dir>/*.png`` paired by stem with ``<labels_dir>``.

    Labels are remapped through ``id_map`` (raw id -> train id); raw ids missing
    from the map become ``ignore_index``. ``size=(H, W)`` resizes images
    bilinearly and labels with nearest neighbour.
    """
    root = Path(path)
    img_dir = root / images_dir
    if not img_dir.is_dir():
        raise DataError(f"image directory not found: {img_dir}")
    images = {p.stem: p for p in sorted(img_dir.glob("*.png"))}
    if not images:
        raise DataError(f"no .png images in {img_dir}")
    labels = None
    if labels_dir is not None:
        lab_dir = root / labels_dir
        if not lab_dir.is_dir():
            raise DataError(f"label directory not found: {lab_dir}")
        labels = {p.stem: p for p in sorted(lab_dir.glob("*.png"))}
        unmatched = sorted(set(images) ^ set(labels))
        if unmatched:
            raise DataError(f"images and labels are not paired; unmatched stems: {unmatched}")
    lut = None
    if id_map is not None:
        lut = np.full(256, ignore_index, dtype=np.uint8)
        for raw, train in id_map.items():
            lut[int(raw)] = int(train)
    out = []
    for stem, img_path in images.items():
        pil = Image.open(img_path).convert("RGB")
        if size is not None:
            pil = pil.resize((size[1], size[0]), Image.BILINEAR)
        image = _freeze(np.asarray(pil, dtype=np.float32) / 255.0)
        if labels is None:
            out.append(UnlabeledSample(image, domain, stem))
            continue
        lab_pil = Image.open(labels[stem])
        if lab_pil.mode not in ("L", "P", "I", "I;16"):
            lab_pil = lab_pil.convert("L")
        if size is not None:
            lab_pil = lab_pil.resize((size[1], size[0]), Image.NEAREST)
        label = np.asarray(lab_pil).astype(np.int64)
        if label.shape != image.shape[:2]:
            raise DataError(f"{stem}: label shape {label.shape} != image shape {image.shape[:2]}")
        if lut is not None:
            label = lut[np.clip(label, 0, 255)]
        out.append(Sample(image, _freeze(label.astype(np.uint8)), domain, stem))
    return out


def write_pair_dataset(pair: PairDataset, out_dir, spec: DatasetSpec):
    """Materialise a generated benchmark with a manifest.

    Layout: ``source/{images,labels}``, ``target/images`` (trainer-facing) and
    ``target_eval/{images,labels}`` (held-out evaluation copy).
    """
    out = Path(out_dir)
    write_directory(pair.source, out / "source")
    write_directory(pair.target, out / "target")
    write_directory(pair.target_eval(), out / "target_eval")
    manifest = {
        "spec": asdict(spec),
        "ignore_index": IGNORE_INDEX,
        "source": [s.id for s in pair.source],
        "target": [s.id for s in pair.target],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def manifest_hash(out_dir):
    return hashlib.sha256((Path(out_dir) / "manifest.json").read_bytes()).hexdigest()


def load_pair_dataset(root) -> PairDataset:
    root = Path(root)
    if not (root / "manifest.json").is_file():
        raise DataError(f"no manifest.json under {root}")
    source = load_directory(root / "source", labels_dir="labels", domain="source")
    target = load_directory(root / "target", domain="target")
    held = {}
    if (root / "target_eval" / "labels").is_dir():
        held = {s.id: s.label for s in load_directory(root / "target_eval", labels_dir="labels",
                                                       domain="target")}
    return PairDataset(source, target, held)
