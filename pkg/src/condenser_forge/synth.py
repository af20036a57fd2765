"""Procedural light-guide-plate images with low-contrast surface defects.

A plate is a regular lattice of light-guide dots on a smoothly varying
brightness field plus sensor noise. Defects (scratch, bright spot, dark spot,
impurity) are composited with amplitudes of only 8-24 grey levels.

The base plate and the defects draw from separate random streams of the same
seed, so rendering a seed with and without defects gives a pixel-aligned
defect-free twin.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, ForgeError

DEFECT_KINDS = ("scratch", "bright_spot", "dark_spot", "impurity")
DEFECTIVE = "defective"
NON_DEFECTIVE = "non_defective"
MANIFEST_VERSION = 1


@dataclass
class GenConfig:
    count: int = 822
    defect_fraction: float = 422 / 822
    image_size: tuple[int, int] = (64, 64)
    dot_pitch: tuple[float, float] = (5.0, 8.0)
    dot_amplitude: tuple[float, float] = (8.0, 16.0)
    background: tuple[float, float] = (90.0, 130.0)
    brightness_gradient: tuple[float, float] = (0.0, 40.0)
    defect_amplitude: tuple[float, float] = (8.0, 24.0)
    defect_scale: float = 3.0
    noise: float = 1.5
    seed: int = 0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        for name in ("dot_pitch", "dot_amplitude", "background", "brightness_gradient", "defect_amplitude"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        if not 0.0 <= self.defect_fraction <= 1.0:
            raise ValueError(f"defect_fraction must be in [0, 1], got {self.defect_fraction}")
        if self.count < 2:
            raise ValueError(f"count must be >= 2, got {self.count}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        return cls(**d)


@dataclass
class PlateSample:
    image: np.ndarray                 # uint8 [H, W]
    label: str
    seed: int
    defects: tuple[str, ...] = field(default_factory=tuple)

    @property
    def target(self) -> int:
        """Class index: 1 for defective, 0 for non-defective."""
        return int(self.label == DEFECTIVE)


def _streams(seed: int):
    ss = np.random.SeedSequence(int(seed))
    base, defect = ss.spawn(2)
    return np.random.default_rng(base), np.random.default_rng(defect)


def _base_plate(rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    h, w = cfg.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    pitch = rng.uniform(*cfg.dot_pitch)
    phase_y, phase_x = rng.uniform(0, pitch, size=2)
    dot_sigma = pitch * rng.uniform(0.12, 0.2)
    amp = rng.uniform(*cfg.dot_amplitude)
    # distance to the nearest lattice point along each axis
    dy = (yy - phase_y + pitch / 2) % pitch - pitch / 2
    dx = (xx - phase_x + pitch / 2) % pitch - pitch / 2
    dots = amp * np.exp(-(dy ** 2 + dx ** 2) / (2 * dot_sigma ** 2))
    level = rng.uniform(*cfg.background)
    grad = rng.uniform(*cfg.brightness_gradient)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = grad * ((np.cos(theta) * (xx / max(w - 1, 1) - 0.5)) + np.sin(theta) * (yy / max(h - 1, 1) - 0.5))
    noise = rng.normal(0.0, cfg.noise, size=(h, w))
    return level + ramp + dots + noise


def _segment_distance(yy, xx, p0, p1):
    d = p1 - p0
    L2 = float(d @ d) or 1e-12
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / L2, 0.0, 1.0)
    py, px = p0[0] + t * d[0], p0[1] + t * d[1]
    return np.sqrt((yy - py) ** 2 + (xx - px) ** 2)


def _defect_layer(kind: str, rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    h, w = cfg.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    amp = rng.uniform(*cfg.defect_amplitude)
    z = cfg.defect_scale
    margin = 0.15
    cy, cx = rng.uniform(margin * h, (1 - margin) * h), rng.uniform(margin * w, (1 - margin) * w)
    if kind == "scratch":
        sign = rng.choice([-1.0, 1.0])
        n_seg = int(rng.integers(2, 5))
        heading = rng.uniform(0, 2 * np.pi)
        pts = [np.array([cy, cx])]
        for _ in range(n_seg):
            heading += rng.normal(0, 0.35)
            step = rng.uniform(0.12, 0.25) * min(h, w)
            pts.append(pts[-1] + step * np.array([np.sin(heading), np.cos(heading)]))
        dist = np.min([_segment_distance(yy, xx, a, b) for a, b in zip(pts[:-1], pts[1:])], axis=0)
        width = z * rng.uniform(0.6, 1.1)
        return sign * amp * np.exp(-(dist ** 2) / (2 * width ** 2))
    if kind in ("bright_spot", "dark_spot"):
        sign = 1.0 if kind == "bright_spot" else -1.0
        sy, sx = z * rng.uniform(1.5, 3.5, size=2)
        return sign * amp * np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
    if kind == "impurity":
        layer = np.zeros((h, w))
        for _ in range(int(rng.integers(3, 8))):
            oy, ox = rng.normal(0, 2.0 * z, size=2)
            r = z * rng.uniform(0.6, 1.3)
            layer -= amp * np.exp(-(((yy - cy - oy) ** 2 + (xx - cx - ox) ** 2) / (2 * r ** 2)))
        return np.maximum(layer, -amp)
    raise ValueError(f"unknown defect kind {kind!r}")


def render_plate(seed: int, cfg: GenConfig, defects=()) -> PlateSample:
    """Render one plate; fully determined by (seed, cfg, defects)."""
    defects = tuple(defects)
    for k in defects:
        if k not in DEFECT_KINDS:
            raise ValueError(f"unknown defect kind {k!r}")
    base_rng, defect_rng = _streams(seed)
    img = _base_plate(base_rng, cfg)
    for kind in defects:
        img = img + _defect_layer(kind, defect_rng, cfg)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return PlateSample(img, DEFECTIVE if defects else NON_DEFECTIVE, int(seed), defects)


def generate_dataset(cfg: GenConfig) -> list[PlateSample]:
    """``round(count * defect_fraction)`` defective plates, the rest clean.

    Per-sample seeds are derived from ``cfg.seed``; sample order is fixed.
    """
    n_def = int(round(cfg.count * cfg.defect_fraction))
    ss = np.random.SeedSequence(cfg.seed)
    sample_seeds = ss.generate_state(cfg.count, dtype=np.uint32)
    chooser = np.random.default_rng(ss.spawn(1)[0])
    is_defective = np.zeros(cfg.count, dtype=bool)
    is_defective[chooser.permutation(cfg.count)[:n_def]] = True
    out = []
    for i in range(cfg.count):
        kinds: tuple[str, ...] = ()
        if is_defective[i]:
            k = 1 + int(chooser.random() < 0.25)
            idx = sorted(chooser.choice(len(DEFECT_KINDS), size=k, replace=False))
            kinds = tuple(DEFECT_KINDS[j] for j in idx)
        out.append(render_plate(int(sample_seeds[i]), cfg, kinds))
    return out


def split(dataset, train_fraction: float = 0.25, seed: int = 0):
    """Stratified split; per class, ``floor(n * train_fraction)`` go to train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in (NON_DEFECTIVE, DEFECTIVE):
        idx = [i for i, s in enumerate(dataset) if s.label == label]
        if not idx:
            continue
        n_train = int(np.floor(len(idx) * train_fraction))
        if n_train < 1 or len(idx) - n_train < 1:
            raise ForgeError(f"class {label!r} has {len(idx)} samples; cannot place at least one "
                             f"on each side of a {train_fraction:.2f} split")
        perm = rng.permutation(len(idx))
        train_idx += [idx[j] for j in perm[:n_train]]
        test_idx += [idx[j] for j in perm[n_train:]]
    return [dataset[i] for i in sorted(train_idx)], [dataset[i] for i in sorted(test_idx)]


def to_arrays(samples, dtype=np.float32):
    """Stack samples into an NCHW batch (each image standardized) and labels."""
    x = np.stack([s.image for s in samples]).astype(np.float64)[:, None]
    mean = x.mean(axis=(2, 3), keepdims=True)
    std = x.std(axis=(2, 3), keepdims=True)
    x = ((x - mean) / np.maximum(std, 1.0)).astype(dtype)
    y = np.array([s.target for s in samples], dtype=np.int64)
    return x, y


# --------------------------------------------------------------------------
# PGM + manifest I/O


def write_pgm(path, image: np.ndarray) -> None:
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    fields_, pos = [], 0
    while len(fields_) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetFormatError("truncated PGM header", path)
        fields_.append(buf[start:pos])
    pos += 1
    if fields_[0] != b"P5":
        raise DatasetFormatError(f"not a binary PGM (magic {fields_[0]!r})", path)
    try:
        w, h, maxval = (int(f) for f in fields_[1:])
    except ValueError:
        raise DatasetFormatError("non-integer PGM header field", path) from None
    if maxval != 255:
        raise DatasetFormatError(f"unsupported maxval {maxval}", path)
    data = buf[pos:]
    if len(data) != w * h:
        raise DatasetFormatError(f"expected {w * h} pixel bytes, found {len(data)}", path)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def write_dataset(dataset, directory, cfg: GenConfig | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(dataset) - 1)))
    entries = []
    for i, s in enumerate(dataset):
        name = f"plate_{i:0{width}d}.pgm"
        write_pgm(directory / name, s.image)
        entries.append({"file": name, "label": s.label, "seed": s.seed, "defects": list(s.defects)})
    manifest = {
        "version": MANIFEST_VERSION,
        "gen_config": cfg.to_dict() if cfg is not None else None,
        "samples": entries,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_dataset(directory) -> list[PlateSample]:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise DatasetFormatError("manifest not found", mpath) from None
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"invalid JSON ({e.msg})", mpath) from None
    if not isinstance(manifest, dict) or "samples" not in manifest:
        raise DatasetFormatError("manifest lacks a 'samples' list", mpath)
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetFormatError(f"unsupported manifest version {manifest.get('version')!r}", mpath)
    entries = manifest["samples"]
    on_disk = sorted(p.name for p in directory.glob("*.pgm"))
    if len(on_disk) != len(entries):
        raise DatasetFormatError(f"manifest lists {len(entries)} samples but directory holds "
                                 f"{len(on_disk)} PGM files", mpath)
    out = []
    for e in entries:
        try:
            label, defects = e["label"], tuple(e["defects"])
            fpath = directory / e["file"]
            seed = int(e["seed"])
        except (KeyError, TypeError):
            raise DatasetFormatError(f"malformed sample entry {e!r}", mpath) from None
        if label not in (DEFECTIVE, NON_DEFECTIVE) or (label == DEFECTIVE) != bool(defects):
            raise DatasetFormatError(f"inconsistent label/defects for {e['file']}", mpath)
        if not fpath.exists():
            raise DatasetFormatError("listed in manifest but missing", fpath)
        out.append(PlateSample(read_pgm(fpath), label, seed, defects))
    return out


def dataset_digest(dataset) -> str:
    """SHA-256 over every image and label, in order."""
    h = hashlib.sha256()
    for s in dataset:
        h.update(s.image.tobytes())
        h.update(f"{s.label}|{s.seed}|{','.join(s.defects)}\n".encode())
    return h.hexdigest()
