"""Synthetic change-pair generation and paired-dataset ingestion.

A scene is a textured class map: a background of class 1 plus randomly
placed (possibly rotated) rectangular patches of other land-cover classes.
Textures are pure functions of pixel position, class, and a scene-level
texture seed, so re-rendering a mutated class map leaves untouched pixels
bit-identical. Mutating a scene reassigns a random subset of patches to a
different class and re-renders: the re-render plays the role of the
earlier-time reference image, the original is the HR target, and the change
mask records the HR-time class on changed pixels (0 elsewhere).

On-disk layout: ``<root>/{hr,ref,mask}/<id>.png`` (8-bit; the mask stores
class indices directly) plus ``<root>/manifest.json`` with sizes and content
hashes. LR images are never stored; they are synthesized on the fly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .degradation import DegradationConfig, degrade

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class DatasetValidationError(ValueError):
    """One or more files in a dataset tree failed validation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("dataset validation failed:\n" + "\n".join(self.problems))


@dataclass(frozen=True)
class ClassStyle:
    """Appearance of one land-cover class: base color plus procedural texture."""

    name: str
    base_color: tuple
    texture: str = "flat"  # flat | stripes | speckle
    amp: float = 0.0
    period: float = 4.0


DEFAULT_PALETTE = (
    ClassStyle("ground", (0.25, 0.05, -0.2), "speckle", amp=0.15),
    ClassStyle("woodland", (-0.55, 0.05, -0.5), "speckle", amp=0.35),
    ClassStyle("grass", (-0.2, 0.5, -0.35), "stripes", amp=0.25, period=4.0),
    ClassStyle("water", (-0.6, -0.25, 0.55), "flat"),
    ClassStyle("building", (0.6, 0.2, 0.05), "stripes", amp=0.4, period=5.0),
    ClassStyle("court", (0.7, -0.15, 0.25), "stripes", amp=0.3, period=3.0),
    ClassStyle("pavement", (0.05, 0.02, 0.1), "speckle", amp=0.1),
)


@dataclass(frozen=True)
class SceneSpec:
    """Procedural scene recipe. Classes are 1..K (class 0 is 'unchanged')."""

    size: int = 64
    num_patches: int = 8
    palette: tuple = DEFAULT_PALETTE
    seed: int = 0

    def __post_init__(self):
        if len(self.palette) < 2:
            raise ValueError("palette needs at least 2 classes")

    @property
    def num_classes(self) -> int:
        return len(self.palette)


@dataclass
class Scene:
    """A rendered scene with its class map and patch bookkeeping."""

    spec: SceneSpec
    hr: np.ndarray
    class_map: np.ndarray
    patch_map: np.ndarray  # 0 = background, i >= 1 = index into patch_classes
    patch_classes: list
    texture_seed: int


def _texture_field(style: ClassStyle, cls: int, size: int, texture_seed: int) -> np.ndarray:
    """Per-class texture over the full canvas as an offset to the base color."""
    if style.texture == "flat" or style.amp == 0.0:
        return np.zeros((size, size, 1), dtype=np.float32)
    srng = np.random.default_rng((texture_seed, cls))
    if style.texture == "stripes":
        phi = srng.uniform(0, math.pi)
        phase = srng.uniform(0, 2 * math.pi)
        y, x = np.mgrid[0:size, 0:size].astype(np.float32)
        wave = np.sin(2 * math.pi * (x * math.cos(phi) + y * math.sin(phi)) / style.period + phase)
        return (style.amp * wave)[..., None].astype(np.float32)
    if style.texture == "speckle":
        return (style.amp * srng.uniform(-1, 1, size=(size, size, 1))).astype(np.float32)
    raise ValueError(f"unknown texture {style.texture!r}")


def render_class_map(class_map: np.ndarray, spec: SceneSpec, texture_seed: int) -> np.ndarray:
    """Render a class map to an image; pure in (class_map, spec, texture_seed)."""
    size = class_map.shape[0]
    out = np.zeros((size, size, 3), dtype=np.float32)
    for cls in np.unique(class_map):
        style = spec.palette[int(cls) - 1]
        sel = class_map == cls
        pixels = np.asarray(style.base_color, dtype=np.float32) + _texture_field(
            style, int(cls), size, texture_seed
        )
        out[sel] = np.clip(pixels, -1.0, 1.0)[sel]
    return out


def _rect_mask(size: int, cy, cx, hh, hw, theta) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    c, s = math.cos(theta), math.sin(theta)
    u = c * (x - cx) + s * (y - cy)
    v = -s * (x - cx) + c * (y - cy)
    return (np.abs(u) <= hw) & (np.abs(v) <= hh)


def generate_scene(spec: SceneSpec, rng: np.random.Generator = None) -> Scene:
    """Generate a scene: class-1 background plus textured random patches."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    texture_seed = int(rng.integers(2**31))
    size = spec.size
    class_map = np.ones((size, size), dtype=np.int32)
    patch_map = np.zeros((size, size), dtype=np.int32)
    patch_classes = []
    for i in range(spec.num_patches):
        cls = int(rng.integers(1, spec.num_classes + 1))
        cy, cx = rng.uniform(0, size, size=2)
        hh, hw = rng.uniform(size / 12, size / 4, size=2)
        theta = rng.uniform(0, math.pi) if rng.uniform() < 0.5 else 0.0
        sel = _rect_mask(size, cy, cx, hh, hw, theta)
        class_map[sel] = cls
        patch_map[sel] = i + 1
        patch_classes.append(cls)
    hr = render_class_map(class_map, spec, texture_seed)
    return Scene(spec, hr, class_map, patch_map, patch_classes, texture_seed)


def mutate_scene(
    scene: Scene,
    rng: np.random.Generator,
    change_rate: float,
    reseed_textures: bool = False,
):
    """Reassign ~change_rate of the patches and re-render the earlier-time view.

    Returns (ref, mask): ref is the re-rendered image; mask holds the HR-time
    class on pixels whose class differs between the two renders, 0 elsewhere.
    Pixels outside changed patches are bit-identical to hr unless
    reseed_textures is set.
    """
    if not 0.0 <= change_rate <= 1.0:
        raise ValueError(f"change_rate must be in [0, 1], got {change_rate}")
    spec = scene.spec
    ref_classes = scene.class_map.copy()
    for i, cls in enumerate(scene.patch_classes):
        if rng.uniform() < change_rate:
            choices = [c for c in range(1, spec.num_classes + 1) if c != cls]
            new_cls = int(choices[rng.integers(len(choices))])
            ref_classes[scene.patch_map == i + 1] = new_cls
    texture_seed = int(rng.integers(2**31)) if reseed_textures else scene.texture_seed
    ref = render_class_map(ref_classes, spec, texture_seed)
    changed = ref_classes != scene.class_map
    mask = np.where(changed, scene.class_map, 0).astype(np.int32)
    return ref, mask


def corrupt_mask(
    mask: np.ndarray,
    rng: np.random.Generator,
    fn_rate: float,
    fp_rate: float,
    class_count: int,
) -> np.ndarray:
    """Simulate change-detection errors on a ground-truth mask.

    False negatives: each connected changed component is zeroed with
    probability fn_rate. False positives: random rectangles inside the truly
    unchanged region are assigned random change classes until roughly an
    fp_rate fraction of that region is covered.
    """
    for name, rate in (("fn_rate", fn_rate), ("fp_rate", fp_rate)):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {rate}")
    mask = np.asarray(mask)
    out = mask.copy()
    labels, n_comp = ndimage.label(mask > 0)
    for comp in range(1, n_comp + 1):
        if rng.uniform() < fn_rate:
            out[labels == comp] = 0

    unchanged = mask == 0
    n_unchanged = int(unchanged.sum())
    if fp_rate == 0.0 or n_unchanged == 0:
        return out
    if fp_rate >= 1.0:
        out[unchanged] = rng.integers(1, class_count + 1, size=n_unchanged)
        return out
    size = mask.shape[0]
    target = fp_rate * n_unchanged
    painted = 0
    lo, hi = max(2, size // 16), max(3, size // 6)
    for _ in range(int(50 * target / (lo * lo) + 10)):
        if painted >= target:
            break
        hh = int(rng.integers(lo, hi + 1))
        ww = int(rng.integers(lo, hi + 1))
        y0 = int(rng.integers(0, max(1, size - hh)))
        x0 = int(rng.integers(0, max(1, mask.shape[1] - ww)))
        cls = int(rng.integers(1, class_count + 1))
        block = np.zeros_like(unchanged)
        block[y0 : y0 + hh, x0 : x0 + ww] = True
        sel = block & unchanged & (out == 0)
        painted += int(sel.sum())
        out[sel] = cls
    return out


@dataclass
class SamplePair:
    """An HR/Ref/mask triplet (LR filled in later by degradation)."""

    pair_id: str
    hr: np.ndarray
    ref: np.ndarray
    mask: np.ndarray
    lr: np.ndarray = None
    seed: int = None


@dataclass
class TrainingExample:
    """A cropped pair plus its synthesized LR input and crop provenance."""

    pair_id: str
    hr: np.ndarray
    ref: np.ndarray
    lr: np.ndarray
    mask: np.ndarray
    crop_yx: tuple
    scale: int


def generate_pairs(
    spec: SceneSpec, n: int, seed: int, change_rate: float = 0.5
) -> list:
    """Generate n independent scene pairs with per-example derived seeds."""
    pairs = []
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        scene = generate_scene(spec, rng)
        ref, mask = mutate_scene(scene, rng, change_rate)
        pairs.append(SamplePair(pair_id=f"{i:05d}", hr=scene.hr, ref=ref, mask=mask, seed=seed))
    return pairs


def make_example(
    pair: SamplePair,
    crop_size: int,
    config: DegradationConfig,
    rng: np.random.Generator,
) -> TrainingExample:
    """Apply one shared random crop to hr/ref/mask and synthesize the LR input."""
    h, w = pair.hr.shape[:2]
    if crop_size > h or crop_size > w:
        raise ValueError(f"crop {crop_size} larger than image {h}x{w}")
    if crop_size % config.scale:
        raise ValueError(f"crop {crop_size} not divisible by scale {config.scale}")
    y0 = int(rng.integers(0, h - crop_size + 1))
    x0 = int(rng.integers(0, w - crop_size + 1))
    sl = (slice(y0, y0 + crop_size), slice(x0, x0 + crop_size))
    hr = pair.hr[sl]
    return TrainingExample(
        pair_id=pair.pair_id,
        hr=hr,
        ref=pair.ref[sl],
        lr=degrade(hr, config, rng),
        mask=pair.mask[sl],
        crop_yx=(y0, x0),
        scale=config.scale,
    )


def image_to_u8(img: np.ndarray) -> np.ndarray:
    """[-1, 1] float image to 8-bit."""
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(
        np.uint8
    )


def u8_to_image(u8: np.ndarray) -> np.ndarray:
    """8-bit image to [-1, 1] float32."""
    return (np.asarray(u8, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(root, pairs, num_classes: int) -> dict:
    """Write hr/ref/mask PNG trees plus a manifest; returns the manifest dict."""
    root = Path(root)
    for sub in ("hr", "ref", "mask"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for pair in pairs:
        PILImage.fromarray(image_to_u8(pair.hr), mode="RGB").save(root / "hr" / f"{pair.pair_id}.png")
        PILImage.fromarray(image_to_u8(pair.ref), mode="RGB").save(
            root / "ref" / f"{pair.pair_id}.png"
        )
        PILImage.fromarray(pair.mask.astype(np.uint8), mode="L").save(
            root / "mask" / f"{pair.pair_id}.png"
        )
        entries.append(
            {
                "id": pair.pair_id,
                "width": int(pair.hr.shape[1]),
                "height": int(pair.hr.shape[0]),
                "hr_sha256": _sha256(root / "hr" / f"{pair.pair_id}.png"),
                "ref_sha256": _sha256(root / "ref" / f"{pair.pair_id}.png"),
                "mask_sha256": _sha256(root / "mask" / f"{pair.pair_id}.png"),
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "num_change_classes": int(num_classes),
        "examples": entries,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


@dataclass
class Manifest:
    """Validated index of a dataset tree."""

    root: Path
    num_change_classes: int
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def load_pair(self, index: int) -> SamplePair:
        entry = self.entries[index]
        pid = entry["id"]
        hr = u8_to_image(np.asarray(PILImage.open(self.root / "hr" / f"{pid}.png").convert("RGB")))
        ref = u8_to_image(np.asarray(PILImage.open(self.root / "ref" / f"{pid}.png").convert("RGB")))
        mask = np.asarray(PILImage.open(self.root / "mask" / f"{pid}.png")).astype(np.int32)
        return SamplePair(pair_id=pid, hr=hr, ref=ref, mask=mask)


def ingest_dataset(root, scale: int, num_classes: int = None) -> Manifest:
    """Index and validate a ``{hr,ref,mask}`` tree; collects all problems.

    num_classes defaults to the value recorded in an existing manifest, else
    to the maximum class found in the masks.
    """
    root = Path(root)
    ids = sorted(p.stem for p in (root / "hr").glob("*.png")) if (root / "hr").is_dir() else []
    for sub in ("ref", "mask"):
        if (root / sub).is_dir():
            ids = sorted(set(ids) | {p.stem for p in (root / sub).glob("*.png")})

    recorded_k = None
    manifest_path = root / MANIFEST_NAME
    if manifest_path.is_file():
        recorded_k = json.loads(manifest_path.read_text()).get("num_change_classes")
    problems, entries, max_class = [], [], 0
    for pid in ids:
        paths = {sub: root / sub / f"{pid}.png" for sub in ("hr", "ref", "mask")}
        missing = [sub for sub, p in paths.items() if not p.is_file()]
        if missing:
            problems.append(f"{pid}: missing {'/'.join(missing)} counterpart")
            continue
        hr = PILImage.open(paths["hr"])
        ref = PILImage.open(paths["ref"])
        mask = PILImage.open(paths["mask"])
        if hr.size != ref.size or hr.size != mask.size:
            problems.append(
                f"{pid}: size mismatch hr={hr.size} ref={ref.size} mask={mask.size}"
            )
            continue
        w, h = hr.size
        if h % scale or w % scale:
            problems.append(f"{pid}: size {w}x{h} not divisible by scale {scale}")
            continue
        mask_vals = np.asarray(mask)
        max_class = max(max_class, int(mask_vals.max()) if mask_vals.size else 0)
        if num_classes is not None and mask_vals.size and mask_vals.max() > num_classes:
            problems.append(
                f"{pid}: mask class {int(mask_vals.max())} exceeds num_classes {num_classes}"
            )
            continue
        entries.append(
            {
                "id": pid,
                "width": w,
                "height": h,
                "hr_sha256": _sha256(paths["hr"]),
                "ref_sha256": _sha256(paths["ref"]),
                "mask_sha256": _sha256(paths["mask"]),
            }
        )
    if problems:
        raise DatasetValidationError(problems)
    k = num_classes if num_classes is not None else (recorded_k or max_class)
    return Manifest(root=root, num_change_classes=int(k or 0), entries=entries)
