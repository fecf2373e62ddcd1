"""Procedural multi-view face dataset.

Each identity is a textured head ellipsoid with four landmarks (two eyes,
nose, mouth).  A view rotates the head, projects it orthographically onto a
55x47 canvas and draws the landmarks as soft blobs.  Raw capture follows
the 2/5/2/2/2 (L/C/R/U/D) per-identity layout; augmentation brings every
view to 5 images with mirroring and small affine warps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

HEIGHT, WIDTH = 55, 47
CENTER_ROW, CENTER_COL = (HEIGHT - 1) / 2, (WIDTH - 1) / 2


class ViewLabel(str, enum.Enum):
    L = "L"
    C = "C"
    R = "R"
    U = "U"
    D = "D"

    @property
    def code(self) -> int:
        return "LCRUD".index(self.value)


VIEWS = tuple(ViewLabel)
RAW_COUNTS = {ViewLabel.L: 2, ViewLabel.C: 5, ViewLabel.R: 2, ViewLabel.U: 2, ViewLabel.D: 2}
AUGMENTED_COUNT = 5
MIRROR_LABEL = {ViewLabel.L: ViewLabel.R, ViewLabel.R: ViewLabel.L}

# (yaw, pitch) in degrees; positive yaw turns the face toward image right
VIEW_ANGLES = {
    ViewLabel.L: (-30.0, 0.0),
    ViewLabel.C: (0.0, 0.0),
    ViewLabel.R: (30.0, 0.0),
    ViewLabel.U: (0.0, 20.0),
    ViewLabel.D: (0.0, -20.0),
}

LCR = (ViewLabel.L, ViewLabel.C, ViewLabel.R)
UCD = (ViewLabel.U, ViewLabel.C, ViewLabel.D)

JITTER_DEG = 2.0
JITTER_PX = 1.0
NOISE_STD = 0.02
LIGHT_JITTER_DEG = 15.0
LIGHT_GAIN = 0.1
BACKGROUND = np.array([0.25, 0.27, 0.3])
LIGHT = np.array([0.0, 0.35, 1.0]) / np.linalg.norm([0.0, 0.35, 1.0])
LANDMARKS = ("left_eye", "right_eye", "nose", "mouth")
LOOKALIKE = 2


def as_view(v) -> ViewLabel:
    return v if isinstance(v, ViewLabel) else ViewLabel(str(v).upper())


def split_for_instance(k: int) -> str:
    return {4: "test", 3: "valid"}.get(k, "train")


@dataclass
class IdentityParams:
    """Geometry and appearance of one synthetic subject (pixel units)."""

    axes: np.ndarray  # ellipsoid semi-axes (x, y, z)
    landmarks: np.ndarray  # (4, 3) head-frame positions, rows as LANDMARKS
    sizes: np.ndarray  # (4,) blob radii
    skin: np.ndarray  # (3,) RGB
    colors: np.ndarray  # (4, 3) RGB per landmark
    texture_seed: int
    texture_amp: float = 0.15

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.axes, self.landmarks.ravel(), self.sizes, self.skin,
                               self.colors.ravel(), [self.texture_seed, self.texture_amp]])


def _surface_z(axes, x, y, depth):
    """z of a point at (x, y) placed ``depth`` (0..1) of the way to the surface."""
    r = 1.0 - (x / axes[0]) ** 2 - (y / axes[1]) ** 2
    return depth * axes[2] * np.sqrt(max(r, 0.0))


def generate_identity(dataset_seed: int, index: int) -> IdentityParams:
    """Deterministic subject ``index`` of dataset ``dataset_seed``.

    Consecutive pairs of identities (0-1, 2-3, ...) share their frontal
    layout and colors and differ in head depth, landmark depth and cheek
    texture, so a frontal image alone separates them only weakly.
    """
    front = np.random.default_rng([dataset_seed, index // LOOKALIKE, 0x1D])
    prof = np.random.default_rng([dataset_seed, index, 0x3D])
    axes = np.array([front.uniform(14.0, 18.0), front.uniform(19.0, 23.5), prof.uniform(10.0, 19.0)])

    eye_x = front.uniform(0.28, 0.46) * axes[0]
    eye_y = front.uniform(0.05, 0.3) * axes[1]
    eye_dy = front.normal(0.0, 0.6)
    nose = (front.uniform(-0.06, 0.06) * axes[0], front.uniform(-0.25, -0.05) * axes[1])
    mouth = (front.uniform(-0.06, 0.06) * axes[0], front.uniform(-0.62, -0.42) * axes[1])
    pts = [(-eye_x, eye_y), (eye_x + front.normal(0.0, 0.5), eye_y + eye_dy), nose, mouth]
    eye_depth = prof.uniform(0.75, 0.97)
    depths = [eye_depth, eye_depth, prof.uniform(0.8, 1.0), prof.uniform(0.75, 0.97)]
    landmarks = np.array([(x, y, _surface_z(axes, x, y, d)) for (x, y), d in zip(pts, depths)])

    eye_size = front.uniform(1.4, 2.4)
    sizes = np.array([eye_size, eye_size, front.uniform(1.5, 3.0), front.uniform(1.8, 3.4)])

    tone = front.uniform(0.45, 0.9)
    skin = np.clip(tone * np.array([1.0, front.uniform(0.75, 0.9), front.uniform(0.6, 0.8)]), 0.0, 1.0)
    eye_color = front.uniform(0.0, 0.45, size=3)
    colors = np.stack([eye_color, eye_color,
                       np.clip(skin * front.uniform(0.6, 0.85), 0, 1),
                       front.uniform([0.35, 0.05, 0.05], [0.8, 0.35, 0.35])])
    return IdentityParams(axes, landmarks, sizes, skin, colors, int(prof.integers(2**31)))


def make_symmetric(identity: IdentityParams) -> IdentityParams:
    """Mirror-symmetric copy: right eye reflects the left, midline features
    centered, no surface texture."""
    lm = identity.landmarks.copy()
    lm[1] = lm[0] * [-1, 1, 1]
    lm[2:, 0] = 0.0
    for i in (2, 3):
        lm[i, 2] = _surface_z(identity.axes, 0.0, lm[i, 1], 0.95)
    sizes = identity.sizes.copy()
    sizes[1] = sizes[0]
    colors = identity.colors.copy()
    colors[1] = colors[0]
    return replace(identity, landmarks=lm, sizes=sizes, colors=colors, texture_amp=0.0)


def rotation(yaw_deg: float, pitch_deg: float, roll_deg: float = 0.0) -> np.ndarray:
    """Head-to-camera rotation.  x right, y up, z toward the camera.

    Positive yaw turns the face to image right, positive pitch tilts it up.
    """
    yw, pt, rl = np.deg2rad([yaw_deg, pitch_deg, roll_deg])
    ry = np.array([[np.cos(yw), 0, np.sin(yw)], [0, 1, 0], [-np.sin(yw), 0, np.cos(yw)]])
    rx = np.array([[1, 0, 0], [0, np.cos(pt), np.sin(pt)], [0, -np.sin(pt), np.cos(pt)]])
    rz = np.array([[np.cos(rl), -np.sin(rl), 0], [np.sin(rl), np.cos(rl), 0], [0, 0, 1]])
    return rz @ rx @ ry


def _texture(identity: IdentityParams, q: np.ndarray) -> np.ndarray:
    if identity.texture_amp == 0.0:
        return np.zeros(q.shape[:-1])
    rng = np.random.default_rng(identity.texture_seed)
    freqs = rng.normal(0.0, 0.18, size=(6, 3))
    phases = rng.uniform(0, 2 * np.pi, size=6)
    side = np.clip((np.abs(q[..., 0]) / identity.axes[0] - 0.5) / 0.4, 0.0, 1.0)
    return identity.texture_amp * side * np.sin(q @ freqs.T + phases).mean(axis=-1) * 2.0


def render_view(identity: IdentityParams, view, instance_seed, jitter: bool = True,
                noise: float = NOISE_STD) -> np.ndarray:
    """Render one 55x47x3 image with values in [0, 1].

    ``instance_seed`` (int or sequence of ints) drives the pose jitter and
    pixel noise, plus a small change of light direction and intensity;
    identical arguments give bit-identical images.
    """
    view = as_view(view)
    rng = np.random.default_rng(instance_seed)
    yaw, pitch = VIEW_ANGLES[view]
    roll, tx, ty = 0.0, 0.0, 0.0
    light, gain = LIGHT, 1.0
    if jitter:
        dyaw, dpitch, roll = rng.uniform(-JITTER_DEG, JITTER_DEG, size=3)
        yaw, pitch = yaw + dyaw, pitch + dpitch
        tx, ty = rng.uniform(-JITTER_PX, JITTER_PX, size=2)
        light = rotation(*rng.uniform(-LIGHT_JITTER_DEG, LIGHT_JITTER_DEG, size=2)) @ LIGHT
        gain = rng.uniform(1.0 - LIGHT_GAIN, 1.0 + LIGHT_GAIN)
    rot = rotation(yaw, pitch, roll)

    cols = np.arange(WIDTH) - CENTER_COL - tx
    rows = CENTER_ROW - np.arange(HEIGHT) - ty
    x, y = np.meshgrid(cols, rows)

    # ray (x, y, t) in camera frame -> o + t*d in head frame
    inv_a2 = 1.0 / identity.axes ** 2
    o = np.stack([x, y, np.zeros_like(x)], axis=-1) @ rot  # R^T applied to row vectors
    d = rot[2]
    qa = np.sum(d * d * inv_a2)
    qb = 2.0 * np.sum(o * d * inv_a2, axis=-1)
    qc = np.sum(o * o * inv_a2, axis=-1) - 1.0
    disc = qb * qb - 4 * qa * qc
    hit = disc > 0
    t = (-qb + np.sqrt(np.where(hit, disc, 0.0))) / (2 * qa)
    q = o + t[..., None] * d

    normal = q * inv_a2
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    shade = gain * (0.45 + 0.55 * np.clip((normal @ rot.T) @ light, 0.0, 1.0))
    surface = identity.skin * (1.0 + _texture(identity, q))[..., None]

    for pos, size, color in zip(identity.landmarks, identity.sizes, identity.colors):
        cam = rot @ pos
        n = rot @ (pos * inv_a2)
        facing = np.clip(n[2] / np.linalg.norm(n) / 0.3, 0.0, 1.0)
        r2 = (x - cam[0]) ** 2 + (y - cam[1]) ** 2
        wgt = facing * np.exp(-r2 / (2 * size ** 2))
        surface = surface + wgt[..., None] * (color - surface)

    img = np.where(hit[..., None], surface * shade[..., None], BACKGROUND)
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

@dataclass
class ImageRecord:
    identity: int
    view: ViewLabel
    instance: int
    image: np.ndarray
    split: str = "train"
    source: str = "raw"  # raw | mirror | affine


@dataclass
class MultiViewDataset:
    identities: list[IdentityParams]
    records: list[ImageRecord] = field(default_factory=list)
    seed: int = 0
    augmented: bool = False

    @property
    def num_identities(self) -> int:
        return len(self.identities)

    def __len__(self) -> int:
        return len(self.records)

    def views(self) -> set[ViewLabel]:
        return {r.view for r in self.records}

    def histogram(self, identity: int) -> dict[ViewLabel, int]:
        out = {v: 0 for v in VIEWS}
        for r in self.records:
            if r.identity == identity:
                out[r.view] += 1
        return out


def instance_key(dataset_seed: int, identity: int, view: ViewLabel, instance: int) -> list[int]:
    return [dataset_seed, identity, view.code, instance]


def build_dataset(num_identities: int, dataset_seed: int = 0) -> MultiViewDataset:
    """Raw capture: 2/5/2/2/2 images per identity over L/C/R/U/D."""
    if num_identities < 2:
        raise ValueError(f"need at least 2 identities, got {num_identities}")
    ids = [generate_identity(dataset_seed, i) for i in range(num_identities)]
    records = []
    for i, ident in enumerate(ids):
        for view in VIEWS:
            for k in range(RAW_COUNTS[view]):
                img = render_view(ident, view, instance_key(dataset_seed, i, view, k))
                records.append(ImageRecord(i, view, k, img, split_for_instance(k)))
    return MultiViewDataset(ids, records, dataset_seed)


def mirror(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1, :])


def random_affine(image: np.ndarray, rng: np.random.Generator, max_rot: float = 5.0,
                  max_shift: float = 2.0, scale_range=(0.95, 1.05)) -> np.ndarray:
    """Rotate/scale about the image center and shift; borders replicate edges."""
    ang = np.deg2rad(rng.uniform(-max_rot, max_rot))
    s = rng.uniform(*scale_range)
    shift = rng.uniform(-max_shift, max_shift, size=2)
    # maps output (row, col) to input coordinates
    inv = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]]) / s
    center = np.array([CENTER_ROW, CENTER_COL])
    offset = center - inv @ (center + shift)
    out = np.empty_like(image)
    for ch in range(image.shape[2]):
        out[..., ch] = ndimage.affine_transform(image[..., ch], inv, offset=offset, order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def augment(dataset: MultiViewDataset) -> MultiViewDataset:
    """Bring every (identity, view) to exactly 5 images.

    Slots are filled in order: originals, horizontal mirrors (L and R swap
    labels, C/U/D keep theirs), then seeded affine warps of same-view
    originals.
    """
    if dataset.augmented:
        raise ValueError("dataset is already augmented")
    by_key: dict[tuple[int, ViewLabel], list[ImageRecord]] = {}
    for r in dataset.records:
        by_key.setdefault((r.identity, r.view), []).append(r)

    records = []
    for i in range(dataset.num_identities):
        for view in VIEWS:
            originals = by_key.get((i, view), [])
            mirror_src = by_key.get((i, MIRROR_LABEL.get(view, view)), [])
            slots = [(r.image, "raw") for r in originals][:AUGMENTED_COUNT]
            for r in mirror_src:
                if len(slots) >= AUGMENTED_COUNT:
                    break
                slots.append((mirror(r.image), "mirror"))
            if not originals and len(slots) < AUGMENTED_COUNT:
                raise ValueError(f"identity {i} has no {view.value} originals to warp")
            j = 0
            while len(slots) < AUGMENTED_COUNT:
                k = len(slots)
                rng = np.random.default_rng(instance_key(dataset.seed, i, view, k) + [0xAF])
                slots.append((random_affine(originals[j % len(originals)].image, rng), "affine"))
                j += 1
            for k, (img, src) in enumerate(slots):
                records.append(ImageRecord(i, view, k, img, split_for_instance(k), src))
    return MultiViewDataset(list(dataset.identities), records, dataset.seed, augmented=True)


def select_subviews(dataset: MultiViewDataset, views: Iterable) -> MultiViewDataset:
    keep = {as_view(v) for v in views}
    if not keep:
        raise ValueError("select_subviews needs at least one view")
    records = [r for r in dataset.records if r.view in keep]
    return MultiViewDataset(list(dataset.identities), records, dataset.seed, dataset.augmented)


@dataclass
class Sample:
    views: dict[str, np.ndarray]
    label: int
    split: str
    index: int = 0


def assemble_samples(dataset: MultiViewDataset, view_order: Sequence) -> list[Sample]:
    """Five multi-view tuples per identity, tuple k taking instance k of each
    view (wrapping when a view has fewer than 5 images).  Tuples 0-2 train,
    3 valid, 4 test."""
    order = [as_view(v) for v in view_order]
    table: dict[tuple[int, ViewLabel], dict[int, np.ndarray]] = {}
    for r in dataset.records:
        table.setdefault((r.identity, r.view), {})[r.instance] = r.image
    samples = []
    for i in range(dataset.num_identities):
        for v in order:
            if not table.get((i, v)):
                raise ValueError(f"identity {i} has no images for view {v.value}")
        for k in range(AUGMENTED_COUNT):
            views = {}
            for v in order:
                inst = table[(i, v)]
                keys = sorted(inst)
                views[v.value] = inst[keys[k % len(keys)]]
            samples.append(Sample(views, i, split_for_instance(k), k))
    return samples


def split_samples(samples: Sequence[Sample], split: str) -> list[Sample]:
    return [s for s in samples if s.split == split]


def stack_views(samples: Sequence[Sample], view_order: Sequence[str]) -> dict[str, np.ndarray]:
    return {v: np.stack([s.views[v] for s in samples]) for v in view_order}
