"""Core data types, VITON-layout ingestion, pose heatmaps and synthetic fixtures.

Images are float32 arrays in CHW layout. Network-domain images live in
[-1, 1], metric-domain images in [0, 1]. Label maps are HxW integer arrays
interpreted through a LabelSchema that groups raw parser ids into semantic
regions (arms, torso skin, upper clothes, ...).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import DatasetLayoutError, SchemaError, UnpairedSampleError

DEFAULT_RESOLUTION = (256, 192)  # (height, width)
N_KEYPOINTS = 18
DEFAULT_POSE_RADIUS = 4

# 20-label parser convention used by the common try-on preprocessing stacks.
DEFAULT_LABEL_GROUPS = {
    "background": [0],
    "hair": [1, 2],
    "face": [4, 13],
    "torso_skin": [10],
    "left_arm": [14],
    "right_arm": [15],
    "upper_clothes": [5, 6, 7],
    "lower_body": [8, 9, 12, 16, 17, 18, 19],
    "other": [3, 11],
}

REQUIRED_GROUPS = ("background", "left_arm", "right_arm", "torso_skin", "upper_clothes")


def to_metric(img):
    """Map a network-domain image ([-1, 1]) to metric domain ([0, 1])."""
    return (img + 1.0) / 2.0


def to_network(img):
    """Map a metric-domain image ([0, 1]) to network domain ([-1, 1])."""
    return img * 2.0 - 1.0


@dataclass(frozen=True)
class LabelSchema:
    """Mapping from semantic group names to parser label-id sets."""

    groups: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_GROUPS))
    n_labels: int = 20

    def __post_init__(self):
        for name in REQUIRED_GROUPS:
            if name not in self.groups:
                raise SchemaError(f"schema incomplete: missing group '{name}'")

    def ids(self, group):
        if group not in self.groups:
            raise SchemaError(f"schema incomplete: missing group '{group}'")
        return tuple(self.groups[group])


@dataclass
class SemanticMask:
    """Integer label map plus the schema used to derive binary group masks."""

    labels: np.ndarray  # (H, W) integer
    schema: LabelSchema = field(default_factory=LabelSchema)

    @property
    def shape(self):
        return self.labels.shape

    def one_hot(self):
        """K x H x W one-hot expansion; sums to exactly 1 per pixel."""
        k = self.schema.n_labels
        eye = np.eye(k, dtype=np.float32)
        return np.transpose(eye[self.labels], (2, 0, 1))

    def group_mask(self, *groups):
        """Binary {0,1} mask of the union of the given semantic groups."""
        ids = []
        for g in groups:
            ids.extend(self.schema.ids(g))
        return np.isin(self.labels, ids).astype(np.float32)

    def body_part_mask(self):
        """Arms plus torso skin (the regions the compositor must preserve)."""
        return self.group_mask("left_arm", "right_arm", "torso_skin")

    def clothes_mask(self):
        """The worn upper-clothes region."""
        return self.group_mask("upper_clothes")


@dataclass
class PoseKeypoints:
    """18 (x, y, confidence) triples; absent joints carry confidence 0."""

    points: np.ndarray  # (18, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.shape != (N_KEYPOINTS, 3):
            raise ValueError(f"expected ({N_KEYPOINTS}, 3) keypoints, got {pts.shape}")
        self.points = pts


@dataclass
class TryOnSample:
    person: np.ndarray  # (3, H, W) network domain
    cloth: np.ndarray  # (3, H, W) network domain
    parse: SemanticMask
    pose: PoseKeypoints
    id: str


def render_pose_heatmap(pose, height, width, radius=DEFAULT_POSE_RADIUS):
    """18-channel binary map with a filled (2r+1)-square at each keypoint.

    Squares clip at image borders; confidence-0 joints yield all-zero channels.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if height < 2 * radius or width < 2 * radius:
        raise ValueError("image too small for the requested radius")
    out = np.zeros((N_KEYPOINTS, height, width), dtype=np.float32)
    for k, (x, y, conf) in enumerate(pose.points):
        if conf <= 0:
            continue
        cx, cy = int(round(float(x))), int(round(float(y)))
        r0, r1 = max(cy - radius, 0), min(cy + radius + 1, height)
        c0, c1 = max(cx - radius, 0), min(cx + radius + 1, width)
        if r0 < r1 and c0 < c1:
            out[k, r0:r1, c0:c1] = 1.0
    return out


def fuse_body_labels(parse):
    """Union of arm and torso-skin masks (the fused body map fed to the layout net)."""
    return parse.group_mask("left_arm", "right_arm", "torso_skin")


# ---------------------------------------------------------------------------
# VITON-layout dataset ingestion
# ---------------------------------------------------------------------------

_SUBDIRS = ("image", "cloth", "image-parse", "pose")
_IMAGE_EXTS = (".jpg", ".jpeg", ".png")


@dataclass
class SampleDescriptor:
    """Lazily-loadable pointer to one dataset sample."""

    id: str
    image_path: str
    cloth_path: str
    parse_path: str
    pose_path: str
    resolution: tuple = DEFAULT_RESOLUTION
    schema: LabelSchema = field(default_factory=LabelSchema)

    def load(self):
        h, w = self.resolution
        person = _load_image(self.image_path, h, w)
        cloth = _load_image(self.cloth_path, h, w)
        parse = _load_parse(self.parse_path, h, w, self.schema)
        pose = _load_pose(self.pose_path)
        return TryOnSample(person=person, cloth=cloth, parse=parse, pose=pose, id=self.id)


def _load_image(path, height, width):
    img = Image.open(path).convert("RGB")
    if img.size != (width, height):
        img = img.resize((width, height), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return np.transpose(arr, (2, 0, 1))


def _load_parse(path, height, width, schema):
    img = Image.open(path)
    if img.mode not in ("L", "P", "I"):
        img = img.convert("L")
    if img.size != (width, height):
        img = img.resize((width, height), Image.NEAREST)
    labels = np.asarray(img, dtype=np.int64)
    labels = np.clip(labels, 0, schema.n_labels - 1)
    return SemanticMask(labels=labels, schema=schema)


def _load_pose(path):
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    pts = np.asarray(raw, dtype=np.float32).reshape(N_KEYPOINTS, 3)
    return PoseKeypoints(points=pts)


def _stem_index(directory, exts):
    out = {}
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext.lower() in exts:
            out[stem] = os.path.join(directory, name)
    return out


def load_dataset(root, split, subset_list=None, resolution=DEFAULT_RESOLUTION, schema=None):
    """Enumerate samples of a VITON-layout dataset in deterministic id order.

    `subset_list` is a path to a newline-separated id file; it filters the
    samples and fixes their order.
    """
    schema = schema or LabelSchema()
    base = os.path.join(root, split)
    if not os.path.isdir(base):
        base = root
    for sub in _SUBDIRS:
        if not os.path.isdir(os.path.join(base, sub)):
            raise DatasetLayoutError(f"dataset layout: missing subdirectory '{sub}/' under {base}")

    images = _stem_index(os.path.join(base, "image"), _IMAGE_EXTS)
    cloths = _stem_index(os.path.join(base, "cloth"), _IMAGE_EXTS)
    parses = _stem_index(os.path.join(base, "image-parse"), (".png",))
    poses = _stem_index(os.path.join(base, "pose"), (".json",))

    all_ids = set(images) | set(cloths) | set(parses) | set(poses)
    for sid in sorted(all_ids):
        missing = [
            sub
            for sub, idx in zip(_SUBDIRS, (images, cloths, parses, poses))
            if sid not in idx
        ]
        if missing:
            raise UnpairedSampleError(
                f"unpaired sample '{sid}': missing in {', '.join(missing)}"
            )

    ids = sorted(all_ids)
    if subset_list is not None:
        with open(subset_list, "r", encoding="utf-8") as f:
            wanted = [line.strip() for line in f if line.strip()]
        unknown = [sid for sid in wanted if sid not in all_ids]
        if unknown:
            raise UnpairedSampleError(f"subset references unknown ids: {', '.join(unknown)}")
        ids = wanted

    return [
        SampleDescriptor(
            id=sid,
            image_path=images[sid],
            cloth_path=cloths[sid],
            parse_path=parses[sid],
            pose_path=poses[sid],
            resolution=tuple(resolution),
            schema=schema,
        )
        for sid in ids
    ]


# ---------------------------------------------------------------------------
# Synthetic fixtures
# ---------------------------------------------------------------------------


def _stripes(rows, cols, color_a, color_b, period, phase):
    """HxWx3 stripe texture, a deterministic function of absolute row index."""
    r = np.arange(rows)[:, None, None]
    band = ((r + phase) // period) % 2
    return np.where(band == 0, color_a, color_b) * np.ones((rows, cols, 3), dtype=np.float32)


def synth_fixture(seed, height=DEFAULT_RESOLUTION[0], width=DEFAULT_RESOLUTION[1]):
    """Deterministic procedural try-on sample (silhouette + striped garment).

    Same (seed, height, width) always yields byte-identical output; the parse
    satisfies the schema invariants by construction.
    """
    if height < 64 or width < 64:
        raise ValueError("fixture resolution must be at least 64x64")
    rng = np.random.default_rng(seed)
    schema = LabelSchema()
    labels = np.zeros((height, width), dtype=np.int64)

    jx = int(rng.integers(-2, 3))  # horizontal jitter, pixels

    def rows(a, b):
        return slice(int(a * height), int(b * height))

    def cols(a, b):
        return slice(max(int(a * width) + jx, 0), min(int(b * width) + jx, width))

    # hair / face
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = 0.17 * height, 0.5 * width + jx
    face = ((yy - cy) / (0.075 * height)) ** 2 + ((xx - cx) / (0.09 * width)) ** 2 <= 1.0
    hair = ((yy - (cy - 0.03 * height)) / (0.095 * height)) ** 2 + (
        (xx - cx) / (0.11 * width)
    ) ** 2 <= 1.0
    labels[hair] = 2
    labels[face] = 13
    # neck (torso skin)
    labels[rows(0.24, 0.30), cols(0.46, 0.54)] = 10
    # garment torso
    labels[rows(0.30, 0.62), cols(0.30, 0.70)] = 5
    # arms
    labels[rows(0.31, 0.60), cols(0.19, 0.28)] = 14
    labels[rows(0.31, 0.60), cols(0.72, 0.81)] = 15
    # lower body
    labels[rows(0.62, 0.95), cols(0.36, 0.64)] = 9

    parse = SemanticMask(labels=labels, schema=schema)

    # garment texture parameters
    color_a = rng.uniform(0.1, 0.9, size=3).astype(np.float32)
    color_b = rng.uniform(0.1, 0.9, size=3).astype(np.float32)
    period = int(rng.integers(4, 9))
    phase = int(rng.integers(0, period))
    skin = np.array([0.87, 0.72, 0.60], dtype=np.float32)
    hair_c = np.array([0.25, 0.15, 0.10], dtype=np.float32)
    pants = np.array([0.20, 0.22, 0.40], dtype=np.float32)

    person = np.full((height, width, 3), 0.82, dtype=np.float32)
    tex = _stripes(height, width, color_a, color_b, period, phase)
    person[labels == 2] = hair_c
    person[labels == 13] = skin
    person[labels == 10] = skin
    person[np.isin(labels, (14, 15))] = skin
    person[labels == 5] = tex[labels == 5]
    person[labels == 9] = pants

    cloth = np.ones((height, width, 3), dtype=np.float32)
    gm = np.zeros((height, width), dtype=bool)
    gm[rows(0.20, 0.75), int(0.22 * width) : int(0.78 * width)] = True
    cloth[gm] = tex[gm]

    # 18 keypoints laid out on the silhouette (nose, neck, shoulders, elbows,
    # wrists, hips, knees, ankles, eyes, ears)
    w2 = 0.5 * width + jx
    kp = np.array(
        [
            [w2, 0.16 * height, 1],
            [w2, 0.28 * height, 1],
            [0.32 * width + jx, 0.31 * height, 1],
            [0.24 * width + jx, 0.45 * height, 1],
            [0.23 * width + jx, 0.58 * height, 1],
            [0.68 * width + jx, 0.31 * height, 1],
            [0.76 * width + jx, 0.45 * height, 1],
            [0.77 * width + jx, 0.58 * height, 1],
            [0.42 * width + jx, 0.62 * height, 1],
            [0.42 * width + jx, 0.78 * height, 1],
            [0.42 * width + jx, 0.93 * height, 1],
            [0.58 * width + jx, 0.62 * height, 1],
            [0.58 * width + jx, 0.78 * height, 1],
            [0.58 * width + jx, 0.93 * height, 1],
            [0.46 * width + jx, 0.14 * height, 1],
            [0.54 * width + jx, 0.14 * height, 1],
            [0.42 * width + jx, 0.15 * height, 0],
            [0.58 * width + jx, 0.15 * height, 0],
        ],
        dtype=np.float32,
    )
    pose = PoseKeypoints(points=kp)

    return TryOnSample(
        person=np.transpose(to_network(person), (2, 0, 1)),
        cloth=np.transpose(to_network(cloth), (2, 0, 1)),
        parse=parse,
        pose=pose,
        id=f"fixture_{seed:04d}",
    )


def write_fixture_dataset(out_dir, n, seed, resolution=DEFAULT_RESOLUTION):
    """Write n synthetic fixtures to disk in the VITON directory layout."""
    if n < 1:
        raise ValueError("n must be >= 1")
    h, w = resolution
    for sub in _SUBDIRS:
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for i in range(n):
        s = synth_fixture(seed + i, h, w)
        _save_image(os.path.join(out_dir, "image", f"{s.id}.png"), s.person)
        _save_image(os.path.join(out_dir, "cloth", f"{s.id}.png"), s.cloth)
        Image.fromarray(s.parse.labels.astype(np.uint8), mode="L").save(
            os.path.join(out_dir, "image-parse", f"{s.id}.png")
        )
        with open(os.path.join(out_dir, "pose", f"{s.id}.json"), "w", encoding="utf-8") as f:
            json.dump(s.pose.points.tolist(), f)
    return out_dir


def _save_image(path, chw_network):
    arr = np.transpose(to_metric(chw_network), (1, 2, 0))
    Image.fromarray((np.clip(arr, 0, 1) * 255).round().astype(np.uint8)).save(path)
