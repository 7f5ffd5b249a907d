"""Pipeline configuration: TOML loading, schema validation with defaults,
canonical hashing, and per-stage dependency hashes used for resume logic."""

from __future__ import annotations

import copy
import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .losses import LossWeights
from .mask_ops import OcclusionMaskParams

DEFAULTS = {
    "seed": 0,
    "data": {
        "resolution": [256, 192],
        "label_schema": "default",
        "pose_radius": 4,
    },
    "nets": {
        "base_width": 64,
        "depth": 4,
        "disc_scales": 2,
        "disc_width": 64,
        "tps_grid_size": 5,
        "stn_width": 32,
    },
    "warp": {"max_offset": 0.4},
    "loss": {
        "adv_mode": "lsgan",
        "vgg_weights_path": "",
        "perceptual": "stub",
        "weights": {
            "alpha1": 1.0,
            "alpha2": 10.0,
            "beta1": 0.2,
            "beta2": 20.0,
            "beta3": 15.0,
            "gamma1": 1.0,
            "gamma2": 10.0,
        },
    },
    "mask": {
        "n_streaks": [1, 4],
        "streak_width": [8, 32],
        "streak_points": [3, 6],
        "n_holes": [1, 3],
        "hole_area_fraction": [0.02, 0.12],
        "hole_shape": "ellipse",
        "fraction_bounds": [0.1, 0.6],
        "region": "garment_bbox",
    },
    "fabricator": {"iterations": 300, "batch_size": 4, "learning_rate": 2e-4},
    "segmenter": {"iterations": 300, "batch_size": 4, "learning_rate": 2e-4},
    "warper": {"iterations": 300, "batch_size": 4, "learning_rate": 2e-4},
    "fuser": {"iterations": 300, "batch_size": 4, "learning_rate": 2e-4},
    "eval": {"features": "stub", "inception_weights_path": ""},
}

# sections whose values feed each stage's effective configuration
STAGE_SECTIONS = {
    "fabricator": ("seed", "data", "nets", "mask", "fabricator"),
    "segmenter": ("seed", "data", "nets", "loss", "segmenter"),
    "warper": ("seed", "data", "nets", "loss", "warp", "warper"),
    "fuser": ("seed", "data", "nets", "loss", "fuser"),
    "evaluate": ("seed", "data", "eval"),
}

# upstream stages whose hashes chain into a stage's hash
STAGE_UPSTREAM = {
    "fabricator": (),
    "segmenter": (),
    "warper": ("fabricator",),
    "fuser": ("warper", "segmenter"),
    "evaluate": ("fuser",),
}


def _merge_validated(defaults, user, path=""):
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key '{here}'")
        base = defaults[key]
        if isinstance(base, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{here}' expects a table")
            out[key] = _merge_validated(base, value, here)
        else:
            if isinstance(base, bool) and not isinstance(value, bool):
                raise ConfigError(f"config key '{here}' expects a boolean")
            if isinstance(base, (int, float)) and not isinstance(base, bool):
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(f"config key '{here}' expects a number")
            elif isinstance(base, str) and not isinstance(value, str):
                raise ConfigError(f"config key '{here}' expects a string")
            elif isinstance(base, list) and not isinstance(value, list):
                raise ConfigError(f"config key '{here}' expects a list")
            out[key] = value
    return out


def _canonical(values):
    return json.dumps(values, sort_keys=True, separators=(",", ":"))


class PipelineConfig:
    """Validated configuration with defaults filled in."""

    def __init__(self, values=None):
        self.values = _merge_validated(DEFAULTS, values or {})
        self._validate()

    def _validate(self):
        for stage in ("fabricator", "segmenter", "warper", "fuser"):
            sec = self.values[stage]
            if sec["iterations"] < 1:
                raise ConfigError(f"config key '{stage}.iterations' must be >= 1")
            if sec["learning_rate"] <= 0:
                raise ConfigError(f"config key '{stage}.learning_rate' must be > 0")
            if sec["batch_size"] < 1:
                raise ConfigError(f"config key '{stage}.batch_size' must be >= 1")
        for name, w in self.values["loss"]["weights"].items():
            if w < 0:
                raise ConfigError(f"config key 'loss.weights.{name}' must be nonnegative")
        if self.values["loss"]["adv_mode"] not in ("lsgan", "vanilla"):
            raise ConfigError("config key 'loss.adv_mode' must be 'lsgan' or 'vanilla'")

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def resolution(self):
        h, w = self.values["data"]["resolution"]
        return int(h), int(w)

    def hash(self):
        return hashlib.sha256(_canonical(self.values).encode("utf-8")).hexdigest()

    def stage_hash(self, stage):
        """Hash of the stage's effective config plus its upstream chain."""
        if stage not in STAGE_SECTIONS:
            raise ConfigError(f"unknown stage '{stage}'")
        parts = {sec: self.values[sec] for sec in STAGE_SECTIONS[stage]}
        payload = {
            "stage": stage,
            "sections": parts,
            "upstream": {up: self.stage_hash(up) for up in STAGE_UPSTREAM[stage]},
        }
        return hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()

    def loss_weights(self):
        return LossWeights(**self.values["loss"]["weights"])

    def mask_params(self):
        m = self.values["mask"]
        return OcclusionMaskParams(
            n_streaks=tuple(m["n_streaks"]),
            streak_width=tuple(m["streak_width"]),
            streak_points=tuple(m["streak_points"]),
            n_holes=tuple(m["n_holes"]),
            hole_area_fraction=tuple(m["hole_area_fraction"]),
            hole_shape=m["hole_shape"],
            fraction_bounds=tuple(m["fraction_bounds"]),
        )


def load_config(path=None):
    """Load and validate a TOML config file; None yields all defaults."""
    if path is None:
        return PipelineConfig()
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error in {path}: {exc}") from exc
    return PipelineConfig(raw)


def derive_seed(root_seed, stage):
    """Stable per-stage seed split keyed by stage name."""
    digest = hashlib.sha256(f"{root_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**31)
