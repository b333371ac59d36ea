"""Experiment configuration: TOML with nested sections, strict schema.

Unknown keys anywhere in the file are errors.  Every field has a default, so
a minimal config can be empty; the shipped ``configs/desk.toml`` spells out
the full desk-scale experiment.  All random seeds derive from ``seeds.master``
(overridable with ``--seed``) through fixed offsets, which keeps the splits
disjoint and the whole pipeline reproducible from one integer.

Sections and keys (defaults in parentheses):

  [codebook]   num_antennas (16), num_beams (32), carrier_hz (6e10),
               azimuth_lo (-0.35), azimuth_hi (0.35)
  [radio]      symbol_power (1.0), noise_variance (1.0)
  [world]      road_start, road_end, camera_fov, image_size, bs_position,
               camera_height, horizon_frac, vehicle_length_range,
               vehicle_height, min_separation, target_margin_px,
               az_step_range, history_len, gps_origin, gps_map,
               gps_noise_std, gps_bounds, max_vehicles
  [splits]     n_train (2000), n_val (300), n_test (500),
               train_corruption/val_corruption/test_corruption ("clear")
  [kb]         clusters (= num_beams), divisions (= num_beams),
               window_half_width (2)
  [train]      batch_size (32), epochs (30), learning_rate (1e-3),
               lr_reduction_factor (0.1), plateau_patience (3),
               plateau_min_delta (1e-4), transformer_learning_rate (2e-3),
               transformer_dropout (0.0)
  [fusion]     step (0.01), bound (1.0)
  [eval]       scenarios (["clear", "rain_light", "blind"]), t_max_ms (50.0)
  [seeds]      master (1)
  [corruption.<name>]  detection_drop_prob, mask_flip_prob, bbox_jitter_px,
               gps_noise_std -- defines or overrides a named preset
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..codebook import CodebookConfig
from ..channel import RadioParams
from ..scene import PRESETS, CorruptionProfile, WorldConfig

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    pass


def _defaults() -> dict:
    world = WorldConfig()
    return {
        "codebook": {
            "num_antennas": 16,
            "num_beams": 32,
            "carrier_hz": 60e9,
            "azimuth_lo": -0.35,
            "azimuth_hi": 0.35,
        },
        "radio": {"symbol_power": 1.0, "noise_variance": 1.0},
        "world": {
            "road_start": list(world.road_start),
            "road_end": list(world.road_end),
            "camera_fov": list(world.camera_fov),
            "image_size": list(world.image_size),
            "bs_position": list(world.bs_position),
            "camera_height": world.camera_height,
            "horizon_frac": world.horizon_frac,
            "vehicle_length_range": list(world.vehicle_length_range),
            "vehicle_height": world.vehicle_height,
            "min_separation": world.min_separation,
            "target_margin_px": world.target_margin_px,
            "az_step_range": list(world.az_step_range),
            "history_len": world.history_len,
            "gps_origin": list(world.gps_origin),
            "gps_map": [list(row) for row in world.gps_map],
            "gps_noise_std": world.gps_noise_std,
            "gps_bounds": list(world.gps_bounds),
            "max_vehicles": world.max_vehicles,
        },
        "splits": {
            "n_train": 2000,
            "n_val": 300,
            "n_test": 500,
            "train_corruption": "clear",
            "val_corruption": "clear",
            "test_corruption": "clear",
        },
        "kb": {"clusters": 0, "divisions": 0, "window_half_width": 2},
        "train": {
            "batch_size": 32,
            "epochs": 30,
            "learning_rate": 1e-3,
            "lr_reduction_factor": 0.1,
            "plateau_patience": 3,
            "plateau_min_delta": 1e-4,
            # sequence-model overrides; dropout 0 regularizes nothing the
            # 2000-sample splits need and costs convergence
            "transformer_learning_rate": 2e-3,
            "transformer_dropout": 0.0,
        },
        "fusion": {"step": 0.01, "bound": 1.0},
        "eval": {"scenarios": ["clear", "rain_light", "blind"], "t_max_ms": 50.0},
        "seeds": {"master": 1},
        "corruption": {},
    }


def _merge(defaults: dict, incoming: dict, path: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        here = f"{path}.{key}" if path else key
        if key not in incoming:
            out[key] = default
        elif isinstance(default, dict) and key != "corruption":
            if not isinstance(incoming[key], dict):
                raise ConfigError(f"{here} must be a section")
            out[key] = _merge(default, incoming[key], here)
        else:
            out[key] = incoming[key]
    for key in incoming:
        if key not in defaults:
            here = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key: {here}")
    return out


_PROFILE_KEYS = {"detection_drop_prob", "mask_flip_prob", "bbox_jitter_px", "gps_noise_std"}


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict = field(repr=False)
    codebook: CodebookConfig = field(init=False, repr=False)
    radio: RadioParams = field(init=False, repr=False)
    world: WorldConfig = field(init=False, repr=False)
    profiles: dict = field(init=False, repr=False)

    def __post_init__(self):
        raw = self.raw
        cb = raw["codebook"]
        wavelength = SPEED_OF_LIGHT / cb["carrier_hz"]
        object.__setattr__(self, "codebook", CodebookConfig.half_wavelength(
            int(cb["num_antennas"]), int(cb["num_beams"]), wavelength,
            azimuth_range=(cb["azimuth_lo"], cb["azimuth_hi"])))
        object.__setattr__(self, "radio", RadioParams(
            raw["radio"]["symbol_power"], raw["radio"]["noise_variance"]))
        w = raw["world"]
        object.__setattr__(self, "world", WorldConfig(
            road_start=tuple(w["road_start"]),
            road_end=tuple(w["road_end"]),
            camera_fov=tuple(w["camera_fov"]),
            image_size=tuple(int(v) for v in w["image_size"]),
            bs_position=tuple(w["bs_position"]),
            camera_height=w["camera_height"],
            horizon_frac=w["horizon_frac"],
            vehicle_length_range=tuple(w["vehicle_length_range"]),
            vehicle_height=w["vehicle_height"],
            min_separation=w["min_separation"],
            target_margin_px=w["target_margin_px"],
            az_step_range=tuple(w["az_step_range"]),
            history_len=int(w["history_len"]),
            gps_origin=tuple(w["gps_origin"]),
            gps_map=tuple(tuple(row) for row in w["gps_map"]),
            gps_noise_std=w["gps_noise_std"],
            gps_bounds=tuple(w["gps_bounds"]),
            max_vehicles=int(w["max_vehicles"]),
        ))
        profiles = dict(PRESETS)
        for name, spec in raw["corruption"].items():
            if not isinstance(spec, dict):
                raise ConfigError(f"corruption.{name} must be a section")
            unknown = set(spec) - _PROFILE_KEYS
            if unknown:
                raise ConfigError(f"unknown key: corruption.{name}.{sorted(unknown)[0]}")
            merged = {k: spec.get(k, 0 if k == "bbox_jitter_px" else 0.0)
                      for k in _PROFILE_KEYS}
            profiles[name] = CorruptionProfile(name=name, **merged)
        object.__setattr__(self, "profiles", profiles)
        for split in ("train", "val", "test"):
            name = raw["splits"][f"{split}_corruption"]
            if name not in profiles:
                raise ConfigError(f"splits.{split}_corruption: unknown profile {name!r}")
        for name in raw["eval"]["scenarios"]:
            if name not in profiles:
                raise ConfigError(f"eval.scenarios: unknown profile {name!r}")
        if raw["eval"]["t_max_ms"] <= 0:
            raise ConfigError("eval.t_max_ms must be > 0")
        for key in ("n_train", "n_val", "n_test"):
            if raw["splits"][key] < 1:
                raise ConfigError(f"splits.{key} must be >= 1")

    # ---- derived accessors

    @property
    def num_beams(self) -> int:
        return self.codebook.num_beams

    @property
    def kb_clusters(self) -> int:
        return int(self.raw["kb"]["clusters"]) or self.num_beams

    @property
    def kb_divisions(self) -> int:
        return int(self.raw["kb"]["divisions"]) or self.num_beams

    @property
    def kb_window(self) -> int:
        return int(self.raw["kb"]["window_half_width"])

    @property
    def scenarios(self) -> list[str]:
        return list(self.raw["eval"]["scenarios"])

    @property
    def t_max_ms(self) -> float:
        return float(self.raw["eval"]["t_max_ms"])

    @property
    def master_seed(self) -> int:
        return int(self.raw["seeds"]["master"])

    def seed_int(self, tag: int) -> int:
        return self.master_seed * 1_000_003 + tag

    def frame_seed(self, split_index: int, i: int):
        return [self.master_seed, split_index, i]

    def corruption_seed(self, purpose: int, scenario_index: int, i: int):
        return [self.master_seed, 100 + purpose, scenario_index, i]

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def from_dict(doc: dict) -> ExperimentConfig:
    return ExperimentConfig(raw=_merge(_defaults(), doc))


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    if seed_override is not None:
        doc.setdefault("seeds", {})["master"] = seed_override
    return from_dict(doc)


def default_config() -> ExperimentConfig:
    return from_dict({})
