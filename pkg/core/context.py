# core/context.py → Run Profile & Seeded Context
# Role: Loads the behaviour profile and hands out named, reproducible random streams.

# Responsibilities:

# Read config/profiles.yaml (defaults for every model kind and the run itself)

# Derive numpy Generators from (seed, stream name) so no code touches a global RNG

# Carry run identity (run id, seed, threads) across one CLI invocation

# Dependencies:

# config/profiles.yaml, python-dotenv (MALDIGEN_PROFILE, MALDIGEN_THREADS)

# core/context.py

from pathlib import Path
from typing import Any, Dict, List, Optional
import json
import os
import time
import uuid
import zlib

import numpy as np
import yaml
from dotenv import load_dotenv

from core.errors import ConfigError

load_dotenv()

ROOT = Path(__file__).parent.parent
PROFILE_YAML = ROOT / "config" / "profiles.yaml"
MODELS_JSON = ROOT / "config" / "models.json"


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def make_stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named stream of a seed; equal (seed, name) give equal draws."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream_key(name),)))


def sample_streams(seed: int, n: int, name: str = "sample") -> List[np.random.Generator]:
    """One generator per sample index, independent of how samples are later batched."""
    key = stream_key(name)
    return [
        np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key, i)))
        for i in range(n)
    ]


def load_registry(path: Optional[Path] = None) -> Dict[str, Any]:
    """Model registry: defaults, per-kind entries and U-Net variant presets."""
    path = Path(path or MODELS_JSON)
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read model registry {path}: {e}") from e


def unet_preset(variant: str) -> Dict[str, Any]:
    presets = load_registry()["unet_variants"]
    if variant not in presets:
        raise ConfigError(f"Unknown U-Net variant '{variant}'; known: {sorted(presets)}")
    return dict(presets[variant])


class RunProfile:
    def __init__(self, config_path: Optional[str] = None):
        path = Path(config_path or os.getenv("MALDIGEN_PROFILE") or PROFILE_YAML)
        if not path.exists():
            raise ConfigError(f"Profile not found: {path}")
        with open(path, "r") as f:
            config = yaml.safe_load(f) or {}

        self.path = path
        run = config.get("run", {})
        self.seed = int(run.get("seed", 17))
        self.threads = int(os.getenv("MALDIGEN_THREADS", run.get("threads", 0)))
        self.out_dir = run.get("out_dir", "runs")

        self.preprocess = config.get("preprocess", {})
        self.kernel = config.get("kernel", {})
        self.toy_corpus = config.get("toy_corpus", {})
        self.vae = config.get("vae", {})
        self.gan = config.get("gan", {})
        self.diffusion = config.get("diffusion", {})
        self.classifier = config.get("classifier", {})

    def section(self, name: str) -> Dict[str, Any]:
        value = getattr(self, name, None)
        if not isinstance(value, dict):
            raise ConfigError(f"Unknown profile section: {name}")
        return dict(value)

    def __repr__(self):
        return f"<RunProfile {self.path.name} seed={self.seed}>"


class RunContext:
    def __init__(self, seed: Optional[int] = None, threads: Optional[int] = None,
                 profile: Optional[RunProfile] = None):
        self.profile = profile or RunProfile()
        self.seed = self.profile.seed if seed is None else int(seed)
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        self.threads = self.profile.threads if threads is None else int(threads)
        self.run_id = f"run-{int(time.time())}-{uuid.uuid4().hex[:6]}"

    def stream(self, name: str) -> np.random.Generator:
        return make_stream(self.seed, name)

    def __repr__(self):
        return f"<RunContext seed={self.seed} threads={self.threads} run_id={self.run_id}>"
