"""Key-value config file shared by the CLI and the service.

Format: one ``key = value`` per line; blank lines and ``#`` comments are
ignored; unknown keys are rejected. Flags given on the command line win
over file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError
from .index.shards import IndexParams


@dataclass
class Config:
    store_path: str = "store"
    annotations_path: str = ""  # empty: <store_path>/annotations.json
    db_path: str = "db.bin"
    reports_dir: str = "reports"
    embedder: str = "reference-v1"
    n_shards: int = 1
    leaf_target: int = 40
    max_depth: int = 6
    density_threshold: int = 100_000
    hash_bits: int = 16
    hash_probe_radius: int = 1
    k: int = 5
    oversample: int = 5
    min_separation_px: float = 1000.0
    seed: int = 0
    threads: int = 1
    listen: str = "127.0.0.1:8765"
    study_fraction: float = 0.25
    bearer_token: str = ""
    frontend_dir: str = ""

    def __post_init__(self):
        checks = [
            (self.n_shards >= 1, "n_shards >= 1"),
            (self.leaf_target >= 1, "leaf_target >= 1"),
            (self.max_depth >= 0, "max_depth >= 0"),
            (self.density_threshold >= 0, "density_threshold >= 0"),
            (1 <= self.hash_bits <= 32, "hash_bits in 1..32"),
            (self.hash_probe_radius >= 0, "hash_probe_radius >= 0"),
            (self.k >= 1, "k >= 1"),
            (self.oversample >= 1, "oversample >= 1"),
            (self.min_separation_px >= 0, "min_separation_px >= 0"),
            (self.threads >= 1, "threads >= 1"),
            (0.0 <= self.study_fraction <= 1.0, "study_fraction in [0, 1]"),
        ]
        for ok, rule in checks:
            if not ok:
                raise ValidationError(f"config requires {rule}")

    @property
    def annotations(self) -> str:
        return self.annotations_path or str(
            Path(self.store_path) / "annotations.json"
        )

    def index_params(self) -> IndexParams:
        return IndexParams(
            n_shards=self.n_shards,
            max_depth=self.max_depth,
            leaf_target=self.leaf_target,
            density_threshold=self.density_threshold,
            hash_bits=self.hash_bits,
            hash_probe_radius=self.hash_probe_radius,
            seed=self.seed,
        )

    def listen_host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        if not host or not port.isdigit():
            raise ValidationError(
                f"listen must be host:port, got {self.listen!r}"
            )
        return host, int(port)


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def parse_config(path, overrides: dict | None = None) -> Config:
    values: dict = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(
                f"{path}:{lineno}: expected 'key = value', got {raw!r}"
            )
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELD_TYPES:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value, f"{path}:{lineno}")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(**values)


def _coerce(key: str, value: str, where: str):
    ftype = _FIELD_TYPES[key]
    try:
        if ftype in (int, "int"):
            return int(value)
        if ftype in (float, "float"):
            return float(value)
        return value
    except ValueError:
        raise ValidationError(
            f"{where}: {key} expects {ftype}, got {value!r}"
        ) from None
