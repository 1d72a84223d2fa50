"""Run-directory persistence and config file handling.

A run directory is self-describing:

    config.json        resolved configuration incl. the full arena geometry
    manifest.json      seed, timestamps, artifact checksums, version
    archive.jsonl      one JSON record per archived policy
    curve.csv          generation, archive size, coverage percent
    metrics.log        line-delimited JSON run events
    observations/      one binary PPM per archive entry, in insertion order
    ae_checkpoints/    serialized autoencoder at start and each training event

Floats in JSON artifacts are written with 17 significant digits so every value
round-trips exactly.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import autoencoder, envs, raster
from .archive import Archive, ArchiveEntry
from .policies import Genome
from .search import RunRecorder, SearchConfig, SearchResult


class ConfigError(ValueError):
    """A config file could not be resolved; the message names the bad key."""


def format_float(x) -> str:
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x}")
    return "%.17g" % x


def dumps(obj, indent: int | None = None) -> str:
    """JSON text with floats at 17 significant digits (exact round trip)."""
    return "".join(_emit(obj, indent, 0))


def _emit(obj, indent, depth):
    if isinstance(obj, bool) or obj is None:
        yield json.dumps(obj)
    elif isinstance(obj, (int, np.integer)):
        yield str(int(obj))
    elif isinstance(obj, (float, np.floating)):
        yield format_float(float(obj))
    elif isinstance(obj, str):
        yield json.dumps(obj)
    elif isinstance(obj, dict):
        yield from _emit_block(
            "{", "}",
            [list(_emit(str(k), None, 0)) + [": " if indent else ":"] + list(_emit(v, indent, depth + 1))
             for k, v in obj.items()],
            indent, depth)
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = obj.tolist() if isinstance(obj, np.ndarray) else obj
        yield from _emit_block("[", "]",
                               [list(_emit(v, indent, depth + 1)) for v in items],
                               indent, depth)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit_block(open_ch, close_ch, parts, indent, depth):
    if not parts:
        yield open_ch + close_ch
        return
    if indent is None:
        yield open_ch
        for i, part in enumerate(parts):
            if i:
                yield ","
            yield from part
        yield close_ch
    else:
        pad = " " * (indent * (depth + 1))
        yield open_ch + "\n"
        for i, part in enumerate(parts):
            if i:
                yield ",\n"
            yield pad
            yield from part
        yield "\n" + " " * (indent * depth) + close_ch


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Config files (INI-style key = value with sections)
# ---------------------------------------------------------------------------

_SECTION_KEYS = {
    "run": {"method": str, "generations": int, "seed": int},
    "search": {
        "population": int, "archive_best": int, "neighbors": int,
        "mutation_prob": float, "mutation_sigma": float,
        "train_interval": int, "train_epochs": int, "learning_rate": float,
        "batch_size": int, "workers": int, "controller_hidden": int,
    },
    "env": {"name": str, "horizon": int, "observation_size": int,
            "coverage_resolution": int},
    "ae": {"latent_dim": int},
}

_KEY_TO_FIELD = {
    "population": "population_size", "name": "environment",
}


def load_config(path) -> SearchConfig:
    """Parses a run config file into a validated SearchConfig."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path} not found or unreadable")
    values = {}
    arena = {}
    for section in parser.sections():
        if section == "arena":
            try:
                arena = envs.parse_arena_mapping(parser["arena"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            continue
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTION_KEYS[section]
        for key, raw in parser[section].items():
            if key not in allowed:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            try:
                values[_KEY_TO_FIELD.get(key, key)] = allowed[key](raw)
            except ValueError:
                raise ConfigError(
                    f"key '{key}' in section [{section}]: cannot parse {raw!r} "
                    f"as {allowed[key].__name__}") from None
    if "method" not in values:
        raise ConfigError("config is missing the required key 'method' (section [run])")
    if "generations" not in values:
        raise ConfigError("config is missing the required key 'generations' (section [run])")
    if arena:
        values["arena"] = arena
    try:
        return SearchConfig(**values).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_to_json_dict(config: SearchConfig) -> dict:
    d = config.to_dict()
    arena = envs.make_arena(config.environment, config.arena or None)
    d["arena"] = arena.to_dict()
    d["budget_unit"] = "generations"
    return d


def config_from_json_dict(d: dict) -> SearchConfig:
    d = dict(d)
    d.pop("budget_unit", None)
    arena = d.pop("arena", {})
    keep = {f for f in SearchConfig.__dataclass_fields__}
    cfg = SearchConfig(**{k: v for k, v in d.items() if k in keep})
    cfg.arena = {k: _tupled(v) for k, v in arena.items() if k != "kind"}
    return cfg.validate()


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v


# ---------------------------------------------------------------------------
# Archive records
# ---------------------------------------------------------------------------

def entry_to_record(entry: ArchiveEntry) -> dict:
    return {
        "id": entry.genome.id,
        "parent_id": entry.genome.parent_id,
        "generation": entry.generation,
        "score": entry.score,
        "descriptor": [float(v) for v in entry.descriptor],
        "ground_truth": [float(entry.ground_truth[0]), float(entry.ground_truth[1])],
        "genome": [float(v) for v in entry.genome.values],
    }


def record_to_entry(record: dict, observation_u8=None) -> ArchiveEntry:
    genome = Genome(values=np.array(record["genome"], dtype=np.float64),
                    id=record["id"], parent_id=record["parent_id"],
                    generation=record["generation"])
    return ArchiveEntry(
        genome=genome,
        observation_u8=observation_u8,
        descriptor=np.array(record["descriptor"], dtype=np.float64),
        ground_truth=tuple(record["ground_truth"]),
        generation=record["generation"],
        score=record["score"],
    )


def write_archive(path, repertoire: Archive):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in repertoire.entries:
            fh.write(dumps(entry_to_record(entry)))
            fh.write("\n")


def read_archive(path, descriptor_dim: int | None = None,
                 observations_dir=None) -> Archive:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obs = None
            if observations_dir is not None:
                obs = raster.read_ppm(Path(observations_dir) / f"entry_{i:06d}.ppm")
            entries.append(record_to_entry(json.loads(line), obs))
    dim = descriptor_dim
    if dim is None:
        dim = entries[0].descriptor.size if entries else 0
    repertoire = Archive(dim)
    repertoire.insert(entries)
    return repertoire


def write_curve(path, curve):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("generation,archive_size,coverage\n")
        for gen, size, cov in curve:
            fh.write(f"{gen},{size},{cov:.6f}\n")


def read_final_coverage(path) -> float:
    last = None
    with open(path, encoding="utf-8") as fh:
        next(fh)  # header
        for line in fh:
            if line.strip():
                last = line
    if last is None:
        raise ValueError(f"{path}: curve has no data rows")
    return float(last.strip().split(",")[2])


# ---------------------------------------------------------------------------
# Run directory recorder
# ---------------------------------------------------------------------------

ARCHIVE_FILE = "archive.jsonl"
CURVE_FILE = "curve.csv"
CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.log"
OBS_DIR = "observations"
CHECKPOINT_DIR = "ae_checkpoints"


class RunDirectoryRecorder(RunRecorder):
    """Streams run events into the run directory as they happen and writes
    the bulk artifacts plus the manifest when the run finishes."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self._metrics = None
        self._started = None

    def start(self, config: SearchConfig):
        self._started = time.time()
        write_text(self.out / CONFIG_FILE,
                   dumps(config_to_json_dict(config), indent=2) + "\n")
        self._metrics = open(self.out / METRICS_FILE, "w", encoding="utf-8")
        self._event({"event": "start", "config": config_to_json_dict(config)})

    def _event(self, payload: dict):
        self._metrics.write(dumps(payload))
        self._metrics.write("\n")

    def generation(self, gen, metric, archive_size, coverage):
        self._event({"event": "generation", "generation": gen, "metric": metric,
                     "archive_size": archive_size, "coverage": coverage})

    def training(self, gen, images, epoch_losses):
        self._event({"event": "train", "generation": gen, "images": images,
                     "epoch_losses": list(epoch_losses)})

    def checkpoint(self, gen, ae):
        ckpt_dir = self.out / CHECKPOINT_DIR
        ckpt_dir.mkdir(exist_ok=True)
        autoencoder.save_checkpoint(ae, ckpt_dir / f"gen_{gen:06d}.net")

    def finish(self, result: SearchResult):
        self._event({"event": "end", "generations": len(result.curve),
                     "archive_size": len(result.archive),
                     "invalid_rollouts": result.invalid_rollouts})
        self._metrics.close()
        write_archive(self.out / ARCHIVE_FILE, result.archive)
        write_curve(self.out / CURVE_FILE, result.curve)
        obs_dir = self.out / OBS_DIR
        obs_dir.mkdir(exist_ok=True)
        for i, entry in enumerate(result.archive.entries):
            raster.write_ppm(obs_dir / f"entry_{i:06d}.ppm", entry.observation_u8)
        self._write_manifest(result)

    def _write_manifest(self, result: SearchResult):
        from . import __version__
        artifacts = {}
        for path in sorted(self.out.rglob("*")):
            if path.is_file() and path.name != MANIFEST_FILE:
                rel = path.relative_to(self.out).as_posix()
                artifacts[rel] = {"sha256": sha256_file(path),
                                  "bytes": path.stat().st_size}
        manifest = {
            "version": __version__,
            "method": result.config.method,
            "seed": result.config.seed,
            "started": self._started,
            "finished": time.time(),
            "artifacts": artifacts,
        }
        write_text(self.out / MANIFEST_FILE, dumps(manifest, indent=2) + "\n")


def write_text(path, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_run_config(run_dir) -> SearchConfig:
    with open(Path(run_dir) / CONFIG_FILE, encoding="utf-8") as fh:
        return config_from_json_dict(json.load(fh))


def latest_checkpoint(run_dir) -> Path:
    ckpts = sorted((Path(run_dir) / CHECKPOINT_DIR).glob("gen_*.net"))
    if not ckpts:
        raise FileNotFoundError(f"no autoencoder checkpoints in {run_dir}")
    return ckpts[-1]


def run_is_complete(run_dir) -> bool:
    """True when the manifest exists and every artifact checksum matches."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST_FILE
    if not manifest_path.exists():
        return False
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        for rel, info in manifest["artifacts"].items():
            path = run_dir / rel
            if not path.is_file() or sha256_file(path) != info["sha256"]:
                return False
    except (KeyError, ValueError, OSError):
        return False
    return True
