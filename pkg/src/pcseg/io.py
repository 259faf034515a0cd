"""File formats: point clouds, episode manifests, metrics, model artifacts.

All writers are atomic (write to a temp file in the target directory,
then rename) and produce byte-stable output for fixed inputs: floats are
printed with 17 significant digits, which round-trips float64 exactly.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from . import tensor as T
from .config import RunConfig
from .episodes import EpisodeDescriptor
from .geometry import PointCloud
from .model import BasePrototypeBank, ModelParams

CLOUD_MAGIC = "PCSEG v1"
MODEL_MAGIC = "PCSEG-MODEL v1"


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------

def format_cloud(cloud: PointCloud) -> str:
    lines = [f"{CLOUD_MAGIC} {len(cloud)}"]
    for p, c, label in zip(cloud.positions, cloud.colors, cloud.labels):
        lines.append(
            f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {c[0]:.17g} {c[1]:.17g} {c[2]:.17g} {label}"
        )
    return "\n".join(lines) + "\n"


def write_cloud(path, cloud: PointCloud) -> None:
    atomic_write_text(path, format_cloud(cloud))


def read_cloud(path) -> PointCloud:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.rsplit(" ", 1)
        if len(parts) != 2 or parts[0] != CLOUD_MAGIC:
            raise ValueError(f"{path}: not a {CLOUD_MAGIC} file (header {header!r})")
        n = int(parts[1])
        data = np.loadtxt(fh, dtype=np.float64, max_rows=n, ndmin=2)
    if data.shape != (n, 7):
        raise ValueError(f"{path}: expected {n} rows of 7 fields, got {data.shape}")
    return PointCloud(data[:, 0:3], data[:, 3:6], data[:, 6].astype(np.int64))


# ---------------------------------------------------------------------------
# episode manifests
# ---------------------------------------------------------------------------

def format_manifest(descriptors) -> str:
    lines = []
    for d in descriptors:
        lines.append(
            "\t".join(
                [
                    str(d.seed),
                    ",".join(str(c) for c in d.target_classes),
                    ",".join(d.support_sources),
                    d.query_source,
                ]
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def write_manifest(path, descriptors) -> None:
    atomic_write_text(path, format_manifest(descriptors))


def read_manifest(path) -> list[EpisodeDescriptor]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated columns")
            out.append(
                EpisodeDescriptor(
                    seed=int(cols[0]),
                    target_classes=tuple(int(c) for c in cols[1].split(",")),
                    support_sources=tuple(cols[2].split(",")),
                    query_source=cols[3],
                )
            )
    seeds = [d.seed for d in out]
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"{path}: episode seeds must be distinct")
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def format_metrics(pairs) -> str:
    lines = []
    for key, value in pairs:
        if isinstance(value, float):
            lines.append(f"{key}={value:.17g}")
        else:
            lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_metrics(path, pairs) -> None:
    atomic_write_text(path, format_metrics(pairs))


# ---------------------------------------------------------------------------
# model artifacts
# ---------------------------------------------------------------------------

def format_model(params: ModelParams, bank: BasePrototypeBank, config: RunConfig, meta: dict) -> str:
    parts = [MODEL_MAGIC, "[meta]"]
    for key in sorted(meta):
        parts.append(f"{key}={meta[key]}")
    parts.append(f"share_background_fc={int(params.share_background_fc)}")
    parts.append("[config]")
    parts.append(config.to_text().rstrip("\n"))
    parts.append("[params]")
    parts.append(T.format_records((p.name, p.data) for p in params.parameters()).rstrip("\n"))
    parts.append("[bank]")
    parts.append(f"class_ids={','.join(str(c) for c in bank.class_ids)}")
    parts.append(f"momentum={bank.momentum:.17g}")
    parts.append("update_counts=" + " ".join(str(int(c)) for c in bank.update_counts))
    parts.append(T.format_records([("prototypes", bank.prototypes)]).rstrip("\n"))
    return "\n".join(parts) + "\n"


def save_model(path, params: ModelParams, bank: BasePrototypeBank, config: RunConfig, meta: dict) -> None:
    atomic_write_text(path, format_model(params, bank, config, meta))


def _split_sections(lines: list[str]) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    return sections


def load_model(path):
    """Read a model artifact back: (params, bank, config, meta).

    Reconstruction is value-exact, so reloaded parameters reproduce
    bit-identical forward outputs.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} file")
    sections = _split_sections(lines[1:])
    for needed in ("meta", "config", "params", "bank"):
        if needed not in sections:
            raise ValueError(f"{path}: missing [{needed}] section")

    meta: dict[str, str] = {}
    for line in sections["meta"]:
        if line.strip():
            key, _, value = line.partition("=")
            meta[key] = value
    share_fc = bool(int(meta.pop("share_background_fc", "0")))

    config = RunConfig.from_text("\n".join(sections["config"]))

    bank_lines = sections["bank"]
    bank_kv = {}
    record_start = 0
    for i, line in enumerate(bank_lines):
        if "=" in line:
            key, _, value = line.partition("=")
            bank_kv[key] = value
            record_start = i + 1
        else:
            break
    class_ids = tuple(int(c) for c in bank_kv["class_ids"].split(","))
    counts = np.array([int(c) for c in bank_kv["update_counts"].split()], dtype=np.int64)
    bank_records = T.parse_records("\n".join(bank_lines[record_start:]))
    bank = BasePrototypeBank(
        prototypes=bank_records["prototypes"],
        update_counts=counts,
        momentum=float(bank_kv["momentum"]),
        class_ids=class_ids,
    )

    params = ModelParams.create(
        np.random.default_rng(0),
        dim=config.dim,
        n_prototypes=config.n_prototypes,
        n_layers=config.hca_layers,
        heads=config.heads,
        n_base=len(class_ids),
        share_background_fc=share_fc,
    )
    records = T.parse_records("\n".join(sections["params"]))
    expected = {p.name for p in params.parameters()}
    if set(records) != expected:
        missing = expected - set(records)
        extra = set(records) - expected
        raise ValueError(f"{path}: parameter records mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for p in params.parameters():
        arr = records[p.name]
        if arr.shape != p.data.shape:
            raise ValueError(f"{path}: record {p.name} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr
    return params, bank, config, meta
