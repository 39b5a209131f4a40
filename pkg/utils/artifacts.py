"""
Run artifacts: CSV tables and the run manifest (config echo, results and
sha256 of every file a command wrote).
"""
import csv
import hashlib
import json
import logging
import math
from pathlib import Path

MANIFEST_NAME = "run_manifest.json"


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.9g}"
    return value


def write_csv(path, header, rows):
    """
    Write a table with a header row.

    Args:
        path: Output file (parent directories are created)
        header: Column names
        rows: Iterable of row sequences; None becomes an empty cell

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
            count += 1
    logging.info(f"Wrote {count} rows to {path}")
    return path


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def read_manifest(out_dir):
    """
    Load the run manifest of an output directory.

    Returns:
        dict (empty when missing or unreadable)
    """
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logging.warning(f"Ignoring unreadable manifest {path}: {e}")
        return {}


def update_manifest(out_dir, command, config, results, artifacts):
    """
    Merge one command's outcome into the run manifest.

    Args:
        out_dir: Output directory
        command: Subcommand name
        config: JSON-serializable config echo
        results: JSON-serializable results of the command
        artifacts: Paths written by the command

    Returns:
        The merged manifest dict
    """
    out_dir = Path(out_dir)
    manifest = read_manifest(out_dir)
    manifest["seed"] = config.get("seed")
    manifest.setdefault("commands", {})[command] = {"config": config, "results": results}
    hashes = manifest.setdefault("artifacts", {})
    for artifact in artifacts:
        artifact = Path(artifact)
        hashes[artifact.relative_to(out_dir).as_posix() if artifact.is_relative_to(out_dir) else str(artifact)] = \
            file_sha256(artifact)
    path = out_dir / MANIFEST_NAME
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logging.info(f"Manifest updated for {command}: {len(artifacts)} artifacts hashed")
    return manifest
