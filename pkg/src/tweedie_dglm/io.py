"""File formats: data/coords CSV, draws CSV, config files and atomic writes.

Every file written here starts with a ``#`` comment line carrying the config
hash and master seed. Readers skip such lines. Floats are written with
``repr`` so a write/read cycle is exact.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import yaml

from .model import ModelId, ObservationSet
from .samplers import ChainOutput
from .spatial import SpatialDomain

__all__ = [
    "DataError",
    "LoadedData",
    "atomic_write",
    "config_hash",
    "file_digest",
    "load_config",
    "load_dataset",
    "write_dataset",
    "write_draws",
    "read_draws",
    "read_header",
    "write_table",
    "read_table",
]

REQUIRED = ("y", "exposure", "location_id")


class DataError(ValueError):
    """Malformed input file; the message names the row and column."""


class LoadedData(NamedTuple):
    obs: ObservationSet
    domain: Optional[SpatialDomain]
    location_ids: tuple


def atomic_write(path, text):
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config):
    return hashlib.sha256(_canonical(config).encode()).hexdigest()[:16]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config(path):
    """Read a YAML or JSON mapping (JSON is valid YAML)."""
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise DataError(f"{path}: config must be a mapping at the top level")
    return data


def _header_line(chash, seed):
    return f"# config_hash={chash} seed={seed}\n"


def read_header(path):
    """(config_hash, seed) from the leading comment line, or (None, None)."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return None, None
    fields = dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)
    seed = fields.get("seed")
    if seed is not None and seed.lstrip("-").isdigit():
        seed = int(seed)
    return fields.get("config_hash"), seed


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_table(path, header, rows, chash, seed):
    buf = io.StringIO()
    buf.write(_header_line(chash, seed))
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    atomic_write(path, buf.getvalue())


def read_table(path):
    """(header, rows as lists of strings, first data line number)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        start += 1
    rd = csv.reader(lines[start:])
    try:
        header = [h.strip() for h in next(rd)]
    except StopIteration:
        raise DataError(f"{path}: no header row") from None
    rows = [r for r in rd if r and any(c.strip() for c in r)]
    return header, rows, start + 2


def _number(path, cell, line, col):
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{path}: row {line}, column '{col}': non-numeric value {cell!r}") from None
    if not np.isfinite(v):
        raise DataError(f"{path}: row {line}, column '{col}': value must be finite")
    return v


def load_dataset(data_path, coords_path=None):
    """Parse a data CSV (and optional coords CSV) into model inputs.

    Data columns: ``y``, ``exposure``, ``location_id``; every ``x_*`` column
    goes to X and every ``z_*`` column to Z, in file order. Location ids are
    mapped to site indices in order of first appearance; sites listed only in
    the coords file follow in coords-file order.
    """
    header, rows, first = read_table(data_path)
    for name in REQUIRED:
        if name not in header:
            raise DataError(f"{data_path}: missing required column '{name}'")
    x_cols = [c for c in header if c.startswith("x_")]
    z_cols = [c for c in header if c.startswith("z_")]
    if not x_cols or not z_cols:
        raise DataError(f"{data_path}: need at least one 'x_' and one 'z_' column")
    pos = {c: i for i, c in enumerate(header)}
    n = len(rows)
    y = np.empty(n)
    t = np.empty(n)
    X = np.empty((n, len(x_cols)))
    Z = np.empty((n, len(z_cols)))
    loc_raw = []
    for k, row in enumerate(rows):
        line = first + k
        if len(row) != len(header):
            raise DataError(f"{data_path}: row {line}: expected {len(header)} fields, got {len(row)}")
        y[k] = _number(data_path, row[pos["y"]], line, "y")
        if y[k] < 0:
            raise DataError(f"{data_path}: row {line}, column 'y': response must be nonnegative")
        t[k] = _number(data_path, row[pos["exposure"]], line, "exposure")
        if t[k] <= 0:
            raise DataError(f"{data_path}: row {line}, column 'exposure': exposure must be positive")
        lid = row[pos["location_id"]].strip()
        if not lid:
            raise DataError(f"{data_path}: row {line}, column 'location_id': empty value")
        loc_raw.append(lid)
        for j, c in enumerate(x_cols):
            X[k, j] = _number(data_path, row[pos[c]], line, c)
        for j, c in enumerate(z_cols):
            Z[k, j] = _number(data_path, row[pos[c]], line, c)
    if n == 0:
        raise DataError(f"{data_path}: no data rows")

    order = list(dict.fromkeys(loc_raw))
    domain = None
    if coords_path is not None:
        ch, crow, cfirst = read_table(coords_path)
        for name in ("site_id", "x", "y"):
            if name not in ch:
                raise DataError(f"{coords_path}: missing required column '{name}'")
        cp = {c: i for i, c in enumerate(ch)}
        coords = {}
        for k, row in enumerate(crow):
            line = cfirst + k
            sid = row[cp["site_id"]].strip()
            if sid in coords:
                raise DataError(f"{coords_path}: row {line}, column 'site_id': duplicate site {sid!r}")
            coords[sid] = (_number(coords_path, row[cp["x"]], line, "x"),
                           _number(coords_path, row[cp["y"]], line, "y"))
        for k, lid in enumerate(loc_raw):
            if lid not in coords:
                raise DataError(f"{data_path}: row {first + k}, column 'location_id': "
                                f"location {lid!r} not found in {coords_path}")
        order += [s for s in coords if s not in set(order)]
        domain = SpatialDomain.from_coords(np.array([coords[s] for s in order]), site_ids=order)
    index = {s: i for i, s in enumerate(order)}
    loc = np.array([index[s] for s in loc_raw], dtype=np.int64)
    obs = ObservationSet(y=y, t=t, loc=loc, X=X, Z=Z, n_sites=len(order),
                         x_names=tuple(c[2:] for c in x_cols), z_names=tuple(c[2:] for c in z_cols))
    return LoadedData(obs, domain, tuple(order))


def write_dataset(data_path, obs, chash, seed, coords_path=None, domain=None, location_ids=None):
    """Inverse of ``load_dataset``."""
    ids = location_ids or tuple(str(i + 1) for i in range(obs.n_sites))
    header = ["y", "exposure", "location_id"] + [f"x_{n}" for n in obs.x_names] + [f"z_{n}" for n in obs.z_names]
    rows = ([obs.y[k], obs.t[k], ids[obs.loc[k]], *obs.X[k], *obs.Z[k]] for k in range(obs.n))
    write_table(data_path, header, rows, chash, seed)
    if coords_path is not None and domain is not None:
        write_table(coords_path, ["site_id", "x", "y"],
                    ([ids[i], *domain.coords[i]] for i in range(domain.n_sites)), chash, seed)


def write_draws(path, chains, chash, seed):
    names = chains[0].names
    header = ["chain", "iteration", "logpost"] + list(names)

    def rows():
        for c, ch in enumerate(chains):
            for i in range(ch.draws.shape[0]):
                yield [c, i, ch.logpost[i], *ch.draws[i]]
    write_table(path, header, rows(), chash, seed)


def read_draws(path, model_id):
    """Pool every chain of a draws CSV into one ChainOutput."""
    header, rows, first = read_table(path)
    if header[:3] != ["chain", "iteration", "logpost"]:
        raise DataError(f"{path}: not a draws file (expected chain, iteration, logpost columns)")
    data = np.empty((len(rows), len(header)))
    for k, row in enumerate(rows):
        for j, cell in enumerate(row):
            try:
                data[k, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {first + k}, column '{header[j]}': "
                                f"non-numeric value {cell!r}") from None
    _, seed = read_header(path)
    return ChainOutput(draws=data[:, 3:], names=header[3:], logpost=data[:, 2], acceptance={},
                       step=None, seed=seed, model_id=ModelId(model_id))
