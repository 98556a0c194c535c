"""Text file formats: species tables, FIDs and JSON helpers.

FID files are a one-line JSON header prefixed with ``#`` followed by a CSV
body. Floats are written with ``repr`` so a write/read round trip is
bit-exact.

Shared-grid layout (both channels on the same timestamps)::

    # {"schema_version": 1, "layout": "shared", "n_samples": 4029, ...}
    t_s,y1,y2
    0.0,1.25,-0.5

Split layout (channels on their own grids)::

    # {"schema_version": 1, "layout": "split", "n_real": N, "n_imag": M, ...}
    channel,t_s,value
    re,0.0,1.25
    im,0.0,-0.5
"""
from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .model import AcquisitionConfig, FidRecord, Line, Species, SpeciesTable

SCHEMA_VERSION = 1
BUNDLED_TABLE = "butanone_cyclohexane.json"
BUNDLED_FID = "sample_fid_3070_snr26.csv"


class FidFormatError(ValueError):
    """Malformed FID file; ``lineno`` is 1-based when known."""

    def __init__(self, msg: str, path=None, lineno: int | None = None):
        where = f"{path}:{lineno}: " if lineno is not None else (f"{path}: " if path else "")
        super().__init__(where + msg)
        self.lineno = lineno


def data_path(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files("bayesnmr") / "data" / name))


# species tables

def species_from_obj(obj: dict, calibrated: bool = False) -> SpeciesTable:
    """Build a table from ``{"species": [{"name", "lines": [{"ppm", "B", "B_calibrated"}]}]}``.

    ``calibrated`` selects the ``B_calibrated`` column instead of ``B``.
    """
    if not isinstance(obj, dict) or "species" not in obj:
        raise ValueError("species file must be an object with a 'species' list")
    key = "B_calibrated" if calibrated else "B"
    species = []
    for k, s in enumerate(obj["species"]):
        try:
            name = s["name"]
            lines = tuple(Line(float(ln["ppm"]), float(ln[key])) for ln in s["lines"])
        except KeyError as e:
            raise ValueError(f"species entry {k}: missing field {e}") from None
        species.append(Species(str(name), lines))
    return SpeciesTable(tuple(species))


def read_species(path=None, calibrated: bool = False) -> SpeciesTable:
    """Load a species table; ``path=None`` reads the bundled two-species table."""
    path = data_path(BUNDLED_TABLE) if path is None else Path(path)
    with open(path) as fh:
        obj = json.load(fh)
    return species_from_obj(obj, calibrated)


def write_species(table: SpeciesTable, path) -> None:
    obj = {"species": [{"name": s.name, "lines": [{"ppm": ln.freq_ppm, "B": ln.intensity_B}
                                                  for ln in s.lines]}
                       for s in table.species]}
    write_json(obj, path)


# FIDs

def _acq_header(acq: AcquisitionConfig) -> dict:
    return {"n_samples": acq.n_samples, "dt_s": acq.dt_s, "omega0_rad_s": acq.omega0_rad_s,
            "ref_freq_hz_per_ppm": acq.ref_freq_hz_per_ppm}


def write_fid(fid: FidRecord, path) -> None:
    """Write ``fid`` as JSON header + CSV body, full precision."""
    head = {"schema_version": SCHEMA_VERSION, **_acq_header(fid.acq)}
    rows = []
    if fid.shared_grid:
        head["layout"] = "shared"
        rows.append("t_s,y1,y2")
        rows.extend(f"{t!r},{a!r},{b!r}" for t, a, b in
                    zip(fid.times_real_s.tolist(), fid.y1.tolist(), fid.y2.tolist()))
    else:
        head.update(layout="split", n_real=int(fid.y1.size), n_imag=int(fid.y2.size))
        rows.append("channel,t_s,value")
        rows.extend(f"re,{t!r},{a!r}" for t, a in zip(fid.times_real_s.tolist(), fid.y1.tolist()))
        rows.extend(f"im,{t!r},{a!r}" for t, a in zip(fid.times_imag_s.tolist(), fid.y2.tolist()))
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
        fh.write("\n".join(rows) + "\n")


def _parse_float(tok: str, path, lineno: int, col: str) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise FidFormatError(f"column {col!r}: cannot parse {tok!r} as a number", path, lineno) from None
    if not math.isfinite(x):
        raise FidFormatError(f"column {col!r}: non-finite value {tok!r}", path, lineno)
    return x


def _check_increasing(t, lines, path, channel):
    for i in range(1, len(t)):
        if not t[i] > t[i - 1]:
            raise FidFormatError(f"{channel} timestamps not strictly increasing", path, lines[i])


def read_fid(path) -> FidRecord:
    """Parse a file written by :func:`write_fid`, validating it line by line."""
    with open(path) as fh:
        text = fh.read().splitlines()
    if not text or not text[0].startswith("#"):
        raise FidFormatError("missing '# {json}' header on line 1", path, 1)
    try:
        head = json.loads(text[0][1:])
    except json.JSONDecodeError as e:
        raise FidFormatError(f"header is not valid JSON ({e.msg})", path, 1) from None
    if head.get("schema_version") != SCHEMA_VERSION:
        raise FidFormatError(f"unsupported schema_version {head.get('schema_version')!r}", path, 1)
    for k in ("n_samples", "dt_s", "omega0_rad_s", "ref_freq_hz_per_ppm", "layout"):
        if k not in head:
            raise FidFormatError(f"header lacks {k!r}", path, 1)
    try:
        acq = AcquisitionConfig(head["n_samples"], head["dt_s"], head["ref_freq_hz_per_ppm"],
                                head["omega0_rad_s"])
    except ValueError as e:
        raise FidFormatError(f"header: {e}", path, 1) from None

    layout = head["layout"]
    cols = {"shared": ["t_s", "y1", "y2"], "split": ["channel", "t_s", "value"]}.get(layout)
    if cols is None:
        raise FidFormatError(f"unknown layout {layout!r}", path, 1)
    if len(text) < 2 or text[1].strip().split(",") != cols:
        raise FidFormatError(f"expected column header {','.join(cols)!r}", path, 2)

    body = [(i + 3, ln) for i, ln in enumerate(text[2:]) if ln.strip()]
    if layout == "shared":
        expected = acq.n_samples
        if len(body) != expected:
            raise FidFormatError(f"expected {expected} data rows, found {len(body)}", path,
                                 body[-1][0] if body else 2)
        t, y1, y2, where = [], [], [], []
        for lineno, ln in body:
            parts = ln.split(",")
            if len(parts) != 3:
                raise FidFormatError(f"expected 3 fields, found {len(parts)}", path, lineno)
            t.append(_parse_float(parts[0], path, lineno, "t_s"))
            y1.append(_parse_float(parts[1], path, lineno, "y1"))
            y2.append(_parse_float(parts[2], path, lineno, "y2"))
            where.append(lineno)
        _check_increasing(t, where, path, "sample")
        return FidRecord(np.array(t), np.array(y1), np.array(t), np.array(y2), acq)

    n_re, n_im = head.get("n_real"), head.get("n_imag")
    if n_re is None or n_im is None:
        raise FidFormatError("split layout needs 'n_real' and 'n_imag'", path, 1)
    if len(body) != n_re + n_im:
        raise FidFormatError(f"expected {n_re + n_im} data rows, found {len(body)}", path,
                             body[-1][0] if body else 2)
    ch = {"re": ([], [], []), "im": ([], [], [])}
    for lineno, ln in body:
        parts = ln.split(",")
        if len(parts) != 3 or parts[0] not in ch:
            raise FidFormatError("expected 're|im,t_s,value'", path, lineno)
        t, y, where = ch[parts[0]]
        t.append(_parse_float(parts[1], path, lineno, "t_s"))
        y.append(_parse_float(parts[2], path, lineno, "value"))
        where.append(lineno)
    if len(ch["re"][0]) != n_re or len(ch["im"][0]) != n_im:
        raise FidFormatError(f"channel row counts differ from header ({n_re} re, {n_im} im)", path)
    for name, (t, _, where) in ch.items():
        _check_increasing(t, where, path, name)
    return FidRecord(np.array(ch["re"][0]), np.array(ch["re"][1]), np.array(ch["im"][0]),
                     np.array(ch["im"][1]), acq)


def read_sample_fid() -> FidRecord:
    """The bundled 30/70 butanone/cyclohexane FID."""
    return read_fid(data_path(BUNDLED_FID))


# JSON

def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default, allow_nan=True)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
