"""JSON spec documents <-> `ChannelSpec` / `ConstraintSet`.

Layout::

    {
      "n_tx": 2, "n_rx": 2,                       # optional, inferred from taps
      "channel": {"taps": [{"delay": 0, "matrix": [[...], ...]}, ...]},
      "noise":   {"taps": [{"lag": 0,   "matrix": [[...], ...]}, ...]},
      "constraints": {
        "tpc": 1.0,
        "pac": [0.5, 0.5],
        "ipc": [{"taps": [{"delay": 0, "matrix": ...}], "limit": 0.1}],
        "ehc": [{"taps": [{"delay": 0, "matrix": ...}], "floor": 0.2}]
      },
      "grid": {"N": 256}
    }

Matrix entries are numbers or ``[re, im]`` pairs; a 1x1 matrix may be given
as a bare entry.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .channel_model import ChannelSpec
from .errors import SpecError
from .joint_solver import ConstraintSet, LinkConstraint

__all__ = ["parse_spec", "load_spec", "emit_spec", "spec_hash"]


def _entry(v, where):
    if isinstance(v, bool):
        raise SpecError(f"{where}: expected a number or [re, im], got {v!r}")
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        return complex(v[0], v[1])
    raise SpecError(f"{where}: expected a number or [re, im], got {v!r}")


def _matrix(v, where):
    try:
        return np.array([[_entry(v, where)]])
    except SpecError:
        pass
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise SpecError(f"{where}: expected a list of rows")
    rows = [[_entry(x, f"{where}[{i}][{j}]") for j, x in enumerate(r)] for i, r in enumerate(v)]
    if len({len(r) for r in rows}) != 1:
        raise SpecError(f"{where}: ragged matrix rows")
    return np.array(rows, dtype=complex)


def _taps(doc, key, where):
    if not isinstance(doc, dict) or not isinstance(doc.get("taps"), list) or not doc["taps"]:
        raise SpecError(f"{where}: expected an object with a nonempty 'taps' list")
    out = []
    for i, tap in enumerate(doc["taps"]):
        w = f"{where}.taps[{i}]"
        if not isinstance(tap, dict):
            raise SpecError(f"{w}: expected an object")
        if key not in tap or "matrix" not in tap:
            raise SpecError(f"{w}: needs '{key}' and 'matrix'")
        d = tap[key]
        if isinstance(d, bool) or not isinstance(d, int) or d < 0:
            raise SpecError(f"{w}.{key}: must be a nonnegative integer, got {d!r}")
        out.append((d, _matrix(tap["matrix"], f"{w}.matrix")))
    return out


def _budget(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise SpecError(f"{where}: expected a finite number, got {v!r}")
    if v < 0:
        raise SpecError(f"{where}: negative budget {v}")
    return float(v)


def parse_spec(doc: dict):
    """Build ``(ChannelSpec, ConstraintSet, grid_N)`` from a parsed document.

    ``grid_N`` is None when the document has no ``grid`` section.
    """
    if not isinstance(doc, dict):
        raise SpecError("top level: expected an object")
    for key in ("channel", "noise", "constraints"):
        if key not in doc:
            raise SpecError(f"missing section '{key}'")
    h_taps = _taps(doc["channel"], "delay", "channel")
    n_taps = _taps(doc["noise"], "lag", "noise")
    n_rx, n_tx = h_taps[0][1].shape
    if doc.get("n_tx", n_tx) != n_tx or doc.get("n_rx", n_rx) != n_rx:
        raise SpecError(f"n_tx/n_rx disagree with channel tap shape {n_rx}x{n_tx}")
    spec = ChannelSpec(n_tx, n_rx, h_taps, n_taps)

    c = doc["constraints"]
    if not isinstance(c, dict):
        raise SpecError("constraints: expected an object")
    unknown = set(c) - {"tpc", "pac", "ipc", "ehc"}
    if unknown:
        raise SpecError(f"constraints: unknown keys {sorted(unknown)}")
    tpc = _budget(c["tpc"], "constraints.tpc") if c.get("tpc") is not None else None
    pac = None
    if c.get("pac") is not None:
        if not isinstance(c["pac"], list):
            raise SpecError("constraints.pac: expected a list")
        pac = [_budget(v, f"constraints.pac[{i}]") for i, v in enumerate(c["pac"])]
        if len(pac) != n_tx:
            raise SpecError(f"constraints.pac: {len(pac)} budgets for {n_tx} antennas")
    links = {}
    for kind, lim_key in (("ipc", "limit"), ("ehc", "floor")):
        items = c.get(kind) or []
        if not isinstance(items, list):
            raise SpecError(f"constraints.{kind}: expected a list")
        links[kind] = []
        for i, item in enumerate(items):
            w = f"constraints.{kind}[{i}]"
            if not isinstance(item, dict) or lim_key not in item:
                raise SpecError(f"{w}: needs 'taps' and '{lim_key}'")
            taps = _taps(item, "delay", w)
            if any(m.shape[1] != n_tx for _, m in taps):
                raise SpecError(f"{w}: factor channel must have {n_tx} columns")
            links[kind].append(LinkConstraint(_budget(item[lim_key], f"{w}.{lim_key}"), taps=taps))
    if tpc is None and pac is None:
        raise SpecError("constraints: unbounded problem (need tpc or pac)")
    cons = ConstraintSet(tpc, pac, links["ipc"], links["ehc"])

    N = None
    if "grid" in doc:
        g = doc["grid"]
        if not isinstance(g, dict) or isinstance(g.get("N"), bool) or not isinstance(g.get("N"), int) or g["N"] < 1:
            raise SpecError("grid.N: must be a positive integer")
        N = g["N"]
    return spec, cons, N


def load_spec(path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_spec(doc)


def _emit_entry(z):
    return [float(z.real), float(z.imag)]


def _emit_matrix(m):
    return [[_emit_entry(z) for z in row] for row in np.asarray(m)]


def _emit_taps(taps, key):
    return {"taps": [{key: int(t), "matrix": _emit_matrix(m)} for t, m in taps]}


def emit_spec(spec: ChannelSpec, cons: ConstraintSet, N=None) -> dict:
    """Inverse of `parse_spec`; link constraints must be tap-based."""
    c = {}
    if cons.tpc is not None:
        c["tpc"] = cons.tpc
    if cons.pac is not None:
        c["pac"] = [float(p) for p in cons.pac]
    for kind, lim_key in (("ipc", "limit"), ("ehc", "floor")):
        items = getattr(cons, kind)
        if items:
            if any(x.taps is None for x in items):
                raise SpecError(f"{kind}: only tap-based factor channels can be serialized")
            c[kind] = [dict(_emit_taps(x.taps, "delay"), **{lim_key: float(x.limit)}) for x in items]
    doc = {
        "n_tx": spec.n_tx,
        "n_rx": spec.n_rx,
        "channel": _emit_taps(spec.h_taps, "delay"),
        "noise": _emit_taps(spec.noise_taps, "lag"),
        "constraints": c,
    }
    if N is not None:
        doc["grid"] = {"N": int(N)}
    return doc


def spec_hash(doc: dict, extra: dict = None) -> str:
    payload = json.dumps({"spec": doc, "run": extra or {}}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
