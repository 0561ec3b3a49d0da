"""Text file formats: COO tensors, model configs, traces, and fit outputs.

COO layout::

    # comment
    dims 50 50 50
    0 3 7 2.0
    ...

Indices are 0-based; unlisted cells are zero.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError
from .model import DEFAULT_A, DEFAULT_B, PltfModel, build_model, build_tucker
from .tensor import CooTable, IndexDef, NamedTensor

DEFAULT_NAMES = "ijklmno"

CONFIG_KEYS = (
    "model",
    "dims",
    "rank",
    "core_dims",
    "prior_a",
    "prior_b",
    "custom_factors",
    "latent_dims",
)


def _strip(line):
    return line.split("#", 1)[0].strip()


def read_coo(path, names=None) -> NamedTensor:
    """Read a COO text file into a dense :class:`NamedTensor`."""
    path = Path(path)
    dims = None
    entries = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = _strip(raw)
            if not line:
                continue
            parts = line.split()
            if dims is None:
                if parts[0] != "dims" or len(parts) < 2:
                    raise ShapeError(f"{path}:{lineno}: expected 'dims <n1> ...' header")
                try:
                    dims = [int(p) for p in parts[1:]]
                except ValueError:
                    raise ShapeError(f"{path}:{lineno}: non-integer dimension") from None
                continue
            if len(parts) != len(dims) + 1:
                raise ShapeError(f"{path}:{lineno}: expected {len(dims)} indices and a value")
            try:
                idx = tuple(int(p) for p in parts[:-1])
                value = float(parts[-1])
            except ValueError:
                raise ShapeError(f"{path}:{lineno}: malformed entry {line!r}") from None
            entries.append((idx, value))
    if dims is None:
        raise ShapeError(f"{path}: missing 'dims' header")
    names = names or DEFAULT_NAMES[: len(dims)]
    if len(names) != len(dims):
        raise ShapeError(f"{path}: {len(dims)} dims but {len(names)} index names")
    indices = tuple(IndexDef(n, d) for n, d in zip(names, dims))
    try:
        table = CooTable(indices, entries)
    except ShapeError as exc:
        raise ShapeError(f"{path}: {exc}") from None
    return table.to_dense()


def format_coo(tensor, keep_zeros=False) -> str:
    if not isinstance(tensor, NamedTensor):
        arr = np.asarray(tensor, dtype=float)
        tensor = NamedTensor(tuple(IndexDef(f"x{k}", d) for k, d in enumerate(arr.shape)), arr)
    table = CooTable.from_dense(tensor, keep_zeros=keep_zeros)
    lines = ["dims " + " ".join(str(ix.cardinality) for ix in tensor.indices)]
    lines += [" ".join(map(str, idx)) + f" {v!r}" for idx, v in table.entries]
    return "\n".join(lines) + "\n"


def write_coo(path, tensor, keep_zeros=False):
    """Write ``tensor`` (NamedTensor or array) in COO text form; zeros are omitted by default."""
    Path(path).write_text(format_coo(tensor, keep_zeros))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Model config
# ---------------------------------------------------------------------------

def read_config(path) -> dict:
    """Parse ``key = value`` lines into a dict of strings."""
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        cfg[key] = value
    return cfg


def _ints(value):
    if isinstance(value, str):
        value = value.replace(",", " ").split()
    return [int(v) for v in value]


def _named_dims(value, default_names):
    """``"50 40"`` or ``"i:50 j:40"`` -> ordered dict of name -> size."""
    if isinstance(value, str):
        value = value.replace(",", " ").split()
    out = {}
    for k, tok in enumerate(value):
        tok = str(tok)
        if ":" in tok:
            name, size = tok.split(":", 1)
            out[name.strip()] = int(size)
        else:
            out[default_names[k]] = int(tok)
    return out


def model_from_config(cfg: dict) -> PltfModel:
    """Build a model from config values (strings or already-parsed values).

    ``model = cp`` needs ``dims`` and ``rank``; ``tucker`` needs three
    ``dims`` and three ``core_dims``; ``custom`` takes ``dims`` for the
    visible indices, ``latent_dims`` for the rest, and ``custom_factors`` as
    ``i,r; j,r; k,r``.
    """
    kind = str(cfg.get("model", "cp")).strip().lower()
    a = float(cfg.get("prior_a", DEFAULT_A))
    b = float(cfg.get("prior_b", DEFAULT_B))
    if "dims" not in cfg:
        raise ValidationError("config needs 'dims'")
    try:
        if kind == "cp":
            dims = _ints(cfg["dims"])
            if "rank" not in cfg:
                raise ValidationError("cp model needs 'rank'")
            rank = int(cfg["rank"])
            names = DEFAULT_NAMES[: len(dims)]
            sizes = dict(zip(names, dims))
            sizes["r"] = rank
            return build_model(sizes, tuple(names), [(n, "r") for n in names], a, b)
        if kind == "tucker":
            dims = _ints(cfg["dims"])
            core = _ints(cfg.get("core_dims", ""))
            if len(dims) != 3 or len(core) != 3:
                raise ValidationError("tucker model needs three dims and three core_dims")
            return build_tucker(*dims, *core, a=a, b=b)
        if kind == "custom":
            observed = _named_dims(cfg["dims"], DEFAULT_NAMES)
            latent = _named_dims(cfg.get("latent_dims", ""), [])
            spec = str(cfg.get("custom_factors", "")).strip()
            if not spec:
                raise ValidationError("custom model needs 'custom_factors'")
            factors = [
                tuple(n.strip() for n in part.split(",") if n.strip())
                for part in spec.split(";")
                if part.strip()
            ]
            return build_model({**observed, **latent}, tuple(observed), factors, a, b)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad model config: {exc}") from exc
    raise ValidationError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# Fit outputs
# ---------------------------------------------------------------------------

def format_trace(values, column) -> str:
    lines = [f"iter,{column}"] + [f"{k + 1},{v!r}" for k, v in enumerate(values)]
    return "\n".join(lines) + "\n"


def save_fit(result, model: PltfModel, out_dir, include_L=False) -> list[Path]:
    """Write one COO file per factor plus the trace CSV; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for alpha, f in enumerate(model.factors):
        indices = model.factor_indices(alpha)
        path = out_dir / f"factor_{f.name}.coo"
        write_coo(path, NamedTensor(indices, result.factors[alpha]), keep_zeros=True)
        written.append(path)
        if include_L and result.states is not None:
            path = out_dir / f"factor_{f.name}_L.coo"
            write_coo(path, NamedTensor(indices, result.states[alpha].L), keep_zeros=True)
            written.append(path)
    if result.method == "vb":
        trace = format_trace(result.bound_trace, "bound")
    else:
        trace = format_trace(result.divergence_trace, "divergence")
    path = out_dir / "trace.csv"
    path.write_text(trace)
    written.append(path)
    return written
