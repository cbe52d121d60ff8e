"""Dataset loading, target normalisation, splits, embeddings and checkpoints.

Canonical dataset layouts (UTF-8 TSV, header line optional):

* ``emoint``: ``id  text  emotion  intensity`` with intensity in [0, 1]
* ``vad``:    ``id  text  V  A  D`` on a 1-5 scale
* ``va``:     ``id  text  V  A`` on a 1-9 scale
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError, IncompatibilityError
from .layers import EMBED_DIM, EmbeddingTable
from .tensor import Tensor

log = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.10


@dataclass(frozen=True)
class Instance:
    id: str
    text: str
    label: str | None = None
    scores: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetSchema:
    format: str
    score_names: tuple[str, ...]
    lo: float
    hi: float
    classes: tuple[str, ...] = ()

    @property
    def n_fields(self) -> int:
        return 2 + (1 if self.classes else 0) + len(self.score_names)


EMOINT = DatasetSchema("emoint", ("intensity",), 0.0, 1.0, ("anger", "fear", "joy", "sadness"))
VAD = DatasetSchema("vad", ("valence", "arousal", "dominance"), 1.0, 5.0)
VA = DatasetSchema("va", ("valence", "arousal"), 1.0, 9.0)
SCHEMAS = {s.format: s for s in (EMOINT, VAD, VA)}


def _parse_row(parts: list[str], schema: DatasetSchema) -> Instance:
    if len(parts) != schema.n_fields:
        raise ValueError(f"expected {schema.n_fields} fields, got {len(parts)}")
    iid, text = parts[0].strip(), parts[1]
    if not iid:
        raise ValueError("empty id")
    rest = parts[2:]
    label = None
    if schema.classes:
        label = rest[0].strip().lower()
        if label not in schema.classes:
            raise ValueError(f"unknown class {label!r}")
        rest = rest[1:]
    scores = {}
    for name, raw in zip(schema.score_names, rest):
        value = float(raw)
        if not (schema.lo <= value <= schema.hi):
            raise ValueError(f"{name}={value} outside [{schema.lo}, {schema.hi}]")
        scores[name] = value
    return Instance(iid, text, label, scores)


def _looks_like_header(parts: list[str], schema: DatasetSchema) -> bool:
    try:
        float(parts[-1])
    except (ValueError, IndexError):
        return True
    return False


def load_dataset(path: str | Path, schema: DatasetSchema) -> tuple[list[Instance], int]:
    """Parse a dataset TSV.  Returns ``(instances, n_skipped)``.

    Malformed, out-of-range and duplicate-id rows are skipped and counted;
    more than 10% skipped rows is taken as a schema mismatch and raises.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if lines and _looks_like_header(lines[0].split("\t"), schema):
        lines = lines[1:]
    if not lines:
        raise DataError(f"dataset {path} has no rows")
    instances: list[Instance] = []
    seen: set[str] = set()
    skipped = 0
    for lineno, line in enumerate(lines, 1):
        try:
            inst = _parse_row(line.split("\t"), schema)
            if inst.id in seen:
                raise ValueError(f"duplicate id {inst.id!r}")
        except ValueError as exc:
            skipped += 1
            log.debug("%s row %d skipped: %s", path, lineno, exc)
            continue
        seen.add(inst.id)
        instances.append(inst)
    if skipped:
        log.warning("%s: skipped %d malformed row(s) of %d", path, skipped, len(lines))
    if skipped > MAX_MALFORMED_FRACTION * len(lines):
        raise DataError(
            f"{path}: {skipped} of {len(lines)} rows malformed for schema {schema.format!r}; wrong schema?"
        )
    return instances, skipped


def normalize_value(x: float, schema: DatasetSchema) -> float:
    return (x - schema.lo) / (schema.hi - schema.lo)


def denormalize_value(x: float, schema: DatasetSchema) -> float:
    return x * (schema.hi - schema.lo) + schema.lo


def normalize_targets(instances: Iterable[Instance], schema: DatasetSchema) -> list[Instance]:
    """Rescale every score linearly onto [0, 1]."""
    return [replace(i, scores={k: normalize_value(v, schema) for k, v in i.scores.items()}) for i in instances]


def denormalize_targets(instances: Iterable[Instance], schema: DatasetSchema) -> list[Instance]:
    return [replace(i, scores={k: denormalize_value(v, schema) for k, v in i.scores.items()}) for i in instances]


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def _shuffled(instances: Sequence[Instance], seed: int) -> list[Instance]:
    ordered = sorted(instances, key=lambda i: i.id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    return [ordered[k] for k in perm]


def split(instances: Sequence[Instance], ratios=(70, 10, 20), seed: int = 0):
    """Seeded train/validation/test split.

    Validation and test receive ``floor(n * r / 100)`` instances; the
    remainder goes to train.  The result depends only on the ids and seed.
    """
    if len(ratios) != 3 or sum(ratios) != 100:
        raise DataError(f"split ratios must be three numbers summing to 100, got {ratios}")
    n = len(instances)
    if n < 3:
        raise DataError(f"need at least 3 instances to split, got {n}")
    shuffled = _shuffled(instances, seed)
    n_val = n * ratios[1] // 100
    n_test = n * ratios[2] // 100
    n_train = n - n_val - n_test
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


def kfold(instances: Sequence[Instance], k: int = 10, seed: int = 0):
    """``k`` seeded (train, test) pairs; fold sizes differ by at most one."""
    n = len(instances)
    if n < k:
        raise DataError(f"cannot make {k} folds from {n} instances")
    shuffled = _shuffled(instances, seed)
    bounds = np.cumsum([0] + [n // k + (1 if f < n % k else 0) for f in range(k)])
    folds = []
    for f in range(k):
        test = shuffled[bounds[f]:bounds[f + 1]]
        train = shuffled[:bounds[f]] + shuffled[bounds[f + 1]:]
        folds.append((train, test))
    return folds


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

def load_embeddings(
    path: str | Path,
    vocab_filter: Iterable[str] | None = None,
    dim: int | None = EMBED_DIM,
    oov_policy: str = "zero",
    seed: int = 0,
) -> EmbeddingTable:
    """Read GloVe-style text vectors, keeping only tokens in ``vocab_filter``.

    The dimension is inferred from the first parseable line and must equal
    ``dim`` (pass ``None`` to accept any).  Lines whose values do not parse
    are skipped and counted; a parseable line of a different width raises.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"embedding file not found: {path}")
    keep = None if vocab_filter is None else set(vocab_filter)
    width: int | None = None
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    malformed = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) < 2:
                malformed += 1
                continue
            try:
                values = np.array([float(v) for v in parts[1:]])
                token = parts[0]
            except ValueError:
                # tokens may contain spaces; then only the trailing ``width`` fields are values
                if width is None or len(parts) <= width:
                    malformed += 1
                    continue
                try:
                    values = np.array([float(v) for v in parts[-width:]])
                except ValueError:
                    malformed += 1
                    continue
                token = " ".join(parts[:-width])
            if width is None:
                width = len(values)
                if dim is not None and width != dim:
                    raise FormatError(f"{path}:{lineno}: embedding width {width}, expected {dim}")
            elif len(values) != width:
                raise FormatError(f"{path}:{lineno}: {len(values)} values where earlier lines have {width}")
            if not token:
                malformed += 1
                continue
            if (keep is None or token in keep) and token not in vocab:
                vocab[token] = len(rows)
                rows.append(values)
    if malformed:
        log.warning("%s: skipped %d malformed embedding line(s)", path, malformed)
    final_dim = width or dim or EMBED_DIM
    matrix = np.stack(rows) if rows else np.zeros((0, final_dim))
    return EmbeddingTable(vocab, matrix, oov_policy, seed)


# ---------------------------------------------------------------------------
# TSV matrices (representation / feature dumps)
# ---------------------------------------------------------------------------

def format_float(x: float) -> str:
    return repr(float(x))


def write_matrix_tsv(path: str | Path, ids: Sequence[str], matrix: np.ndarray) -> None:
    """Write ``id<TAB>v1<TAB>...`` rows."""
    matrix = np.asarray(matrix)
    if len(ids) != len(matrix):
        raise DataError(f"{len(ids)} ids for {len(matrix)} rows")
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for iid, row in zip(ids, matrix):
            fh.write(iid + "\t" + "\t".join(format_float(v) for v in row) + "\n")


def read_matrix_tsv(path: str | Path, width: int | None = None) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    ids, rows = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            row = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-numeric value") from exc
        if width is not None and len(row) != width:
            raise FormatError(f"{path}:{lineno}: {len(row)} values, expected {width}")
        if rows and len(row) != len(rows[0]):
            raise FormatError(f"{path}:{lineno}: ragged row")
        ids.append(parts[0])
        rows.append(row)
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), -1 if rows else (width or 0))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MTENSCKP"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _encode_checkpoint(descriptor: dict, seed: int, params: dict[str, np.ndarray]) -> bytes:
    names = sorted(params)
    header = {
        "descriptor": descriptor,
        "seed": int(seed),
        "params": [[n, list(params[n].shape)] for n in names],
        "dtype": "<f8",
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    return _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(head)) + head + body


def save_checkpoint(model, path: str | Path) -> None:
    """Serialise ``model`` (descriptor, seed, named float64 parameters)."""
    params = {k: p.data for k, p in model.named_parameters().items()}
    Path(path).write_bytes(_encode_checkpoint(model.descriptor(), model.seed, params))


def read_checkpoint(path: str | Path) -> tuple[dict, int, dict[str, np.ndarray]]:
    """Return ``(descriptor, seed, params)`` from a checkpoint file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: not a checkpoint (magic {magic!r}, version {version})")
    start = _PREFIX.size
    if len(blob) < start + head_len:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(blob[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    offset = start + head_len
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > len(blob):
            raise FormatError(f"{path}: truncated while reading parameter {name!r}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=offset).astype(np.float64).reshape(shape)
        offset += n
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return header["descriptor"], header["seed"], params


def load_checkpoint(path: str | Path, model) -> None:
    """Copy checkpoint parameters into an already built ``model``.

    The stored architecture descriptor must equal ``model.descriptor()``.
    """
    descriptor, seed, params = read_checkpoint(path)
    expected = model.descriptor()
    if descriptor != expected:
        raise IncompatibilityError(
            f"checkpoint descriptor {json.dumps(descriptor, sort_keys=True)} does not match "
            f"requested model {json.dumps(expected, sort_keys=True)}"
        )
    targets: dict[str, Tensor] = model.named_parameters()
    if set(targets) != set(params):
        raise IncompatibilityError(f"parameter names differ: {sorted(set(targets) ^ set(params))}")
    for name, tensor in targets.items():
        if tensor.shape != params[name].shape:
            raise IncompatibilityError(f"parameter {name!r}: shape {params[name].shape} vs {tensor.shape}")
        tensor.data[...] = params[name]
    model.seed = seed
