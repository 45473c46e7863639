"""Binary tensor/mask files and JSON run configurations.

Tensor file layout (little-endian)::

    b"DTEN" | u32 version=1 | u32 order | u64 extents[order] | f64 payload[N]

Mask files use magic ``b"DMSK"`` and a ``u8`` payload of 0/1 (1 = observed).
Payloads are stored first-index-fastest.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from mtcomplete.solver import SharingPlan, SolverConfig, default_lambda, default_rank
from mtcomplete.tensor import MAX_ORDER, flat

TENSOR_MAGIC = b"DTEN"
MASK_MAGIC = b"DMSK"
VERSION = 1
HEADER = struct.Struct("<4sII")
# guards the byte-count arithmetic against absurd headers
MAX_ENTRIES = 1 << 40


class FileFormatError(ValueError):
    pass


class BadMagicError(FileFormatError):
    pass


class VersionError(FileFormatError):
    pass


class TruncatedError(FileFormatError):
    pass


class ExtentOverflowError(FileFormatError):
    pass


class TrailingDataError(FileFormatError):
    pass


class BadMaskValueError(FileFormatError):
    pass


@contextmanager
def atomic_write(path):
    """Open a temp file next to ``path``; rename it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _encode(magic: bytes, shape, payload: bytes) -> bytes:
    head = HEADER.pack(magic, VERSION, len(shape))
    extents = struct.pack(f"<{len(shape)}Q", *shape)
    return head + extents + payload


def _decode(buf: bytes, magic: bytes, itemsize: int, path) -> tuple[tuple[int, ...], bytes]:
    if len(buf) < 4 or buf[:4] != magic:
        raise BadMagicError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    if len(buf) < HEADER.size:
        raise TruncatedError(f"{path}: truncated header ({len(buf)} bytes)")
    _, version, order = HEADER.unpack_from(buf)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}, expected {VERSION}")
    if not 1 <= order <= MAX_ORDER:
        raise FileFormatError(f"{path}: order {order} outside [1, {MAX_ORDER}]")
    ext_end = HEADER.size + 8 * order
    if len(buf) < ext_end:
        raise TruncatedError(f"{path}: truncated extents, need {ext_end} bytes, have {len(buf)}")
    shape = struct.unpack_from(f"<{order}Q", buf, HEADER.size)
    n = 1
    for e in shape:
        if e < 1:
            raise FileFormatError(f"{path}: zero extent in shape {shape}")
        n *= e
        if n > MAX_ENTRIES:
            raise ExtentOverflowError(f"{path}: extents {shape} overflow the entry limit")
    need = ext_end + itemsize * n
    if len(buf) < need:
        have = (len(buf) - ext_end) // itemsize
        raise TruncatedError(
            f"{path}: truncated payload, shape {shape} needs {n} values, found {have}"
        )
    if len(buf) > need:
        raise TrailingDataError(f"{path}: {len(buf) - need} unexpected trailing bytes")
    return tuple(shape), buf[ext_end:]


def tensor_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t, dtype=np.float64)
    return _encode(TENSOR_MAGIC, t.shape, flat(t).astype("<f8").tobytes())


def mask_bytes(w: np.ndarray) -> bytes:
    w = np.asarray(w, dtype=bool)
    return _encode(MASK_MAGIC, w.shape, flat(w).astype(np.uint8).tobytes())


def write_tensor(path, t: np.ndarray) -> None:
    with atomic_write(path) as fh:
        fh.write(tensor_bytes(t))


def write_mask(path, w: np.ndarray) -> None:
    with atomic_write(path) as fh:
        fh.write(mask_bytes(w))


def read_tensor(path) -> np.ndarray:
    shape, payload = _decode(Path(path).read_bytes(), TENSOR_MAGIC, 8, path)
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape, order="F")


def read_mask(path) -> np.ndarray:
    shape, payload = _decode(Path(path).read_bytes(), MASK_MAGIC, 1, path)
    raw = np.frombuffer(payload, dtype=np.uint8)
    if raw.size and raw.max() > 1:
        bad = int(np.argmax(raw > 1))
        raise BadMaskValueError(f"{path}: mask byte {raw[bad]} at offset {bad} is not 0 or 1")
    return raw.astype(bool).reshape(shape, order="F")


@dataclass
class RunConfig:
    """Settings for one ``complete`` run, loaded from JSON.

    Relative paths are resolved against the config file's directory.
    """

    tensors: list[Path]
    masks: list[Path]
    groups: list[list[tuple[int, int]]]
    outputs: list[Path]
    report: Path
    ranks: Optional[list[int]] = None
    alpha: Optional[list[list[float]]] = None
    lam: Optional[float] = None
    max_sweeps: int = 300
    rel_tolerance: float = 1e-6
    init: str = "random"
    seed: int = 0

    KEYS = ("tensors", "masks", "groups", "ranks", "alpha", "lambda", "max_sweeps",
            "rel_tolerance", "init", "seed", "outputs", "report")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        doc = json.loads(path.read_text())
        return cls.from_dict(doc, base=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base=Path(".")) -> "RunConfig":
        base = Path(base)
        unknown = sorted(set(doc) - set(cls.KEYS))
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        for key in ("tensors", "masks", "groups", "outputs", "report"):
            if key not in doc:
                raise ConfigError(f"missing required field '{key}'")
        resolve = lambda p: base / p
        try:
            return cls(
                tensors=[resolve(p) for p in doc["tensors"]],
                masks=[resolve(p) for p in doc["masks"]],
                groups=[[(int(k), int(l)) for k, l in g] for g in doc["groups"]],
                outputs=[resolve(p) for p in doc["outputs"]],
                report=resolve(doc["report"]),
                ranks=None if doc.get("ranks") is None else [int(r) for r in doc["ranks"]],
                alpha=doc.get("alpha"),
                lam=None if doc.get("lambda") is None else float(doc["lambda"]),
                max_sweeps=int(doc.get("max_sweeps", 300)),
                rel_tolerance=float(doc.get("rel_tolerance", 1e-6)),
                init=str(doc.get("init", "random")),
                seed=int(doc.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    def check_lengths(self) -> None:
        if len(self.masks) != len(self.tensors):
            raise ConfigError(f"masks: {len(self.masks)} paths for {len(self.tensors)} tensors")
        if len(self.outputs) != len(self.tensors):
            raise ConfigError(f"outputs: {len(self.outputs)} paths for {len(self.tensors)} tensors")
        if self.ranks is not None and len(self.ranks) != len(self.groups):
            raise ConfigError(f"ranks: {len(self.ranks)} values for {len(self.groups)} groups")

    def plan_for(self, shapes) -> SharingPlan:
        ranks = self.ranks
        if ranks is None:
            ranks = []
            for g in self.groups:
                k, l = g[0]
                if not (0 <= k < len(shapes) and 0 <= l < len(shapes[k])):
                    raise ConfigError(f"groups: pair {(k, l)} does not exist")
                ranks.append(default_rank(shapes[k], l))
        return SharingPlan([len(s) for s in shapes], self.groups, ranks)

    def solver_config(self, tensors) -> SolverConfig:
        lam = self.lam if self.lam is not None else default_lambda(tensors)
        return SolverConfig(lam=lam, alpha=self.alpha, max_sweeps=self.max_sweeps,
                            rel_tolerance=self.rel_tolerance, init=self.init, seed=self.seed)


class ConfigError(ValueError):
    pass
