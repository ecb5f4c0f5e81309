"""
Gradiente capturado pelo adversario e seu formato de arquivo.

Layout (little-endian), documentado em docs/capture_format.md:

    magic "GCAP" | version u16 | flags u16 | model hash 32 bytes
    | batch_size u32 | entry_count u32 | metadata_len u32 | metadata JSON
    | [hint_count u32 | hint_count x (class u32, count u32)]   (flag bit 0)
    | entry_count x (name_len u16 | name UTF-8 | ndim u8 | ndim x u32 | numel x f32)
    | CRC32 u32 de tudo que vem antes
"""

import json
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from src.diffula.errors import CaptureIntegrityError, ManifestMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"GCAP"
FORMAT_VERSION = 1
FLAG_LABEL_HINT = 0x1

_HEADER = struct.Struct("<4sHH32sIII")
_CRC = struct.Struct("<I")


@dataclass
class GradientCapture:
    entries: List[Tuple[str, torch.Tensor]]
    model_ref: str
    batch_size: int
    label_multiset_hint: Optional[Dict[int, int]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError("layer names in a capture must be unique")
        for name, grad in self.entries:
            if not torch.isfinite(grad).all():
                raise ValueError(f"gradient for layer {name!r} is not finite")

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.entries]

    @property
    def tensors(self) -> List[torch.Tensor]:
        return [grad for _, grad in self.entries]

    def manifest(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(name, tuple(grad.shape)) for name, grad in self.entries]

    def gradient(self, name: str) -> torch.Tensor:
        for layer, grad in self.entries:
            if layer == name:
                return grad
        raise KeyError(f"layer {name!r} not in capture")

    def to(self, dtype: torch.dtype) -> "GradientCapture":
        return GradientCapture(
            entries=[(name, grad.to(dtype)) for name, grad in self.entries],
            model_ref=self.model_ref,
            batch_size=self.batch_size,
            label_multiset_hint=self.label_multiset_hint,
            metadata=dict(self.metadata),
        )


def check_manifest(
    capture: GradientCapture,
    expected: Sequence[Tuple[str, Sequence[int]]],
) -> None:
    """Confere nomes, ordem e formatos contra o manifesto do modelo."""
    got = capture.manifest()
    want = [(name, tuple(shape)) for name, shape in expected]
    if [n for n, _ in got] != [n for n, _ in want]:
        raise ManifestMismatchError(
            f"Capture layers {[n for n, _ in got]} do not match manifest {[n for n, _ in want]}",
        )
    for (name, shape_got), (_, shape_want) in zip(got, want):
        if shape_got != shape_want:
            raise ManifestMismatchError(f"Layer {name!r} has shape {shape_got}, expected {shape_want}")


def encode_capture(capture: GradientCapture) -> bytes:
    """Codifica a captura; so aceita tensores float32 (o arquivo nao guarda dtype)."""
    for name, grad in capture.entries:
        if grad.dtype != torch.float32:
            raise ValueError(
                f"layer {name!r} has dtype {grad.dtype}; captures are stored as float32, "
                f"convert explicitly with capture.to(torch.float32)",
            )

    flags = FLAG_LABEL_HINT if capture.label_multiset_hint is not None else 0
    metadata = json.dumps(capture.metadata, sort_keys=True).encode("utf-8")

    parts = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            flags,
            bytes.fromhex(capture.model_ref),
            capture.batch_size,
            len(capture.entries),
            len(metadata),
        ),
        metadata,
    ]

    if capture.label_multiset_hint is not None:
        hint = sorted(capture.label_multiset_hint.items())
        parts.append(struct.pack("<I", len(hint)))
        for cls, count in hint:
            parts.append(struct.pack("<II", int(cls), int(count)))

    for name, grad in capture.entries:
        encoded = name.encode("utf-8")
        shape = tuple(grad.shape)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(grad.detach().cpu().numpy().astype("<f4").tobytes())

    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CaptureIntegrityError("capture file is truncated")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_capture(data: bytes) -> GradientCapture:
    if len(data) < _HEADER.size + _CRC.size:
        raise CaptureIntegrityError("capture file is truncated")

    body, (crc,) = data[:-_CRC.size], _CRC.unpack(data[-_CRC.size:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CaptureIntegrityError("checksum mismatch (file corrupted or truncated)")

    reader = _Reader(body)
    magic, version, flags, model_hash, batch_size, entry_count, meta_len = _HEADER.unpack(
        reader.take(_HEADER.size),
    )
    if magic != MAGIC:
        raise CaptureIntegrityError(f"bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise CaptureIntegrityError(f"unknown capture format version {version}")

    metadata = json.loads(reader.take(meta_len).decode("utf-8"))

    hint: Optional[Dict[int, int]] = None
    if flags & FLAG_LABEL_HINT:
        (count,) = reader.unpack("<I")
        hint = {}
        for _ in range(count):
            cls, n = reader.unpack("<II")
            hint[cls] = n

    entries: List[Tuple[str, torch.Tensor]] = []
    for _ in range(entry_count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        numel = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * numel), dtype="<f4").reshape(shape)
        entries.append((name, torch.from_numpy(values.astype(np.float32))))

    if reader.offset != len(body):
        raise CaptureIntegrityError("trailing bytes after the last entry")

    return GradientCapture(
        entries=entries,
        model_ref=model_hash.hex(),
        batch_size=batch_size,
        label_multiset_hint=hint,
        metadata=metadata,
    )


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Escreve em arquivo temporario no mesmo diretorio e renomeia."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def serialize_capture(capture: GradientCapture, path: Union[str, Path]) -> Path:
    path = Path(path)
    data = encode_capture(capture)
    atomic_write_bytes(path, data)
    logger.info(f"Wrote capture with {len(capture.entries)} layers ({len(data)} bytes) to {path}")
    return path


def deserialize_capture(
    path: Union[str, Path],
    expected_manifest: Optional[Sequence[Tuple[str, Sequence[int]]]] = None,
) -> GradientCapture:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Capture file not found: {path}")

    capture = decode_capture(path.read_bytes())
    if expected_manifest is not None:
        check_manifest(capture, expected_manifest)

    logger.info(f"Loaded capture of batch size {capture.batch_size} from {path}")
    return capture


def encoded_size(manifest: Sequence[Tuple[str, Sequence[int]]], metadata_len: int, hint_classes: int = 0) -> int:
    """Tamanho exato em bytes do arquivo para um manifesto (ver docs)."""
    size = _HEADER.size + metadata_len
    if hint_classes:
        size += 4 + 8 * hint_classes
    for name, shape in manifest:
        numel = int(np.prod(shape)) if len(shape) else 1
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape) + 4 * numel
    return size + _CRC.size
