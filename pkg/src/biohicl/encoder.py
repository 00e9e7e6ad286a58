"""Hashed bag-of-tokens encoder with a LoRA-adapted projection.

    x = mean(E[tokens])            frozen lookup + mean pooling
    z = (W + B @ A) x              lora mode  (W frozen, A and B trainable)
    z = W x                        full mode  (W trainable)
    h = z / |z|

B starts at zero so the adapted encoder equals the base encoder at init.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import asdict, dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_TOKEN = re.compile(r"[0-9a-z]+")

MAGIC = b"BHCL"
VERSION = 1
DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    vocab_buckets: int = 4096
    hidden_dim: int = 64
    out_dim: int = 32
    lora_rank: int = 4
    seed: int = 0
    max_tokens: int = 8192
    mode: str = "lora"

    def __post_init__(self):
        if min(self.vocab_buckets, self.hidden_dim, self.out_dim, self.lora_rank, self.max_tokens) < 1:
            raise ValueError("encoder dimensions must be positive")
        if self.mode not in ("lora", "full"):
            raise ValueError(f"mode must be 'lora' or 'full', got {self.mode!r}")
        if self.lora_rank > min(self.out_dim, self.hidden_dim) / 2:
            raise ValueError(
                f"lora_rank={self.lora_rank} violates r <= min(out_dim, hidden_dim)/2 "
                f"= {min(self.out_dim, self.hidden_dim) / 2:g}")


@dataclass(eq=False)
class EncoderParams:
    E: np.ndarray  # vocab_buckets x hidden_dim, frozen
    W: np.ndarray  # out_dim x hidden_dim; frozen in lora mode
    A: np.ndarray | None = None  # rank x hidden_dim
    B: np.ndarray | None = None  # out_dim x rank

    @property
    def mode(self) -> str:
        return "full" if self.A is None else "lora"

    def projection(self) -> np.ndarray:
        if self.A is None:
            return self.W
        return self.W + self.B @ self.A

    def trainable(self) -> dict[str, np.ndarray]:
        if self.A is None:
            return {"W": self.W}
        return {"A": self.A, "B": self.B}

    def copy(self) -> "EncoderParams":
        cp = lambda a: None if a is None else a.copy()
        return EncoderParams(self.E.copy(), self.W.copy(), cp(self.A), cp(self.B))

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"E": self.E, "W": self.W}
        if self.A is not None:
            out.update(A=self.A, B=self.B)
        return out

    def allclose(self, other: "EncoderParams", atol: float = 0.0) -> bool:
        mine, theirs = self.tensors(), other.tensors()
        return mine.keys() == theirs.keys() and all(
            np.allclose(mine[k], theirs[k], rtol=0, atol=atol) for k in mine)


def init_params(cfg: EncoderConfig) -> EncoderParams:
    rng = np.random.default_rng(cfg.seed)
    E = rng.standard_normal((cfg.vocab_buckets, cfg.hidden_dim)) / np.sqrt(cfg.hidden_dim)
    W = rng.standard_normal((cfg.out_dim, cfg.hidden_dim)) / np.sqrt(cfg.hidden_dim)
    if cfg.mode == "full":
        return EncoderParams(E, W)
    A = rng.standard_normal((cfg.lora_rank, cfg.hidden_dim)) / np.sqrt(cfg.hidden_dim)
    B = np.zeros((cfg.out_dim, cfg.lora_rank))
    return EncoderParams(E, W, A, B)


def trainable_fraction(cfg: EncoderConfig) -> float:
    """Share of parameters updated in lora mode: r(d_h + d) / (V d_h + d d_h)."""
    total = cfg.vocab_buckets * cfg.hidden_dim + cfg.out_dim * cfg.hidden_dim
    return cfg.lora_rank * (cfg.hidden_dim + cfg.out_dim) / total


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str, cfg: EncoderConfig) -> list[int]:
    words = _TOKEN.findall(text.lower())[: cfg.max_tokens]
    return [fnv1a64(w.encode("utf-8")) % cfg.vocab_buckets for w in words]


def pool(text: str, params: EncoderParams, cfg: EncoderConfig) -> np.ndarray:
    ids = tokenize(text, cfg)
    if not ids:
        return np.zeros(params.E.shape[1])
    return params.E[ids].mean(axis=0)


def pool_corpus(texts: Iterable[str], params: EncoderParams, cfg: EncoderConfig) -> np.ndarray:
    """Mean-pooled token embeddings, one row per text. Depends only on frozen E."""
    rows = [pool(t, params, cfg) for t in texts]
    if not rows:
        return np.zeros((0, params.E.shape[1]))
    return np.vstack(rows)


def project(pooled: np.ndarray, params: EncoderParams) -> tuple[np.ndarray, np.ndarray]:
    """Normalised embeddings and degenerate flags for pooled rows."""
    z = np.atleast_2d(pooled) @ params.projection().T
    norms = np.linalg.norm(z, axis=1)
    degenerate = norms < DEGENERATE_EPS
    h = np.zeros_like(z)
    ok = ~degenerate
    h[ok] = z[ok] / norms[ok, None]
    h[degenerate, 0] = 1.0
    return h, degenerate


def encode(text: str, params: EncoderParams, cfg: EncoderConfig) -> tuple[np.ndarray, bool]:
    """Return (unit embedding, degenerate flag); degenerate inputs map to e1."""
    h, flag = project(pool(text, params, cfg), params)
    return h[0], bool(flag[0])


def encode_corpus(texts: Sequence[str], params: EncoderParams, cfg: EncoderConfig):
    return project(pool_corpus(texts, params, cfg), params)


def sim_e(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


# -- BHCL container ----------------------------------------------------------
# header: magic "BHCL", u32 version, u32 rows, u32 dims, u8 has_flags
# then rows*dims little-endian f32, then `rows` flag bytes when has_flags.
# Checkpoints write an empty (0 x 0) embedding block followed by
# u32 section count, per section: u16 name length, name, u8 itemsize (4|8),
# u32 rows, u32 cols, little-endian data; then u32 length + JSON config.

_HEADER = struct.Struct("<4sIIIB")


class ContainerError(ValueError):
    pass


def write_embeddings(fh: BinaryIO, embs: np.ndarray, flags: np.ndarray | None = None) -> None:
    embs = np.asarray(embs, dtype="<f4")
    rows, dims = embs.shape
    fh.write(_HEADER.pack(MAGIC, VERSION, rows, dims, 0 if flags is None else 1))
    fh.write(np.ascontiguousarray(embs).tobytes())
    if flags is not None:
        fh.write(np.asarray(flags, dtype=np.uint8).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ContainerError("truncated BHCL file")
    return data


def _read_header(fh: BinaryIO):
    magic, version, rows, dims, has_flags = _HEADER.unpack(_read_exact(fh, _HEADER.size))
    if magic != MAGIC:
        raise ContainerError("bad magic, not a BHCL file")
    if version != VERSION:
        raise ContainerError(f"unsupported BHCL version {version}")
    return rows, dims, has_flags


def read_embeddings(fh: BinaryIO) -> tuple[np.ndarray, np.ndarray | None]:
    rows, dims, has_flags = _read_header(fh)
    embs = np.frombuffer(_read_exact(fh, 4 * rows * dims), dtype="<f4").reshape(rows, dims)
    flags = None
    if has_flags:
        flags = np.frombuffer(_read_exact(fh, rows), dtype=np.uint8).astype(bool)
    return embs.copy(), flags


def save_checkpoint(path, params: EncoderParams, cfg: EncoderConfig, extra: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, 0, 0))
        sections = params.tensors()
        fh.write(struct.pack("<I", len(sections)))
        for name, arr in sections.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("ascii")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<BII", 8, *arr.shape))
            fh.write(arr.tobytes())
        trailer = {"encoder": asdict(cfg)}
        if extra:
            trailer.update(extra)
        blob = json.dumps(trailer, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)) + blob)


def load_checkpoint(path) -> tuple[EncoderParams, EncoderConfig, dict]:
    with open(path, "rb") as fh:
        rows, dims, _ = _read_header(fh)
        if rows or dims:
            raise ContainerError("file is an embedding dump, not a checkpoint")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, nlen).decode("ascii")
            itemsize, r, c = struct.unpack("<BII", _read_exact(fh, 9))
            dtype = {4: "<f4", 8: "<f8"}.get(itemsize)
            if dtype is None:
                raise ContainerError(f"section {name}: unsupported item size {itemsize}")
            tensors[name] = np.frombuffer(_read_exact(fh, itemsize * r * c), dtype=dtype) \
                .reshape(r, c).astype(np.float64)
        (tlen,) = struct.unpack("<I", _read_exact(fh, 4))
        trailer = json.loads(_read_exact(fh, tlen).decode("utf-8"))
    cfg = EncoderConfig(**trailer.pop("encoder"))
    params = EncoderParams(tensors["E"], tensors["W"], tensors.get("A"), tensors.get("B"))
    return params, cfg, trailer
