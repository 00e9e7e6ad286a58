"""MeSH descriptor vocabulary as a tree-number hierarchy.

Descriptors are loaded from the NLM descriptor XML (``desc2025.xml``) or from
a small TSV form used for fixtures::

    D000001<TAB>Calcimycin<TAB>D03.633.100.221.173;D04.345

Ancestors are resolved purely through tree-number prefixes.
"""

from __future__ import annotations

import io
import json
import logging
import re
import struct
import xml.etree.ElementTree as ET
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

log = logging.getLogger(__name__)

# Top-level MeSH categories.
BRANCH_LETTERS = frozenset("ABCDEFGHIJKLMNVZ")

_SEGMENT = re.compile(r"^[A-Za-z0-9]+$")

CACHE_MAGIC = b"BHMH"
CACHE_VERSION = 1


class MeshParseError(ValueError):
    """Raised for malformed descriptor input. ``position`` is (line, column) or None."""

    def __init__(self, message: str, position: tuple[int, int] | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (line {position[0]}, column {position[1]})"
        super().__init__(message)


@dataclass(frozen=True, order=True)
class TreeNumber:
    segments: tuple[str, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("tree number needs at least one segment")
        if self.segments[0][0] not in BRANCH_LETTERS:
            raise ValueError(f"tree number {self} does not start with a MeSH branch letter")
        for seg in self.segments:
            if not _SEGMENT.match(seg):
                raise ValueError(f"bad tree number segment {seg!r}")

    @classmethod
    def parse(cls, text: str) -> "TreeNumber":
        return cls(tuple(text.strip().split(".")))

    @property
    def depth(self) -> int:
        return len(self.segments)

    @property
    def branch(self) -> str:
        return self.segments[0][0]

    def prefixes(self) -> Iterable["TreeNumber"]:
        """Strict prefixes, shortest first."""
        for k in range(1, len(self.segments)):
            yield TreeNumber(self.segments[:k])

    def is_strict_prefix_of(self, other: "TreeNumber") -> bool:
        n = len(self.segments)
        return n < len(other.segments) and other.segments[:n] == self.segments

    def __str__(self) -> str:
        return ".".join(self.segments)


@dataclass(frozen=True)
class MeshDescriptor:
    ui: str
    name: str
    tree_numbers: tuple[TreeNumber, ...]

    def __post_init__(self):
        if not self.tree_numbers:
            raise ValueError(f"descriptor {self.ui} has no tree numbers")


@dataclass
class MeshHierarchy:
    """Immutable-by-convention descriptor hierarchy keyed by tree numbers."""

    descriptors: dict[str, MeshDescriptor]
    skipped: tuple[str, ...] = ()
    tree_index: dict[TreeNumber, str] = field(init=False, repr=False)

    def __post_init__(self):
        self.tree_index = {}
        for ui, d in self.descriptors.items():
            for t in d.tree_numbers:
                other = self.tree_index.get(t)
                if other is not None and other != ui:
                    raise MeshParseError(f"tree number {t} shared by {other} and {ui}")
                self.tree_index[t] = ui
        self._ancestor_cache: dict[str, frozenset[str]] = {}

    @classmethod
    def from_descriptors(cls, descriptors: Iterable[MeshDescriptor], skipped=()) -> "MeshHierarchy":
        table: dict[str, MeshDescriptor] = {}
        for d in descriptors:
            if d.ui in table:
                raise MeshParseError(f"duplicate descriptor ui {d.ui}")
            table[d.ui] = d
        return cls(table, tuple(skipped))

    def __len__(self) -> int:
        return len(self.descriptors)

    def __contains__(self, ui: str) -> bool:
        return ui in self.descriptors

    def __eq__(self, other) -> bool:
        if not isinstance(other, MeshHierarchy):
            return NotImplemented
        return self.descriptors == other.descriptors and self.skipped == other.skipped

    @property
    def branches(self) -> frozenset[str]:
        return frozenset(t.branch for t in self.tree_index)

    def _get(self, ui: str) -> MeshDescriptor:
        try:
            return self.descriptors[ui]
        except KeyError:
            raise KeyError(f"unknown MeSH descriptor {ui!r}") from None

    def depth(self, ui: str) -> int:
        return min(t.depth for t in self._get(ui).tree_numbers)

    def ancestors(self, ui: str) -> frozenset[str]:
        cached = self._ancestor_cache.get(ui)
        if cached is not None:
            return cached
        found = set()
        for t in self._get(ui).tree_numbers:
            for p in t.prefixes():
                hit = self.tree_index.get(p)
                if hit is not None:
                    found.add(hit)
        found.discard(ui)
        result = frozenset(found)
        self._ancestor_cache[ui] = result
        return result

    def expand_hier(self, labels: Iterable[str]) -> frozenset[str]:
        out = set()
        for ui in labels:
            out.add(ui)
            out |= self.ancestors(ui)
        return frozenset(out)

    def summary(self) -> str:
        n_trees = len(self.tree_index)
        line = (f"{len(self)} descriptors, {n_trees} tree numbers, "
                f"{len(self.branches)} branches ({''.join(sorted(self.branches))})")
        if self.skipped:
            line += f", {len(self.skipped)} skipped without tree numbers"
        return line

    # -- cache -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        rows = [[d.ui, d.name, [str(t) for t in d.tree_numbers]]
                for d in sorted(self.descriptors.values(), key=lambda d: d.ui)]
        payload = json.dumps({"descriptors": rows, "skipped": list(self.skipped)},
                             ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        return CACHE_MAGIC + struct.pack("<I", CACHE_VERSION) + zlib.compress(payload, 9)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MeshHierarchy":
        if blob[:4] != CACHE_MAGIC:
            raise MeshParseError("not a hierarchy cache (bad magic)")
        (version,) = struct.unpack("<I", blob[4:8])
        if version != CACHE_VERSION:
            raise MeshParseError(f"unsupported hierarchy cache version {version}")
        data = json.loads(zlib.decompress(blob[8:]).decode("utf-8"))
        descs = [MeshDescriptor(ui, name, tuple(TreeNumber.parse(t) for t in trees))
                 for ui, name, trees in data["descriptors"]]
        return cls.from_descriptors(descs, data["skipped"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "MeshHierarchy":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _tree_numbers(texts: Iterable[str], where: str, position=None) -> tuple[TreeNumber, ...]:
    out = []
    for text in texts:
        text = text.strip()
        if not text:
            continue
        try:
            out.append(TreeNumber.parse(text))
        except ValueError as exc:
            raise MeshParseError(f"{where}: {exc}", position) from None
    return tuple(dict.fromkeys(out))


def _parse_tsv(stream: BinaryIO) -> MeshHierarchy:
    descs, skipped, seen = [], [], {}
    text = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    for lineno, line in enumerate(text, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise MeshParseError(f"expected 3 tab-separated columns, got {len(cols)}", (lineno, 1))
        ui, name, trees = (c.strip() for c in cols)
        if not ui:
            raise MeshParseError("empty descriptor ui", (lineno, 1))
        if ui in seen:
            raise MeshParseError(f"duplicate descriptor ui {ui} (first on line {seen[ui]})", (lineno, 1))
        seen[ui] = lineno
        tns = _tree_numbers(trees.split(";"), ui, (lineno, len(ui) + len(name) + 3))
        if not tns:
            skipped.append(ui)
            continue
        descs.append(MeshDescriptor(ui, name, tns))
    return MeshHierarchy.from_descriptors(descs, skipped)


def _parse_xml(stream: BinaryIO) -> MeshHierarchy:
    descs, skipped, seen = [], [], set()
    parser = ET.XMLPullParser(events=("end",))
    try:
        for chunk in iter(lambda: stream.read(1 << 20), b""):
            parser.feed(chunk)
            for _, elem in parser.read_events():
                if elem.tag != "DescriptorRecord":
                    continue
                ui = (elem.findtext("DescriptorUI") or "").strip()
                if not ui:
                    raise MeshParseError(f"DescriptorRecord #{len(seen) + 1} lacks DescriptorUI")
                if ui in seen:
                    raise MeshParseError(f"duplicate descriptor ui {ui}")
                seen.add(ui)
                name = (elem.findtext("DescriptorName/String") or "").strip()
                tns = _tree_numbers((t.text or "" for t in elem.iterfind("TreeNumberList/TreeNumber")), ui)
                if tns:
                    descs.append(MeshDescriptor(ui, name, tns))
                else:
                    skipped.append(ui)
                elem.clear()
        parser.close()
    except ET.ParseError as exc:
        raise MeshParseError(f"malformed XML: {exc.msg}", exc.position) from None
    return MeshHierarchy.from_descriptors(descs, skipped)


def parse_descriptors(source: BinaryIO | bytes, format: str = "xml") -> MeshHierarchy:
    """Parse a descriptor stream in ``xml`` or ``tsv`` form.

    Descriptors without tree numbers are skipped; their uis are kept in
    ``MeshHierarchy.skipped`` and a warning is logged.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if format == "xml":
        h = _parse_xml(source)
    elif format == "tsv":
        h = _parse_tsv(source)
    else:
        raise ValueError(f"unknown descriptor format {format!r} (expected xml or tsv)")
    if h.skipped:
        log.warning("skipped %d descriptors without tree numbers", len(h.skipped))
    return h


def load_hierarchy(path, format: str | None = None) -> MeshHierarchy:
    """Load from a descriptor file or a ``.bhmh`` cache, guessing the format from the suffix."""
    path = str(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
        fh.seek(0)
        if head == CACHE_MAGIC:
            return MeshHierarchy.from_bytes(fh.read())
        if format is None:
            format = "tsv" if path.endswith((".tsv", ".txt")) else "xml"
        return parse_descriptors(fh, format)
