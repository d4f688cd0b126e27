"""Lenient PE parsing and fixed-layout static feature extraction.

The extractor maps arbitrary byte blobs to a 629-dimensional real vector:
content features (byte histogram, windowed byte/entropy histogram, string
statistics) are computed for any input, while structural features (header
fields, hashed section entropies, hashed import names) are populated only
when the blob parses as a PE image. Parsing never raises on malformed
input; every degradation is recorded as a warning string.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field

import numpy as np

FNV64_OFFSET = 14695981039346656037
FNV64_PRIME = 1099511628211

DOS_MAGIC = b"MZ"
NT_SIGNATURE = b"PE\x00\x00"
PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

_PRINTABLE_RUN = re.compile(rb"[\x20-\x7f]{5,}")

DEFAULT_LAYOUT_ID = "pe-static-629"

# name, length -- offsets are cumulative
_SEGMENT_SPEC = (
    ("byte_histogram", 256),
    ("byte_entropy_histogram", 256),
    ("strings", 5),
    ("header", 16),
    ("sections", 32),
    ("imports", 64),
)

SECTION_BUCKETS = 32
IMPORT_BUCKETS = 64


class LayoutError(ValueError):
    """Raised when a feature layout does not match the extractor contract."""


@dataclass(frozen=True)
class RawBinary:
    data: bytes
    source_id: str

    def __post_init__(self):
        if not self.source_id:
            raise ValueError("source_id must be non-empty")


@dataclass(frozen=True)
class SectionInfo:
    name: str
    virtual_size: int
    raw_size: int
    characteristics: int
    shannon_entropy: float  # bits, in [0, 8]


@dataclass
class PEMetadata:
    is_pe: bool = False
    machine: int = 0
    timestamp: int = 0
    num_sections: int = 0
    entry_point_rva: int = 0
    image_base: int = 0
    subsystem: int = 0
    dll_characteristics: int = 0
    size_of_code: int = 0
    size_of_headers: int = 0
    sections: list[SectionInfo] = field(default_factory=list)
    imports: list[tuple[str, str]] = field(default_factory=list)
    exports_count: int = 0
    parse_warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class FeatureLayout:
    layout_id: str
    segments: tuple[tuple[str, int, int], ...]  # (name, offset, length)
    total_dim: int

    def __post_init__(self):
        offset = 0
        for name, seg_offset, length in self.segments:
            if seg_offset != offset or length <= 0:
                raise LayoutError(f"segment {name!r} breaks contiguity at offset {seg_offset}")
            offset += length
        if offset != self.total_dim:
            raise LayoutError(f"segment lengths sum to {offset}, expected {self.total_dim}")

    def segment_slice(self, name: str) -> slice:
        for seg_name, offset, length in self.segments:
            if seg_name == name:
                return slice(offset, offset + length)
        raise KeyError(name)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout_id: str
    source_id: str


def default_layout() -> FeatureLayout:
    segments = []
    offset = 0
    for name, length in _SEGMENT_SPEC:
        segments.append((name, offset, length))
        offset += length
    return FeatureLayout(layout_id=DEFAULT_LAYOUT_ID, segments=tuple(segments), total_dim=offset)


_REGISTRY: dict[str, FeatureLayout] = {DEFAULT_LAYOUT_ID: default_layout()}


def register_layout(layout: FeatureLayout) -> None:
    _REGISTRY[layout.layout_id] = layout


def get_layout(layout_id: str) -> FeatureLayout:
    try:
        return _REGISTRY[layout_id]
    except KeyError:
        raise LayoutError(f"unknown layout_id {layout_id!r}") from None


def save_layouts(path) -> None:
    doc = {
        lid: {"segments": [list(s) for s in layout.segments], "total_dim": layout.total_dim}
        for lid, layout in sorted(_REGISTRY.items())
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_layouts(path) -> list[FeatureLayout]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    loaded = []
    for lid, entry in doc.items():
        layout = FeatureLayout(
            layout_id=lid,
            segments=tuple((str(n), int(o), int(l)) for n, o, l in entry["segments"]),
            total_dim=int(entry["total_dim"]),
        )
        register_layout(layout)
        loaded.append(layout)
    return loaded


def fnv1a64(s: str) -> int:
    """64-bit FNV-1a over the UTF-8 encoding of ``s``."""
    h = FNV64_OFFSET
    for b in s.encode("utf-8"):
        h ^= b
        h = (h * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def byte_histogram(data: bytes) -> np.ndarray:
    """Normalized 256-bin byte frequency histogram; all zeros for empty input."""
    out = np.zeros(256, dtype=np.float64)
    if len(data) == 0:
        return out
    arr = np.frombuffer(data, dtype=np.uint8)
    counts = np.bincount(arr, minlength=256)
    return counts / float(len(data))


def shannon_entropy(data: bytes) -> float:
    """Byte-level Shannon entropy in bits, in [0, 8]."""
    if len(data) == 0:
        return 0.0
    arr = np.frombuffer(data, dtype=np.uint8)
    counts = np.bincount(arr, minlength=256)
    p = counts[counts > 0] / float(len(data))
    return float(-(p * np.log2(p)).sum())


def byte_entropy_histogram(data: bytes, window: int = 2048, step: int = 1024) -> np.ndarray:
    """Joint (window entropy, byte nibble) histogram, flattened entropy-major.

    Slides a window of ``window`` bytes with stride ``step``; each window
    contributes its bytes to one of 16 entropy rows (0.5-bit quantization
    of the window's Shannon entropy) and 16 value columns (high nibble).
    Counts are normalized by the total number of contributions. Inputs
    shorter than one window are treated as a single whole-input window.
    """
    if window <= 0 or step <= 0:
        raise ValueError("window and step must be positive")
    grid = np.zeros((16, 16), dtype=np.float64)
    if len(data) == 0:
        return grid.reshape(-1)
    arr = np.frombuffer(data, dtype=np.uint8)
    if len(arr) < window:
        blocks = [arr]
    else:
        blocks = [arr[off:off + window] for off in range(0, len(arr) - window + 1, step)]
    for block in blocks:
        counts = np.bincount(block, minlength=256)
        p = counts[counts > 0] / float(len(block))
        h = float(-(p * np.log2(p)).sum())
        hbin = min(int(h * 2), 15)
        grid[hbin] += np.bincount(block >> 4, minlength=16)
    total = grid.sum()
    if total > 0:
        grid /= total
    return grid.reshape(-1)


def _u16(data: bytes, off: int) -> int | None:
    if off < 0 or off + 2 > len(data):
        return None
    return struct.unpack_from("<H", data, off)[0]


def _u32(data: bytes, off: int) -> int | None:
    if off < 0 or off + 4 > len(data):
        return None
    return struct.unpack_from("<I", data, off)[0]


def _u64(data: bytes, off: int) -> int | None:
    if off < 0 or off + 8 > len(data):
        return None
    return struct.unpack_from("<Q", data, off)[0]


def _section_name(raw: bytes) -> str:
    return raw.split(b"\x00", 1)[0].decode("ascii", errors="replace")


def _read_cstring(data: bytes, off: int, max_len: int = 256) -> str | None:
    if off < 0 or off >= len(data):
        return None
    end = min(len(data), off + max_len)
    chunk = data[off:end]
    nul = chunk.find(b"\x00")
    if nul == -1:
        return None
    return chunk[:nul].decode("ascii", errors="replace")


def _rva_to_offset(rva: int, sections: list[dict], file_len: int) -> int | None:
    if rva <= 0:
        return None
    for s in sections:
        span = max(s["virtual_size"], s["raw_size"])
        if span <= 0:
            continue
        if s["virtual_address"] <= rva < s["virtual_address"] + span:
            off = s["raw_ptr"] + (rva - s["virtual_address"])
            if 0 <= off < file_len:
                return off
    return None


def _parse_imports(data: bytes, raw_sections: list[dict], import_rva: int,
                   is_pe32_plus: bool, warnings: list[str],
                   max_dlls: int = 256, max_funcs: int = 4096) -> list[tuple[str, str]]:
    imports: list[tuple[str, str]] = []
    desc_off = _rva_to_offset(import_rva, raw_sections, len(data))
    if desc_off is None:
        warnings.append("import directory rva unmappable")
        return imports
    entry_size = 8 if is_pe32_plus else 4
    ordinal_flag = 1 << (entry_size * 8 - 1)
    for dll_index in range(max_dlls):
        off = desc_off + dll_index * 20
        if off + 20 > len(data):
            warnings.append("import descriptor table truncated")
            break
        fields = struct.unpack_from("<5I", data, off)
        if not any(fields):
            break
        original_first_thunk, _, _, name_rva, first_thunk = fields
        name_off = _rva_to_offset(name_rva, raw_sections, len(data))
        dll_name = _read_cstring(data, name_off) if name_off is not None else None
        if dll_name is None:
            warnings.append(f"import dll name unreadable (descriptor {dll_index})")
            dll_name = f"<dll{dll_index}>"
        thunk_rva = original_first_thunk or first_thunk
        thunk_off = _rva_to_offset(thunk_rva, raw_sections, len(data))
        if thunk_off is None:
            warnings.append(f"import thunk table unmappable for {dll_name}")
            continue
        for i in range(max_funcs):
            ent_off = thunk_off + i * entry_size
            val = _u64(data, ent_off) if is_pe32_plus else _u32(data, ent_off)
            if val is None:
                warnings.append(f"import thunk table truncated for {dll_name}")
                break
            if val == 0:
                break
            if val & ordinal_flag:
                imports.append((dll_name, f"ord{val & 0xFFFF}"))
                continue
            ibn_off = _rva_to_offset(int(val), raw_sections, len(data))
            # hint/name entry: 2-byte hint then NUL-terminated name
            name = _read_cstring(data, ibn_off + 2) if ibn_off is not None else None
            if name is None:
                warnings.append(f"import name unreadable in {dll_name}")
                continue
            imports.append((dll_name, name))
    return imports


def parse_pe(bin: RawBinary) -> PEMetadata:
    """Best-effort PE header/section/import parse; never raises on bad input.

    Non-PE inputs yield ``is_pe=False`` with an explanatory warning;
    truncated structures are parsed as far as the bytes allow, one warning
    per truncation. All reads are bounds-checked.
    """
    data = bin.data
    meta = PEMetadata()
    w = meta.parse_warnings

    if len(data) < 2 or data[:2] != DOS_MAGIC:
        w.append("no MZ magic")
        return meta
    e_lfanew = _u32(data, 0x3C)
    if e_lfanew is None:
        w.append("DOS header truncated before e_lfanew")
        return meta
    if e_lfanew + 4 > len(data):
        w.append("e_lfanew out of bounds")
        return meta
    if data[e_lfanew:e_lfanew + 4] != NT_SIGNATURE:
        w.append("missing PE signature")
        return meta

    coff_off = e_lfanew + 4
    if coff_off + 20 > len(data):
        w.append("COFF header truncated")
        return meta
    machine, num_sections, timestamp = struct.unpack_from("<HHI", data, coff_off)
    size_of_optional = _u16(data, coff_off + 16) or 0

    meta.is_pe = True
    meta.machine = machine
    meta.num_sections = num_sections
    meta.timestamp = timestamp

    opt_off = coff_off + 20
    opt_magic = _u16(data, opt_off)
    is_pe32_plus = False
    if opt_magic not in (PE32_MAGIC, PE32PLUS_MAGIC):
        w.append("optional header magic unrecognized")
    else:
        is_pe32_plus = opt_magic == PE32PLUS_MAGIC
        meta.size_of_code = _u32(data, opt_off + 4) or 0
        meta.entry_point_rva = _u32(data, opt_off + 16) or 0
        base = _u64(data, opt_off + 24) if is_pe32_plus else _u32(data, opt_off + 28)
        meta.image_base = base or 0
        meta.size_of_headers = _u32(data, opt_off + 60) or 0
        meta.subsystem = _u16(data, opt_off + 68) or 0
        meta.dll_characteristics = _u16(data, opt_off + 70) or 0

    # data directories: export (0) and import (1)
    export_rva = import_rva = 0
    num_dirs_off = opt_off + (108 if is_pe32_plus else 92)
    dirs_off = num_dirs_off + 4
    num_dirs = _u32(data, num_dirs_off) or 0
    dirs_end = opt_off + size_of_optional
    if num_dirs >= 1 and dirs_off + 8 <= min(len(data), dirs_end):
        export_rva = _u32(data, dirs_off) or 0
    if num_dirs >= 2 and dirs_off + 16 <= min(len(data), dirs_end):
        import_rva = _u32(data, dirs_off + 8) or 0

    sect_off = opt_off + size_of_optional
    raw_sections: list[dict] = []
    for i in range(num_sections):
        sh = sect_off + i * 40
        if sh + 40 > len(data):
            w.append(f"section table truncated at entry {i}")
            break
        name = _section_name(data[sh:sh + 8])
        virtual_size = _u32(data, sh + 8) or 0
        virtual_address = _u32(data, sh + 12) or 0
        raw_size = _u32(data, sh + 16) or 0
        raw_ptr = _u32(data, sh + 20) or 0
        characteristics = _u32(data, sh + 36) or 0
        body = b""
        if raw_size and raw_ptr:
            if raw_ptr >= len(data):
                w.append(f"section {name!r} raw data out of bounds")
            else:
                if raw_ptr + raw_size > len(data):
                    w.append(f"section {name!r} raw data truncated")
                body = data[raw_ptr:raw_ptr + raw_size]
        raw_sections.append({
            "virtual_size": virtual_size,
            "virtual_address": virtual_address,
            "raw_size": raw_size,
            "raw_ptr": raw_ptr,
        })
        meta.sections.append(SectionInfo(
            name=name,
            virtual_size=virtual_size,
            raw_size=raw_size,
            characteristics=characteristics,
            shannon_entropy=shannon_entropy(body),
        ))

    if import_rva:
        meta.imports = _parse_imports(data, raw_sections, import_rva, is_pe32_plus, w)
    if export_rva:
        exp_off = _rva_to_offset(export_rva, raw_sections, len(data))
        if exp_off is None or exp_off + 28 > len(data):
            w.append("export directory unmappable or truncated")
        else:
            meta.exports_count = _u32(data, exp_off + 20) or 0
    return meta


def _string_features(data: bytes) -> np.ndarray:
    out = np.zeros(5, dtype=np.float64)
    size = len(data)
    if size == 0:
        return out
    runs = _PRINTABLE_RUN.findall(data)
    out[0] = len(runs) / size
    if runs:
        out[1] = sum(len(r) for r in runs) / len(runs)
        joined = b"".join(runs)
        arr = np.frombuffer(joined, dtype=np.uint8)
        counts = np.bincount(arr, minlength=256)
        p = counts[counts > 0] / float(len(joined))
        out[4] = float(-(p * np.log2(p)).sum())
    out[2] = data.count(b"http") / size
    out[3] = data.count(b"MZ") / size
    return out


def _header_features(meta: PEMetadata, file_size: int) -> np.ndarray:
    return np.array([
        math.log2(1 + file_size),
        meta.timestamp / 2**32,
        meta.machine / 2**16,
        meta.num_sections / 64,
        math.log2(1 + meta.size_of_code),
        math.log2(1 + meta.size_of_headers),
        meta.subsystem / 2**16,
        meta.dll_characteristics / 2**16,
        meta.entry_point_rva / 2**32,
        math.log2(1 + meta.image_base),
        meta.exports_count / 256,
        len(meta.imports) / 1024,
        1.0,
        len(meta.parse_warnings) / 16,
        0.0,
        0.0,
    ], dtype=np.float64)


def extract(bin: RawBinary, layout: FeatureLayout | None = None) -> FeatureVector:
    """Map raw bytes to the fixed-layout feature vector.

    Segment order: byte histogram (256), byte/entropy histogram (256),
    string statistics (5), header scalars (16), section-entropy hash
    buckets (32), import-name hash buckets (64). Structural segments are
    zero whenever the input is not a parseable PE image. Deterministic:
    identical bytes produce bit-identical vectors.
    """
    if layout is None:
        layout = default_layout()
    reference = default_layout()
    if layout.total_dim != reference.total_dim or layout.segments != reference.segments:
        raise LayoutError(
            f"layout {layout.layout_id!r} does not match the extractor segment contract"
        )

    values = np.zeros(layout.total_dim, dtype=np.float64)
    values[layout.segment_slice("byte_histogram")] = byte_histogram(bin.data)
    values[layout.segment_slice("byte_entropy_histogram")] = byte_entropy_histogram(bin.data)
    values[layout.segment_slice("strings")] = _string_features(bin.data)

    meta = parse_pe(bin)
    if meta.is_pe:
        values[layout.segment_slice("header")] = _header_features(meta, len(bin.data))
        sections = np.zeros(SECTION_BUCKETS, dtype=np.float64)
        for sec in meta.sections:
            sections[fnv1a64(sec.name) % SECTION_BUCKETS] += sec.shannon_entropy / 8.0
        values[layout.segment_slice("sections")] = sections
        imports = np.zeros(IMPORT_BUCKETS, dtype=np.float64)
        for dll, func in meta.imports:
            imports[fnv1a64(f"{dll}:{func}".lower()) % IMPORT_BUCKETS] += 1.0
        imports /= 1.0 + len(meta.imports)
        values[layout.segment_slice("imports")] = imports

    return FeatureVector(values=values, layout_id=layout.layout_id, source_id=bin.source_id)
