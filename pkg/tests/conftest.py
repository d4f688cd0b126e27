"""Shared fixtures: a byte-level PE image builder and small datasets."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import pytest

from smoothcert import SplitSpec, SynthSpec, make_partition, stratified_split, synth_generate

FILE_ALIGN = 0x200
SECT_ALIGN = 0x1000


@dataclass
class SectionSpec:
    name: str
    body: bytes = b""
    characteristics: int = 0x60000020  # code | execute | read
    virtual_size: int | None = None


@dataclass
class ImportSpec:
    dll: str
    functions: list[str] = field(default_factory=list)
    ordinals: list[int] = field(default_factory=list)


def _align(x: int, a: int) -> int:
    return (x + a - 1) // a * a


def build_pe(sections: list[SectionSpec] | None = None,
             imports: list[ImportSpec] | None = None,
             exports_count: int | None = None,
             pe32_plus: bool = True,
             machine: int = 0x8664,
             timestamp: int = 0x5F000000,
             entry_point: int = 0x1000,
             image_base: int = 0x140000000,
             subsystem: int = 2,
             dll_characteristics: int = 0x8160,
             size_of_code: int = 0x200,
             e_lfanew: int | None = None) -> bytes:
    """Assemble a structurally valid PE image byte by byte.

    Optional import/export tables are materialized into synthetic
    sections so the directory RVAs resolve through the section table.
    """
    sections = list(sections) if sections is not None else [SectionSpec(".text", b"\x90" * 64)]

    # lay out section virtual addresses and raw offsets
    n_placeholder = len(sections) + (1 if imports else 0) + (1 if exports_count is not None else 0)
    opt_size = 240 if pe32_plus else 224
    headers_size = _align(64 + 4 + 20 + opt_size + 40 * n_placeholder, FILE_ALIGN)

    import_rva = export_rva = 0
    import_size = export_size = 0

    # virtual layout first, so import thunks can reference their own rva
    vaddr = SECT_ALIGN
    placed = []
    for spec in sections:
        placed.append([spec, vaddr, None])
        vaddr = _align(vaddr + max(len(spec.body), spec.virtual_size or 1, 1), SECT_ALIGN)

    if imports is not None:
        import_rva = vaddr
        body = _build_import_section(imports, import_rva, pe32_plus)
        import_size = len(body)
        placed.append([SectionSpec(".idata", body, 0xC0000040), vaddr, None])
        vaddr = _align(vaddr + len(body), SECT_ALIGN)

    if exports_count is not None:
        export_rva = vaddr
        body = bytearray(40)
        struct.pack_into("<I", body, 20, exports_count)  # NumberOfFunctions
        placed.append([SectionSpec(".edata", bytes(body), 0x40000040), vaddr, None])
        vaddr = _align(vaddr + 40, SECT_ALIGN)

    raw_off = headers_size
    for entry in placed:
        entry[2] = raw_off
        raw_off = _align(raw_off + len(entry[0].body), FILE_ALIGN) if entry[0].body else raw_off

    blob = bytearray(raw_off)

    # DOS header
    blob[0:2] = b"MZ"
    lfanew = 64 if e_lfanew is None else e_lfanew
    struct.pack_into("<I", blob, 0x3C, lfanew)
    if e_lfanew is not None and (e_lfanew + 4 > len(blob)):
        return bytes(blob)  # deliberately broken image

    # NT signature + COFF header
    blob[64:68] = b"PE\x00\x00"
    struct.pack_into("<HHIIIHH", blob, 68, machine, len(placed), timestamp,
                     0, 0, opt_size, 0x0022)

    opt = 88
    struct.pack_into("<H", blob, opt, 0x20B if pe32_plus else 0x10B)
    struct.pack_into("<I", blob, opt + 4, size_of_code)
    struct.pack_into("<I", blob, opt + 16, entry_point)
    if pe32_plus:
        struct.pack_into("<Q", blob, opt + 24, image_base)
    else:
        struct.pack_into("<I", blob, opt + 28, image_base)
    struct.pack_into("<I", blob, opt + 36, FILE_ALIGN)
    struct.pack_into("<I", blob, opt + 32, SECT_ALIGN)
    struct.pack_into("<I", blob, opt + 56, vaddr)          # SizeOfImage
    struct.pack_into("<I", blob, opt + 60, headers_size)   # SizeOfHeaders
    struct.pack_into("<H", blob, opt + 68, subsystem)
    struct.pack_into("<H", blob, opt + 70, dll_characteristics)
    ndirs_off = opt + (108 if pe32_plus else 92)
    struct.pack_into("<I", blob, ndirs_off, 16)
    dirs = ndirs_off + 4
    if exports_count is not None:
        struct.pack_into("<II", blob, dirs, export_rva, export_size or 40)
    if imports is not None:
        struct.pack_into("<II", blob, dirs + 8, import_rva, import_size)

    sect_off = opt + opt_size
    for i, (spec, va, ro) in enumerate(placed):
        off = sect_off + i * 40
        blob[off:off + 8] = spec.name.encode("ascii")[:8].ljust(8, b"\x00")
        struct.pack_into("<I", blob, off + 8, spec.virtual_size or max(len(spec.body), 1))
        struct.pack_into("<I", blob, off + 12, va)
        struct.pack_into("<I", blob, off + 16, len(spec.body))
        struct.pack_into("<I", blob, off + 20, ro if spec.body else 0)
        struct.pack_into("<I", blob, off + 36, spec.characteristics)
        blob[ro:ro + len(spec.body)] = spec.body

    return bytes(blob)


def _build_import_section(imports: list[ImportSpec], base_rva: int, pe32_plus: bool) -> bytes:
    """Descriptor array, thunk arrays, then hint/name and dll-name strings."""
    entry_size = 8 if pe32_plus else 4
    ordinal_flag = 1 << (entry_size * 8 - 1)
    n = len(imports)
    desc_bytes = 20 * (n + 1)

    thunks_off = desc_bytes
    thunk_offsets = []
    off = thunks_off
    for imp in imports:
        thunk_offsets.append(off)
        off += entry_size * (len(imp.functions) + len(imp.ordinals) + 1)
    strings_off = off

    strings = bytearray()
    hint_name_rvas: list[list[int]] = []
    dll_name_rvas = []
    for imp in imports:
        rvas = []
        for func in imp.functions:
            rvas.append(base_rva + strings_off + len(strings))
            strings += b"\x00\x00" + func.encode("ascii") + b"\x00"
        hint_name_rvas.append(rvas)
        dll_name_rvas.append(base_rva + strings_off + len(strings))
        strings += imp.dll.encode("ascii") + b"\x00"

    body = bytearray(strings_off) + strings
    for i, imp in enumerate(imports):
        struct.pack_into("<IIIII", body, i * 20,
                         base_rva + thunk_offsets[i], 0, 0,
                         dll_name_rvas[i], base_rva + thunk_offsets[i])
        pos = thunk_offsets[i]
        fmt = "<Q" if pe32_plus else "<I"
        for rva in hint_name_rvas[i]:
            struct.pack_into(fmt, body, pos, rva)
            pos += entry_size
        for ordinal in imp.ordinals:
            struct.pack_into(fmt, body, pos, ordinal_flag | ordinal)
            pos += entry_size
    return bytes(body)


@pytest.fixture(scope="session")
def minimal_pe() -> bytes:
    return build_pe(sections=[SectionSpec(".text", b"\x90\xC3" * 32)])


@pytest.fixture(scope="session")
def small_synth():
    """Separable 40-dim dataset with an 80/20 split, shared across tests."""
    partition = make_partition(40, 10)
    ds = synth_generate(SynthSpec(n_per_class=300, dim=40, signal_strength=3.0, seed=11),
                        partition)
    train, test = stratified_split(ds, SplitSpec(seed=3))
    return partition, ds, train, test
