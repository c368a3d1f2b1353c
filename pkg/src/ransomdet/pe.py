"""Static PE header features and the rule-based baseline classifier.

Only the DOS header, COFF header, optional header and data directory table
are read. Section contents, imports by name and overlays are ignored.
"""
from __future__ import annotations

import re
import struct
from dataclasses import asdict, dataclass, fields

from .dataset import FeatureSchema, Sample, default_schema
from .errors import NotAnExecutable, TruncatedHeader, UnknownOptionalHeaderMagic, UnmappedColumn

PE32_MAGIC = 0x10B
PE32_PLUS_MAGIC = 0x20B

DIR_EXPORT = 0
DIR_RESOURCE = 2
DIR_DEBUG = 6
DIR_IAT = 12

DEFAULT_IAT_THRESHOLD = 2**28
SAMPLE_BITCOIN_ADDRESS = b"1BvBMSEYstWetqTFn5Au4m4GFg7xJaNVN2"

_BASE58 = rb"1-9A-HJ-NP-Za-km-z"
BITCOIN_RE = re.compile(
    rb"(?<![" + _BASE58 + rb"])[13][" + _BASE58 + rb"]{25,34}(?![" + _BASE58 + rb"])"
)


@dataclass(frozen=True)
class PeHeaderSummary:
    machine: int = 0
    number_of_sections: int = 1
    major_linker_version: int = 0
    minor_linker_version: int = 0
    major_image_version: int = 0
    major_os_version: int = 0
    size_of_stack_reserve: int = 0
    dll_characteristics: int = 0
    export_rva: int = 0
    export_size: int = 0
    debug_rva: int = 0
    debug_size: int = 0
    iat_rva: int = 0
    resource_size: int = 0
    bitcoin_address_count: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


SUMMARY_FIELDS = tuple(f.name for f in fields(PeHeaderSummary))

# Kaggle column name -> summary field. Schemas may also use the field names directly.
COLUMN_TO_FIELD = {
    "Machine": "machine",
    "NumberOfSections": "number_of_sections",
    "MajorLinkerVersion": "major_linker_version",
    "MinorLinkerVersion": "minor_linker_version",
    "MajorImageVersion": "major_image_version",
    "MajorOSVersion": "major_os_version",
    "SizeOfStackReserve": "size_of_stack_reserve",
    "DllCharacteristics": "dll_characteristics",
    "ExportRVA": "export_rva",
    "ExportSize": "export_size",
    "DebugRVA": "debug_rva",
    "DebugSize": "debug_size",
    "IatVRA": "iat_rva",
    "IatRVA": "iat_rva",
    "ResourceSize": "resource_size",
    "BitcoinAddresses": "bitcoin_address_count",
}


def _unpack(fmt: str, data: bytes, offset: int, what: str):
    size = struct.calcsize(fmt)
    if offset < 0 or offset + size > len(data):
        raise TruncatedHeader(f"{what} at offset {offset} runs past end of input ({len(data)} bytes)")
    return struct.unpack_from(fmt, data, offset)


def parse_pe(data: bytes, count_bitcoin: bool = True) -> PeHeaderSummary:
    """Parse the headers of a PE image held in memory."""
    data = bytes(data)
    if len(data) < 64:
        raise TruncatedHeader(f"input is {len(data)} bytes, a DOS header needs 64")
    if data[:2] != b"MZ":
        raise NotAnExecutable("missing MZ signature")
    (e_lfanew,) = _unpack("<I", data, 0x3C, "e_lfanew")
    (sig,) = _unpack("<4s", data, e_lfanew, "PE signature")
    if sig != b"PE\0\0":
        raise NotAnExecutable("missing PE signature")

    coff = e_lfanew + 4
    machine, n_sections, _, _, _, _opt_size, _chars = _unpack("<HHIIIHH", data, coff, "COFF header")
    if n_sections < 1:
        raise NotAnExecutable("image declares zero sections")

    opt = coff + 20
    (magic,) = _unpack("<H", data, opt, "optional header magic")
    if magic == PE32_MAGIC:
        stack_fmt, n_dirs_off, dirs_off = "<I", 92, 96
    elif magic == PE32_PLUS_MAGIC:
        stack_fmt, n_dirs_off, dirs_off = "<Q", 108, 112
    else:
        raise UnknownOptionalHeaderMagic(f"optional header magic 0x{magic:04x}")

    link_major, link_minor = _unpack("<BB", data, opt + 2, "linker version")
    (os_major,) = _unpack("<H", data, opt + 40, "OS version")
    (image_major,) = _unpack("<H", data, opt + 44, "image version")
    (dll_chars,) = _unpack("<H", data, opt + 70, "DllCharacteristics")
    (stack_reserve,) = _unpack(stack_fmt, data, opt + 72, "SizeOfStackReserve")
    (n_dirs,) = _unpack("<I", data, opt + n_dirs_off, "NumberOfRvaAndSizes")
    n_dirs = min(n_dirs, 16)

    dirs = {}
    for i in range(n_dirs):
        dirs[i] = _unpack("<II", data, opt + dirs_off + 8 * i, f"data directory {i}")

    def entry(i):
        return dirs.get(i, (0, 0))

    export_rva, export_size = entry(DIR_EXPORT)
    debug_rva, debug_size = entry(DIR_DEBUG)
    return PeHeaderSummary(
        machine=machine,
        number_of_sections=n_sections,
        major_linker_version=link_major,
        minor_linker_version=link_minor,
        major_image_version=image_major,
        major_os_version=os_major,
        size_of_stack_reserve=stack_reserve,
        dll_characteristics=dll_chars,
        export_rva=export_rva,
        export_size=export_size,
        debug_rva=debug_rva,
        debug_size=debug_size,
        iat_rva=entry(DIR_IAT)[0],
        resource_size=entry(DIR_RESOURCE)[1],
        bitcoin_address_count=count_bitcoin_addresses(data) if count_bitcoin else 0,
    )


def assemble_pe(
    summary: PeHeaderSummary,
    bits: int = 64,
    n_dirs: int = 16,
    e_lfanew: int = 0x80,
    payload: bytes = b"",
) -> bytes:
    """Build a minimal header-only PE image that ``parse_pe`` maps back to ``summary``.

    ``summary.bitcoin_address_count`` copies of a sample address are appended
    after the headers, followed by ``payload``. Directory entries other than
    export/resource/debug/IAT stay zero, and entries at or beyond ``n_dirs``
    are not written at all.
    """
    if bits not in (32, 64):
        raise ValueError("bits must be 32 or 64")
    s = summary
    dos = bytearray(64)
    dos[0:2] = b"MZ"
    struct.pack_into("<I", dos, 0x3C, e_lfanew)
    head = bytes(dos) + bytes(max(0, e_lfanew - 64))

    if bits == 32:
        opt = bytearray(96 + 8 * n_dirs)
        struct.pack_into("<H", opt, 0, PE32_MAGIC)
        struct.pack_into("<I", opt, 72, s.size_of_stack_reserve)
        struct.pack_into("<I", opt, 92, n_dirs)
        dirs_off = 96
    else:
        opt = bytearray(112 + 8 * n_dirs)
        struct.pack_into("<H", opt, 0, PE32_PLUS_MAGIC)
        struct.pack_into("<Q", opt, 72, s.size_of_stack_reserve)
        struct.pack_into("<I", opt, 108, n_dirs)
        dirs_off = 112
    struct.pack_into("<BB", opt, 2, s.major_linker_version, s.minor_linker_version)
    struct.pack_into("<H", opt, 40, s.major_os_version)
    struct.pack_into("<H", opt, 44, s.major_image_version)
    struct.pack_into("<H", opt, 70, s.dll_characteristics)
    entries = {
        DIR_EXPORT: (s.export_rva, s.export_size),
        DIR_RESOURCE: (0x3000 if s.resource_size else 0, s.resource_size),
        DIR_DEBUG: (s.debug_rva, s.debug_size),
        DIR_IAT: (s.iat_rva, 0x100 if s.iat_rva else 0),
    }
    for i, (rva, size) in entries.items():
        if i < n_dirs:
            struct.pack_into("<II", opt, dirs_off + 8 * i, rva, size)

    coff = struct.pack("<HHIIIHH", s.machine, s.number_of_sections, 0, 0, 0, len(opt), 0x0102)
    planted = b"".join(b"\0" + SAMPLE_BITCOIN_ADDRESS for _ in range(s.bitcoin_address_count))
    return head + b"PE\0\0" + coff + bytes(opt) + planted + payload


def count_bitcoin_addresses(data: bytes) -> int:
    """Count Base58 runs that look like legacy/P2SH Bitcoin addresses.

    A match must not be embedded in a longer Base58 run.
    """
    return sum(1 for _ in BITCOIN_RE.finditer(bytes(data)))


def field_for_column(name: str) -> str:
    if name in COLUMN_TO_FIELD:
        return COLUMN_TO_FIELD[name]
    if name in SUMMARY_FIELDS:
        return name
    raise UnmappedColumn(name)


def to_feature_vector(summary: PeHeaderSummary, schema: FeatureSchema | None = None) -> Sample:
    schema = schema or default_schema()
    values = summary.as_dict()
    return Sample(tuple(float(values[field_for_column(n)]) for n in schema.feature_names))


@dataclass(frozen=True)
class HeuristicVerdict:
    label: str
    fired_rules: tuple[str, ...]

    @property
    def label_code(self) -> int:
        return 0 if self.label == "malware" else 1


RULES = (
    "major_image_version_zero",
    "export_and_debug_size_zero",
    "iat_rva_zero",
    "iat_rva_very_large",
    "resource_size_zero",
)


def table1_heuristic(
    features: Sample,
    schema: FeatureSchema | None = None,
    iat_threshold: float = DEFAULT_IAT_THRESHOLD,
) -> HeuristicVerdict:
    """Flag a sample as malware if any of the header patterns seen in malware matches."""
    schema = schema or default_schema()
    by_field = {}
    for name, value in zip(schema.feature_names, features.features):
        try:
            by_field[field_for_column(name)] = value
        except UnmappedColumn:
            continue

    def get(f):
        if f not in by_field:
            raise UnmappedColumn(f)
        return by_field[f]

    fired = []
    if get("major_image_version") == 0:
        fired.append("major_image_version_zero")
    if get("export_size") == 0 and get("debug_size") == 0:
        fired.append("export_and_debug_size_zero")
    iat = get("iat_rva")
    if iat == 0:
        fired.append("iat_rva_zero")
    elif iat > iat_threshold:
        fired.append("iat_rva_very_large")
    if get("resource_size") == 0:
        fired.append("resource_size_zero")
    return HeuristicVerdict("malware" if fired else "legitimate", tuple(fired))
