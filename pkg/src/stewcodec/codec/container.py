"""``SMC1`` bitstream container: fixed header, then length-prefixed records in coding order."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .bits import BitstreamError

MAGIC = b"SMC"
VERSION = b"1"
_HEADER = struct.Struct("<4sHHIBHB")

FLAG_RFS = 1
FLAG_PFE = 2
FLAG_JISE = 4


class MagicError(BitstreamError):
    pass


class VersionError(BitstreamError):
    pass


@dataclass(frozen=True)
class ContainerHeader:
    width: int
    height: int
    frame_count: int
    qp: int
    intra_period: int
    flags: int

    @property
    def rfs(self) -> bool:
        return bool(self.flags & FLAG_RFS)

    @property
    def pfe(self) -> bool:
        return bool(self.flags & FLAG_PFE)

    @property
    def jise(self) -> bool:
        return bool(self.flags & FLAG_JISE)


def write_container(header: ContainerHeader, records: list[bytes]) -> bytes:
    out = [_HEADER.pack(MAGIC + VERSION, header.width, header.height, header.frame_count,
                        header.qp, header.intra_period, header.flags)]
    for rec in records:
        out.append(struct.pack("<I", len(rec)))
        out.append(rec)
    return b"".join(out)


def read_container(data: bytes) -> tuple[ContainerHeader, list[bytes]]:
    data = bytes(data)
    if len(data) < 4 or data[:3] != MAGIC:
        raise MagicError("not an SMC bitstream (bad magic)")
    if data[3:4] != VERSION:
        raise VersionError(f"unsupported SMC version {data[3:4]!r}")
    if len(data) < _HEADER.size:
        raise BitstreamError("truncated container header")
    _, w, h, count, qp, intra_period, flags = _HEADER.unpack_from(data)
    if flags & ~(FLAG_RFS | FLAG_PFE | FLAG_JISE):
        raise BitstreamError(f"reserved flag bits set: {flags:#04x}")
    if qp > 51 or intra_period == 0 or intra_period % 8:
        raise BitstreamError("invalid coding parameters in header")
    header = ContainerHeader(w, h, count, qp, intra_period, flags)
    records = []
    pos = _HEADER.size
    while pos < len(data):
        if pos + 4 > len(data):
            raise BitstreamError("truncated record length")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise BitstreamError("truncated record")
        records.append(data[pos:pos + n])
        pos += n
    if len(records) != count:
        raise BitstreamError(f"header announces {count} frames, found {len(records)} records")
    return header, records
