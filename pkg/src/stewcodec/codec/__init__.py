from .bits import BitReader, BitstreamError, BitWriter
from .minicodec import (
    VIRTUAL,
    BlockMode,
    CodecConfig,
    Dpb,
    FramePayload,
    RefEntry,
    coding_order,
    decode_frame,
    derive_rpls,
    encode_frame,
    parse_payload,
)
