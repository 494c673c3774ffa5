"""Writes the CMLT fixtures used by the C++ tests, independently of the C++ writer."""
import json
import struct
import zlib
from pathlib import Path


def cmlt(shape, values, meta, dtype="f32"):
    code, fmt = (1, "<f") if dtype == "f32" else (2, "<d")
    meta_bytes = json.dumps(meta, separators=(",", ":")).encode()
    body = b"CMLT" + struct.pack("<HBB", 1, code, len(shape))
    body += b"".join(struct.pack("<Q", d) for d in shape)
    body += struct.pack("<I", len(meta_bytes)) + meta_bytes
    body += b"".join(struct.pack(fmt, v) for v in values)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


here = Path(__file__).parent
emb = here / "embeddings" / "toyset" / "whisper-base"
emb.mkdir(parents=True, exist_ok=True)
(emb / "clip_007.cmlt").write_bytes(
    cmlt([2, 3], [0.5, -1.0, 2.25, 3.0, 0.125, -0.75],
         {"clip_id": "clip_007", "source_tag": "whisper-base", "layer": "encoder_output"}))
(here / "pooled_f64.cmlt").write_bytes(
    cmlt([3], [1.75, -0.5, 0.1], {"clip_id": "clip_007", "source_tag": "whisper-base"}, dtype="f64"))
