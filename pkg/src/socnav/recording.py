"""Binary episode-trace files: length-prefixed records plus a checksum trailer.

Layout: magic, version, then framed records (u32 little-endian length +
payload). Record 0 is a JSON metadata blob; the following records are packed
tick states; the final framed record is a JSON events blob. A sentinel length
0xFFFFFFFF followed by the SHA-256 of every framed byte closes the file. The
digest doubles as the trajectory hash used by the determinism checks.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import TraceCorrupt
from .metrics import EpisodeTrace

MAGIC = b"SNVT"
VERSION = 1
_SENTINEL = 0xFFFFFFFF


def _tick_bytes(trace, k):
    n = trace.agents_xy.shape[1]
    head = struct.pack("<10d", trace.times[k], *trace.robot_poses[k],
                       *trace.robot_vels[k], trace.robot_omegas[k],
                       *trace.robot_cmds[k])
    if n:
        body = trace.agents_xy[k].astype("<f8").tobytes() \
            + trace.agents_vel[k].astype("<f8").tobytes() \
            + trace.agents_state[k].astype("<i8").tobytes()
    else:
        body = b""
    return head + body


def _frame(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def serialize_trace(trace: EpisodeTrace) -> bytes:
    meta = {
        "dt": trace.dt,
        "agent_ids": [int(i) for i in trace.agent_ids],
        "meta": _jsonable(trace.meta),
        "ticks": int(trace.ticks),
    }
    chunks = [_frame(json.dumps(meta, sort_keys=True).encode())]
    for k in range(trace.ticks):
        chunks.append(_frame(_tick_bytes(trace, k)))
    events = {
        "collisions": [[int(t), str(kind), int(other)]
                       for t, kind, other in trace.collision_events],
        "events": [[int(t), str(s)] for t, s in trace.events],
    }
    chunks.append(_frame(json.dumps(events, sort_keys=True).encode()))
    return b"".join(chunks)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def trace_digest(trace: EpisodeTrace) -> str:
    """Trajectory hash: SHA-256 over the serialized record stream."""
    return hashlib.sha256(serialize_trace(trace)).hexdigest()


def write_trace(path, trace: EpisodeTrace) -> str:
    body = serialize_trace(trace)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(body)
        fh.write(struct.pack("<I", _SENTINEL))
        fh.write(digest)
    return digest.hex()


def read_trace(path) -> EpisodeTrace:
    """Parse and checksum-verify a trace file. Raises TraceCorrupt."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise TraceCorrupt(f"{path}: bad magic")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != VERSION:
        raise TraceCorrupt(f"{path}: unsupported version {version}")
    if len(blob) < 8 + 4 + 32:
        raise TraceCorrupt(f"{path}: truncated file")
    body = blob[8:-36]
    sentinel = struct.unpack_from("<I", blob, len(blob) - 36)[0]
    if sentinel != _SENTINEL:
        raise TraceCorrupt(f"{path}: missing trailer sentinel")
    digest = blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise TraceCorrupt(f"{path}: checksum mismatch")

    records = []
    offset = 0
    while offset < len(body):
        if offset + 4 > len(body):
            raise TraceCorrupt(f"{path}: truncated record frame")
        length = struct.unpack_from("<I", body, offset)[0]
        offset += 4
        if offset + length > len(body):
            raise TraceCorrupt(f"{path}: record overruns file")
        records.append(body[offset:offset + length])
        offset += length
    if len(records) < 2:
        raise TraceCorrupt(f"{path}: too few records")
    meta = json.loads(records[0])
    events = json.loads(records[-1])
    ticks = meta["ticks"]
    if len(records) != ticks + 2:
        raise TraceCorrupt(f"{path}: tick count mismatch")
    agent_ids = np.array(meta["agent_ids"], dtype=int)
    n = len(agent_ids)
    T = ticks
    times = np.empty(T)
    poses = np.empty((T, 3))
    vels = np.empty((T, 2))
    omegas = np.empty(T)
    cmds = np.empty((T, 3))
    axy = np.empty((T, n, 2))
    avel = np.empty((T, n, 2))
    astate = np.empty((T, n), dtype=np.int64)
    head_size = 10 * 8
    for k in range(T):
        payload = records[1 + k]
        expected = head_size + n * (2 * 8 + 2 * 8 + 8)
        if len(payload) != expected:
            raise TraceCorrupt(f"{path}: tick {k} has wrong size")
        head = struct.unpack_from("<10d", payload, 0)
        times[k] = head[0]
        poses[k] = head[1:4]
        vels[k] = head[4:6]
        omegas[k] = head[6]
        cmds[k] = head[7:10]
        if n:
            off = head_size
            axy[k] = np.frombuffer(payload, "<f8", n * 2, off).reshape(n, 2)
            off += n * 16
            avel[k] = np.frombuffer(payload, "<f8", n * 2, off).reshape(n, 2)
            off += n * 16
            astate[k] = np.frombuffer(payload, "<i8", n, off)
    return EpisodeTrace(meta["dt"], times, poses, vels, omegas, cmds,
                        agent_ids, axy, avel, astate,
                        [(int(t), str(kind), int(o))
                         for t, kind, o in events["collisions"]],
                        [(int(t), str(s)) for t, s in events["events"]],
                        meta["meta"])
