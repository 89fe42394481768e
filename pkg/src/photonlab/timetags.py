"""QTT1 time-tag files: in-memory dataset, binary writer and streaming parser.

Layout (all little-endian)::

    header, 80 bytes
      0  4s   magic "QTT1"
      4  u16  version (1)
      6  u8   run kind (0 input_only, 1 storage, 2 noise_only)
      7  u8   zero pad
      8  u64  trial period [ps]
     16  u64  number of records
     24  u64  number of trials
     32  32s  configuration hash
     64  16s  reserved, zero
    records, 16 bytes each
      0  u64  timestamp [ps] from run start
      8  u32  trial index
     12  u8   channel (0 trigger, 1 D1, 2 D2)
     13  3s   zero pad

Records are stored in timestamp order. A lossless CSV mirror (comment
header lines followed by ``trial_index,channel,timestamp_ps``) is used
when the path ends in ``.csv``.
"""
from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

import numpy as np

from .errors import PhotonLabError

MAGIC = b"QTT1"
VERSION = 1
HEADER = struct.Struct("<4sHBxQQQ32s16s")
HEADER_SIZE = HEADER.size
RECORD_SIZE = 16
RECORD_DTYPE = np.dtype([
    ("timestamp_ps", "<u8"),
    ("trial_index", "<u4"),
    ("channel", "u1"),
    ("pad", "V3"),
])
assert HEADER_SIZE == 80 and RECORD_DTYPE.itemsize == RECORD_SIZE

TRIGGER, D1, D2 = 0, 1, 2
RUN_KINDS = {"input_only": 0, "storage": 1, "noise_only": 2}
RUN_KIND_NAMES = {v: k for k, v in RUN_KINDS.items()}
DEFAULT_BATCH = 1 << 16


class TagFormatError(PhotonLabError):
    """Malformed QTT1 stream; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(TagFormatError):
    pass


class VersionError(TagFormatError):
    pass


class RunKindError(TagFormatError):
    pass


class ReservedBytesError(TagFormatError):
    pass


class TruncatedError(TagFormatError):
    pass


class ChannelError(TagFormatError):
    pass


class NonMonotoneError(TagFormatError):
    pass


class TrialIndexError(TagFormatError):
    pass


class TrailingDataError(TagFormatError):
    pass


class DatasetInvariantError(PhotonLabError, ValueError):
    pass


@dataclass
class TimeTagDataset:
    records: np.ndarray
    kind: str
    n_trials: int
    trial_period_ps: int
    config_hash: bytes = bytes(32)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.records.dtype != RECORD_DTYPE:
            self.records = np.asarray(self.records).astype(RECORD_DTYPE)
        if self.kind not in RUN_KINDS:
            raise DatasetInvariantError(f"unknown run kind {self.kind!r}")
        if len(self.config_hash) != 32:
            raise DatasetInvariantError("config hash must be 32 bytes")

    def __len__(self):
        return len(self.records)

    @property
    def timestamps(self) -> np.ndarray:
        return self.records["timestamp_ps"]

    @property
    def channels(self) -> np.ndarray:
        return self.records["channel"]

    @property
    def trials(self) -> np.ndarray:
        return self.records["trial_index"]

    def trigger_times(self) -> np.ndarray:
        return self.timestamps[self.channels == TRIGGER]

    def clicks(self) -> np.ndarray:
        """Detector records only."""
        return self.records[self.channels != TRIGGER]

    def click_offsets(self):
        """(trial, channel, offset from own trigger in ps) of every click."""
        clicks = self.clicks()
        trig = self.trigger_times()
        trial = clicks["trial_index"].astype(np.int64)
        offsets = clicks["timestamp_ps"].astype(np.int64) - trig[trial].astype(np.int64)
        return trial, clicks["channel"], offsets

    def validate(self):
        """Raise :class:`DatasetInvariantError` if the dataset could not be
        written as a valid QTT1 stream."""
        try:
            _check_records(self.records, _ParseState(), HEADER_SIZE)
        except TagFormatError as exc:
            raise DatasetInvariantError(str(exc)) from None
        n_trig = int(np.count_nonzero(self.channels == TRIGGER))
        if n_trig != self.n_trials:
            raise DatasetInvariantError(f"{n_trig} trigger records for {self.n_trials} trials")
        if np.any(np.diff(self.timestamps.astype(np.int64)) < 0):
            raise DatasetInvariantError("records are not in timestamp order")
        if self.n_trials:
            trial, _, offs = self.click_offsets()
            if offs.size and (offs.min() < 0 or offs.max() >= self.trial_period_ps):
                raise DatasetInvariantError("click outside [0, trial_period) of its trigger")


def make_records(timestamps, trials, channels) -> np.ndarray:
    rec = np.zeros(len(timestamps), dtype=RECORD_DTYPE)
    rec["timestamp_ps"] = timestamps
    rec["trial_index"] = trials
    rec["channel"] = channels
    return rec


def _header_bytes(ds: TimeTagDataset) -> bytes:
    return HEADER.pack(MAGIC, VERSION, RUN_KINDS[ds.kind], int(ds.trial_period_ps),
                       len(ds.records), int(ds.n_trials), bytes(ds.config_hash), bytes(16))


def write_tags(dataset: TimeTagDataset, destination) -> int:
    """Serialize ``dataset``; returns the number of bytes written.

    ``destination`` is a path (``.csv`` selects the CSV mirror) or a
    binary file object.
    """
    dataset.validate()
    if isinstance(destination, (str, os.PathLike)):
        if os.fspath(destination).endswith(".csv"):
            with open(destination, "w", newline="") as fh:
                return _write_csv(dataset, fh)
        with open(destination, "wb") as fh:
            return _write_binary(dataset, fh)
    return _write_binary(dataset, destination)


def _write_binary(ds: TimeTagDataset, fh: BinaryIO) -> int:
    n = fh.write(_header_bytes(ds))
    rec = np.ascontiguousarray(ds.records)
    step = DEFAULT_BATCH * 16
    for i in range(0, len(rec), step):
        n += fh.write(rec[i:i + step].tobytes())
    return n


def _write_csv(ds: TimeTagDataset, fh) -> int:
    buf = io.StringIO()
    buf.write(f"# format=QTT1-csv version={VERSION}\n")
    buf.write(f"# run_kind={ds.kind}\n")
    buf.write(f"# trial_period_ps={ds.trial_period_ps}\n")
    buf.write(f"# n_trials={ds.n_trials}\n")
    buf.write(f"# config_hash={bytes(ds.config_hash).hex()}\n")
    buf.write("trial_index,channel,timestamp_ps\n")
    rec = ds.records
    np.savetxt(buf, np.column_stack([rec["trial_index"], rec["channel"], rec["timestamp_ps"]]).astype(np.uint64),
               fmt="%d", delimiter=",")
    text = buf.getvalue()
    fh.write(text)
    return len(text.encode())


# ---------------------------------------------------------------------------
# parsing


@dataclass
class _ParseState:
    last_ts: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.uint64))
    seen: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=bool))
    triggers: int = 0
    index: int = 0  # global record index of the next record


def _check_records(rec: np.ndarray, st: _ParseState, header_size: int):
    """Validate one batch against the running state; advances ``st``."""
    n = len(rec)
    if n == 0:
        return
    bad = np.full(n, 5, dtype=np.int8)  # 5 = ok; lower = which check failed first
    ts = rec["timestamp_ps"]
    ch = rec["channel"]
    pad = np.frombuffer(rec["pad"].tobytes(), dtype=np.uint8).reshape(n, 3)

    ch_bad = ch > 2
    pad_bad = pad.any(axis=1)

    mono_bad = np.zeros(n, dtype=bool)
    for c in range(3):
        idx = np.nonzero(ch == c)[0]
        if idx.size == 0:
            continue
        prev = np.empty(idx.size, dtype=np.uint64)
        prev[1:] = ts[idx[:-1]]
        prev[0] = st.last_ts[c] if st.seen[c] else 0
        mono_bad[idx] = ts[idx] < prev

    is_trig = ch == TRIGGER
    trig_count = st.triggers + np.cumsum(is_trig)
    expected = trig_count.astype(np.int64) - 1
    trial_bad = (rec["trial_index"].astype(np.int64) != expected) | (expected < 0)

    for code, mask in ((1, ch_bad), (2, pad_bad), (3, mono_bad), (4, trial_bad)):
        bad = np.where(mask & (bad > code), code, bad)
    faulty = np.nonzero(bad < 5)[0]
    if faulty.size:
        i = int(faulty[0])
        offset = header_size + RECORD_SIZE * (st.index + i)
        code = int(bad[i])
        if code == 1:
            raise ChannelError(f"channel {int(ch[i])} out of range", offset)
        if code == 2:
            raise ReservedBytesError("non-zero record padding", offset)
        if code == 3:
            raise NonMonotoneError(f"timestamp decreases on channel {int(ch[i])}", offset)
        raise TrialIndexError(
            f"trial index {int(rec['trial_index'][i])} inconsistent with trigger order (expected {int(expected[i])})",
            offset)

    for c in range(3):
        idx = np.nonzero(ch == c)[0]
        if idx.size:
            st.last_ts[c] = ts[idx[-1]]
            st.seen[c] = True
    st.triggers = int(trig_count[-1])
    st.index += n


@dataclass
class TagHeader:
    kind: str
    trial_period_ps: int
    n_records: int
    n_trials: int
    config_hash: bytes


def _read_exact(fh, n: int) -> bytes:
    chunks = []
    while n > 0:
        b = fh.read(n)
        if not b:
            break
        chunks.append(b)
        n -= len(b)
    return b"".join(chunks)


def _parse_header(raw: bytes) -> TagHeader:
    if raw[:4] != MAGIC:
        if len(raw) < 4 and MAGIC.startswith(raw):
            raise TruncatedError("truncated header", len(raw))
        raise BadMagicError(f"bad magic {raw[:4]!r}", 0)
    if len(raw) < HEADER_SIZE:
        raise TruncatedError("truncated header", len(raw))
    magic, version, kind, period, n_rec, n_trials, chash, reserved = HEADER.unpack(raw)
    if version != VERSION:
        raise VersionError(f"unsupported version {version}", 4)
    if kind not in RUN_KIND_NAMES:
        raise RunKindError(f"unknown run kind {kind}", 6)
    if raw[7] != 0:
        raise ReservedBytesError("non-zero header pad", 7)
    if any(reserved):
        raise ReservedBytesError("non-zero reserved bytes", 64 + next(i for i, b in enumerate(reserved) if b))
    return TagHeader(RUN_KIND_NAMES[kind], period, n_rec, n_trials, chash)


def iter_tag_batches(fh: BinaryIO, batch_records: int = DEFAULT_BATCH) -> Iterator:
    """Yield the header, then validated record batches of at most
    ``batch_records`` records. Memory use is bounded by the batch size."""
    header = _parse_header(_read_exact(fh, HEADER_SIZE))
    yield header
    st = _ParseState()
    remaining = header.n_records
    while remaining:
        want = min(batch_records, remaining)
        raw = _read_exact(fh, want * RECORD_SIZE)
        full = len(raw) // RECORD_SIZE
        if full:
            batch = np.frombuffer(raw[:full * RECORD_SIZE], dtype=RECORD_DTYPE)
            _check_records(batch, st, HEADER_SIZE)
        if full < want:
            raise TruncatedError(f"stream ends inside record {st.index}", HEADER_SIZE + RECORD_SIZE * st.index)
        remaining -= full
        yield batch
    if st.triggers != header.n_trials:
        raise TrialIndexError(f"{st.triggers} trigger records but header declares {header.n_trials} trials",
                              HEADER_SIZE + RECORD_SIZE * header.n_records)
    if fh.read(1):
        raise TrailingDataError("unexpected bytes after the last declared record",
                                HEADER_SIZE + RECORD_SIZE * header.n_records)


def read_tags(source, batch_records: int = DEFAULT_BATCH) -> TimeTagDataset:
    """Parse a QTT1 file (or its CSV mirror) into a validated dataset."""
    if isinstance(source, (str, os.PathLike)):
        if os.fspath(source).endswith(".csv"):
            with open(source, newline="") as fh:
                return _read_csv(fh)
        with open(source, "rb") as fh:
            return read_tags(fh, batch_records)
    if isinstance(source, (bytes, bytearray, memoryview)):
        source = io.BytesIO(bytes(source))
    it = iter_tag_batches(source, batch_records)
    header = next(it)
    batches = [b for b in it]
    records = np.concatenate(batches) if batches else np.zeros(0, dtype=RECORD_DTYPE)
    return TimeTagDataset(records=records.copy(), kind=header.kind, n_trials=header.n_trials,
                          trial_period_ps=header.trial_period_ps, config_hash=header.config_hash)


def _read_csv(fh) -> TimeTagDataset:
    meta = {}
    header_row = None
    lines = []
    for line in fh:
        if line.startswith("#"):
            for item in line[1:].split():
                k, _, v = item.partition("=")
                meta[k] = v
        elif header_row is None:
            header_row = next(csv.reader([line]))
        else:
            lines.append(line)
    if header_row != ["trial_index", "channel", "timestamp_ps"]:
        raise TagFormatError(f"unexpected CSV columns {header_row}", 0)
    if lines:
        arr = np.loadtxt(io.StringIO("".join(lines)), delimiter=",", dtype=np.uint64, ndmin=2)
        records = make_records(arr[:, 2], arr[:, 0], arr[:, 1])
    else:
        records = np.zeros(0, dtype=RECORD_DTYPE)
    _check_records(records, _ParseState(), HEADER_SIZE)
    return TimeTagDataset(records=records, kind=meta["run_kind"], n_trials=int(meta["n_trials"]),
                          trial_period_ps=int(meta["trial_period_ps"]),
                          config_hash=bytes.fromhex(meta["config_hash"]))


def dataset_bytes(dataset: TimeTagDataset) -> bytes:
    buf = io.BytesIO()
    _write_binary(dataset, buf)
    return buf.getvalue()
