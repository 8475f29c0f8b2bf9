"""Workload sources: constant-cadence VoIP, looping video-trace replay, and a
seeded synthetic trace generator.

Trace file format: UTF-8 text, header line "#bwr-trace v1", then one record
per line as "offset_ms,bytes" with strictly increasing offsets. A trailing
"#duration_ms=<value>" line fixes the loop length; without it the loop length
is the last offset plus one frame gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import MS, PRIO_DATA, Rng, Simulator

TRACE_HEADER = "#bwr-trace v1"


class TrafficError(Exception):
    pass


@dataclass
class VideoTrace:
    records: list[tuple[int, int]]        # (offset_us, nbytes), offsets increasing
    duration: int                         # loop length, us

    def __post_init__(self):
        if not self.records:
            raise TrafficError("trace has no records")
        last = -1
        for off, nbytes in self.records:
            if off <= last:
                raise TrafficError(f"trace offsets must be strictly increasing (at {off})")
            if nbytes <= 0:
                raise TrafficError(f"trace record at {off} has non-positive size")
            last = off
        if self.duration <= last:
            raise TrafficError("trace duration must exceed the last offset")

    def total_bytes(self) -> int:
        return sum(b for _, b in self.records)

    def mean_bitrate_bps(self) -> float:
        return self.total_bytes() * 8 * 1_000_000 / self.duration


def write_trace(trace: VideoTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACE_HEADER + "\n")
        for off, nbytes in trace.records:
            fh.write(f"{off / 1000:.3f},{nbytes}\n")
        fh.write(f"#duration_ms={trace.duration / 1000:.3f}\n")


def read_trace(path: str) -> VideoTrace:
    records: list[tuple[int, int]] = []
    duration = None
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != TRACE_HEADER:
            raise TrafficError(f"{path}:1: expected header {TRACE_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#duration_ms="):
                duration = round(float(line.split("=", 1)[1]) * 1000)
                continue
            if line.startswith("#"):
                continue
            try:
                off_ms, nbytes = line.split(",")
                records.append((round(float(off_ms) * 1000), int(nbytes)))
            except ValueError as exc:
                raise TrafficError(f"{path}:{lineno}: bad record {line!r}") from exc
    if not records:
        raise TrafficError(f"{path}: no records")
    if duration is None:
        gap = records[-1][0] // max(1, len(records) - 1) if len(records) > 1 else MS
        duration = records[-1][0] + max(gap, 1)
    return VideoTrace(records, duration)


def synth_video(mean_bitrate_bps: float, frame_period: int, burstiness: float,
                seed: int, duration: int) -> VideoTrace:
    """Log-normal frame sizes around mean_bitrate*frame_period.

    burstiness is the coefficient of variation; the drawn sizes are rescaled
    so the realized mean bitrate matches the target before rounding.
    """
    if mean_bitrate_bps <= 0:
        raise TrafficError("mean bitrate must be positive")
    if frame_period <= 0 or duration < frame_period:
        raise TrafficError("duration must cover at least one frame period")
    if burstiness < 0:
        raise TrafficError("burstiness must be >= 0")
    rng = Rng(seed)
    n_frames = duration // frame_period
    mean_size = mean_bitrate_bps * frame_period / 8_000_000
    if burstiness == 0.0:
        sizes = [mean_size] * n_frames
    else:
        sigma2 = math.log(1.0 + burstiness * burstiness)
        mu = math.log(mean_size) - sigma2 / 2.0
        sizes = [math.exp(rng.normal(mu, math.sqrt(sigma2))) for _ in range(n_frames)]
        scale = mean_size * n_frames / sum(sizes)
        sizes = [s * scale for s in sizes]
    records = [(i * frame_period, max(1, round(s))) for i, s in enumerate(sizes)]
    return VideoTrace(records, n_frames * frame_period)


def packetize(nbytes: int, mtu: int) -> list[int]:
    """Split a burst into MTU-sized packets (remainder last)."""
    full, rest = divmod(nbytes, mtu)
    return [mtu] * full + ([rest] if rest else [])


class PacketFactory:
    """Deterministic packet identity shared by all sources of one run."""

    def __init__(self, packet_cls):
        self.packet_cls = packet_cls
        self.next_id = 0

    def make(self, ue_id: int, enb_id: int, size: int, lcg: int, klass: str):
        pkt = self.packet_cls(self.next_id, ue_id, enb_id, size, lcg, klass)
        self.next_id += 1
        return pkt


class VoipSource:
    """Fixed-size packets on a constant period, phase drawn once at setup."""

    def __init__(self, sim: Simulator, factory: PacketFactory, ue, lcg: int,
                 packet_bytes: int = 60, period: int = 20 * MS, phase: int = 0):
        self.sim = sim
        self.factory = factory
        self.ue = ue
        self.lcg = lcg
        self.packet_bytes = packet_bytes
        self.period = period
        self.phase = phase
        self._k = 0

    def start(self) -> None:
        self.sim.schedule_at(self.phase, PRIO_DATA, self._emit)

    def _emit(self) -> None:
        pkt = self.factory.make(self.ue.ue_id, self.ue.enb.enb_id,
                                self.packet_bytes, self.lcg, "voip")
        self.ue.on_arrival(pkt)
        self._k += 1
        self.sim.schedule_at(self.phase + self._k * self.period, PRIO_DATA, self._emit)


class TraceSource:
    """Replays a video trace from a randomized start offset, looping forever."""

    def __init__(self, sim: Simulator, factory: PacketFactory, ue, lcg: int,
                 trace: VideoTrace, start_offset: int, mtu: int, t0: int = 0):
        self.sim = sim
        self.factory = factory
        self.ue = ue
        self.lcg = lcg
        self.trace = trace
        self.mtu = mtu
        self.t0 = t0
        self.start_offset = start_offset % trace.duration
        self._idx = 0
        self._loop = 0
        # first record at or after the start offset (wrapping)
        while (self._idx < len(trace.records)
               and trace.records[self._idx][0] < self.start_offset):
            self._idx += 1
        if self._idx == len(trace.records):
            self._idx = 0
            self._loop = 1

    def _emission_time(self) -> int:
        off = self.trace.records[self._idx][0]
        return self.t0 + self._loop * self.trace.duration + off - self.start_offset

    def start(self) -> None:
        self.sim.schedule_at(self._emission_time(), PRIO_DATA, self._emit)

    def _emit(self) -> None:
        nbytes = self.trace.records[self._idx][1]
        for size in packetize(nbytes, self.mtu):
            pkt = self.factory.make(self.ue.ue_id, self.ue.enb.enb_id,
                                    size, self.lcg, "video")
            self.ue.on_arrival(pkt)
        self._idx += 1
        if self._idx == len(self.trace.records):
            self._idx = 0
            self._loop += 1
        self.sim.schedule_at(self._emission_time(), PRIO_DATA, self._emit)
