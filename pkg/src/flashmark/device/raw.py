"""Raw block-device backend: direct, synchronous IO against a real device.

IO bypasses the host file-system cache (O_DIRECT) and completes
synchronously (O_SYNC), one outstanding request per worker, so the
operating system's scheduling and caching layers do not distort per-IO
response times.  O_DIRECT requires sector-aligned user buffers, provided
here by page-aligned mmap allocations.
"""

from __future__ import annotations

import mmap
import os
import threading
import time

from . import DeviceError, SECTOR, UnsupportedError, check_alignment

_O_DIRECT = getattr(os, "O_DIRECT", 0)


def _now_us() -> int:
    return time.perf_counter_ns() // 1000


def probe_raw_capabilities(path: str) -> dict:
    """Report whether the platform honors cache-bypassing synchronous opens."""
    caps = {
        "path": path,
        "o_direct": bool(_O_DIRECT),
        "o_sync": hasattr(os, "O_SYNC"),
        "clock_resolution_us": time.get_clock_info("perf_counter").resolution * 1e6,
    }
    try:
        fd = os.open(path, os.O_RDONLY | _O_DIRECT)
    except OSError as exc:
        caps["openable"] = False
        caps["error"] = str(exc)
        return caps
    try:
        caps["openable"] = True
        caps["size"] = _device_size(fd)
    finally:
        os.close(fd)
    return caps


def _device_size(fd: int) -> int:
    end = os.lseek(fd, 0, os.SEEK_END)
    os.lseek(fd, 0, os.SEEK_SET)
    return end


class RawDevice:
    """Direct synchronous IO on a device node or regular file.

    All IO is positional (preadv/pwritev) with per-thread page-aligned
    buffers, so parallel workers can share the device handle without
    racing on a file offset.
    """

    virtual_timeline = False

    def __init__(self, path: str, write_seed: int = 0, require_direct: bool = True):
        if require_direct and not _O_DIRECT:
            raise UnsupportedError("platform lacks O_DIRECT; pass require_direct=False to override")
        flags = os.O_RDWR | getattr(os, "O_SYNC", 0)
        if require_direct:
            flags |= _O_DIRECT
        try:
            self._fd = os.open(path, flags)
        except OSError as exc:
            raise DeviceError(f"cannot open {path}: {exc}") from exc
        self.path = path
        self.device_id = os.path.basename(path) or "raw"
        self.capacity = _device_size(self._fd)
        if self.capacity % SECTOR:
            self.capacity -= self.capacity % SECTOR
        self._bufsize = 1 * 1024 * 1024
        # payload is pseudo-random so devices that compress or dedupe
        # constant data cannot cheat
        self._payload = _pseudo_bytes(write_seed or 0x9E3779B97F4A7C15, self._bufsize)
        self._local = threading.local()
        self._closed = False

    def _buffers(self, size: int) -> tuple[mmap.mmap, mmap.mmap]:
        loc = self._local
        if getattr(loc, "size", 0) < size:
            want = max(size, self._bufsize)
            loc.rbuf = mmap.mmap(-1, want)
            loc.wbuf = mmap.mmap(-1, want)
            reps = -(want // -len(self._payload))
            loc.wbuf.write((self._payload * reps)[:want])
            loc.size = want
        return loc.rbuf, loc.wbuf

    def read(self, lba: int, size: int) -> int:
        check_alignment(self, lba, size)
        rbuf, _ = self._buffers(size)
        view = memoryview(rbuf)[:size]
        start = _now_us()
        try:
            pos = 0
            while pos < size:
                n = os.preadv(self._fd, [view[pos:]], lba + pos)
                if n <= 0:
                    raise DeviceError(f"short read at lba={lba}")
                pos += n
        except OSError as exc:
            raise DeviceError(f"read failed at lba={lba}: {exc}") from exc
        return max(1, _now_us() - start)

    def write(self, lba: int, size: int) -> int:
        check_alignment(self, lba, size)
        _, wbuf = self._buffers(size)
        view = memoryview(wbuf)[:size]
        start = _now_us()
        try:
            pos = 0
            while pos < size:
                n = os.pwritev(self._fd, [view[pos:]], lba + pos)
                if n <= 0:
                    raise DeviceError(f"short write at lba={lba}")
                pos += n
        except OSError as exc:
            raise DeviceError(f"write failed at lba={lba}: {exc}") from exc
        return max(1, _now_us() - start)

    def idle(self, duration_us: int) -> int:
        precision_sleep(duration_us)
        return 0

    def now_us(self) -> int:
        return _now_us()

    def snapshot_state(self) -> bytes:
        raise UnsupportedError("raw devices cannot snapshot their internal state")

    def restore_state(self, blob: bytes) -> None:
        raise UnsupportedError("raw devices cannot restore internal state")

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            os.close(self._fd)


def _pseudo_bytes(seed: int, n: int) -> bytes:
    # xorshift-filled buffer; cheap and reproducible
    out = bytearray()
    x = seed or 0x9E3779B9
    while len(out) < n:
        x ^= (x << 13) & 0xFFFFFFFFFFFFFFFF
        x ^= x >> 7
        x ^= (x << 17) & 0xFFFFFFFFFFFFFFFF
        out += x.to_bytes(8, "little")
    return bytes(out[:n])


def precision_sleep(duration_us: int) -> None:
    """Sleep then spin: hits sub-millisecond gaps the scheduler cannot."""
    if duration_us <= 0:
        return
    deadline = time.perf_counter_ns() + duration_us * 1000
    coarse = duration_us - 200
    if coarse > 0:
        time.sleep(coarse / 1e6)
    while time.perf_counter_ns() < deadline:
        pass
