"""Inference benchmark harness.

Measures mean per-address wall time and peak resident-set growth while
parsing a corpus at a sweep of batch sizes, per model flavor. Before any
timing is reported for a flavor, parse outputs are asserted identical
across all benchmarked batch sizes. Reports render as an aligned summary
table, a machine-readable CSV (round-trippable), and matplotlib figures.
"""

from __future__ import annotations

import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import psutil

from .core import AddrTagError
from .io import load_checkpoint

DEFAULT_BATCH_SIZES = tuple(2 ** k for k in range(10))  # 1 .. 512
RAM_SAMPLE_SECONDS = 0.01


class CorpusEmpty(AddrTagError):
    pass


class ModelLoadFailure(AddrTagError):
    def __init__(self, path, reason: str):
        super().__init__(f"cannot load model {path!s}: {reason}")
        self.path = path


class BatchMismatch(AddrTagError):
    """Parse outputs differed across batch sizes; timings would be meaningless."""


@dataclass(frozen=True)
class BenchConfig:
    corpus_path: str
    model_paths: tuple[str, ...]
    batch_sizes: tuple[int, ...] = DEFAULT_BATCH_SIZES
    repetitions: int = 3
    warmup: int = 100

    def __post_init__(self):
        sizes = tuple(self.batch_sizes)
        if not sizes or any(b < 1 for b in sizes) or list(sizes) != sorted(set(sizes)):
            raise ValueError("batch_sizes must be strictly increasing positive integers")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        object.__setattr__(self, "batch_sizes", sizes)
        object.__setattr__(self, "model_paths", tuple(self.model_paths))


@dataclass(frozen=True)
class BenchRow:
    flavor: str
    batch_size: int
    mean_time_s: float
    peak_ram_bytes: int
    addresses: int

    def __post_init__(self):
        if self.mean_time_s <= 0.0:
            raise ValueError("mean time must be positive")


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]

    def flavors(self) -> list[str]:
        seen = dict.fromkeys(r.flavor for r in self.rows)
        return list(seen)

    def row(self, flavor: str, batch_size: int) -> BenchRow:
        for r in self.rows:
            if r.flavor == flavor and r.batch_size == batch_size:
                return r
        raise KeyError((flavor, batch_size))


class _RamSampler:
    """Samples this process's RSS on a background thread; reports peak delta."""

    def __init__(self, interval: float = RAM_SAMPLE_SECONDS):
        self._proc = psutil.Process()
        self._interval = interval
        self._stop = threading.Event()
        self._peak = 0
        self._baseline = 0
        self._thread = None

    def __enter__(self):
        self._baseline = self._proc.memory_info().rss
        self._peak = self._baseline
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()
        return self

    def _loop(self):
        while not self._stop.wait(self._interval):
            rss = self._proc.memory_info().rss
            if rss > self._peak:
                self._peak = rss

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        rss = self._proc.memory_info().rss
        if rss > self._peak:
            self._peak = rss

    @property
    def peak_delta(self) -> int:
        return max(0, self._peak - self._baseline)


def read_corpus(path) -> list[str]:
    """One address per non-empty line, UTF-8."""
    with open(path, encoding="utf-8") as fh:
        addresses = [line.strip() for line in fh if line.strip()]
    if not addresses:
        raise CorpusEmpty(f"{path}: no addresses")
    return addresses


def run_benchmark(config: BenchConfig) -> BenchReport:
    """Time every (model, batch size) pair over the full corpus.

    The reported mean is the median over repetitions of (total wall time /
    address count); RAM is the worst peak delta seen during timed runs.
    """
    addresses = read_corpus(config.corpus_path)
    rows: list[BenchRow] = []
    for path in config.model_paths:
        try:
            tagger = load_checkpoint(path)
        except Exception as exc:
            raise ModelLoadFailure(path, str(exc)) from exc
        label = Path(path).stem
        warmup = addresses[:min(config.warmup, len(addresses))]
        reference = None
        reference_bs = None
        for batch_size in config.batch_sizes:
            if warmup:
                tagger.parse(warmup, batch_size=batch_size)
            totals = []
            peak = 0
            outputs = None
            for _ in range(config.repetitions):
                with _RamSampler() as sampler:
                    t0 = time.perf_counter()
                    parsed = tagger.parse(addresses, batch_size=batch_size)
                    totals.append(time.perf_counter() - t0)
                peak = max(peak, sampler.peak_delta)
                if outputs is None:
                    outputs = [p.tags for p in parsed]
            if reference is None:
                reference, reference_bs = outputs, batch_size
            elif outputs != reference:
                raise BatchMismatch(f"{label}: outputs at batch size {batch_size} differ "
                                    f"from batch size {reference_bs}")
            rows.append(BenchRow(flavor=label, batch_size=batch_size,
                                 mean_time_s=statistics.median(totals) / len(addresses),
                                 peak_ram_bytes=peak, addresses=len(addresses)))
    return BenchReport(rows=tuple(rows))


# -- rendering ---------------------------------------------------------------

_CSV_HEADER = "flavor,batch_size,mean_time_s,peak_ram_bytes,addresses"


def render_report(report: BenchReport, fmt: str = "table") -> str:
    if not report.rows:
        raise ValueError("empty report")
    if fmt == "csv":
        lines = [_CSV_HEADER]
        for r in report.rows:
            lines.append(f"{r.flavor},{r.batch_size},{r.mean_time_s!r},{r.peak_ram_bytes},{r.addresses}")
        return "\n".join(lines) + "\n"
    if fmt == "table":
        return _render_table(report)
    raise ValueError(f"unknown format {fmt!r}")


def parse_report_csv(text: str) -> BenchReport:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _CSV_HEADER:
        raise ValueError("not a bench report CSV")
    rows = []
    for ln in lines[1:]:
        flavor, batch_size, mean_time, ram, count = ln.split(",")
        rows.append(BenchRow(flavor=flavor, batch_size=int(batch_size),
                             mean_time_s=float(mean_time), peak_ram_bytes=int(ram),
                             addresses=int(count)))
    return BenchReport(rows=tuple(rows))


def _human_bytes(n: int) -> str:
    for unit, div in (("GB", 1 << 30), ("MB", 1 << 20), ("KB", 1 << 10)):
        if n >= div:
            return f"{n / div:.2f} {unit}"
    return f"{n} B"


def _render_table(report: BenchReport) -> str:
    header = ("model", "RAM", "mean time (not batched)", "mean time (batched, best)")
    table = [header]
    for flavor in report.flavors():
        rows = [r for r in report.rows if r.flavor == flavor]
        ram = max(r.peak_ram_bytes for r in rows)
        unbatched = next((r for r in rows if r.batch_size == 1), rows[0])
        batched = [r for r in rows if r.batch_size > 1]
        best = min(batched, key=lambda r: r.mean_time_s) if batched else None
        table.append((
            flavor,
            _human_bytes(ram),
            f"{unbatched.mean_time_s:.6f} s",
            f"{best.mean_time_s:.6f} s (batch {best.batch_size})" if best else "n/a",
        ))
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_figures(report: BenchReport, stem) -> list[Path]:
    """Write latency and RAM figures next to the delimited report."""
    if not report.rows:
        raise ValueError("empty report")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stem = Path(stem)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for flavor in report.flavors():
        rows = sorted((r for r in report.rows if r.flavor == flavor), key=lambda r: r.batch_size)
        ax.plot([r.batch_size for r in rows], [r.mean_time_s * 1e3 for r in rows],
                marker="o", label=flavor)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("batch size")
    ax.set_ylabel("mean time per address (ms)")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    fig.tight_layout()
    time_path = stem.with_name(stem.name + "_time.png")
    fig.savefig(time_path, dpi=120)
    plt.close(fig)
    paths.append(time_path)

    fig, ax = plt.subplots(figsize=(6, 4))
    flavors = report.flavors()
    peaks = [max(r.peak_ram_bytes for r in report.rows if r.flavor == f) / (1 << 20)
             for f in flavors]
    ax.bar(range(len(flavors)), peaks, color="#4878a8")
    ax.set_xticks(range(len(flavors)))
    ax.set_xticklabels(flavors, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("peak RAM delta (MB)")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    ram_path = stem.with_name(stem.name + "_ram.png")
    fig.savefig(ram_path, dpi=120)
    plt.close(fig)
    paths.append(ram_path)
    return paths
