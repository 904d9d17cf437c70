"""Synthetic multi-RU dataset: generation, deterministic splits, binary I/O.

Frame file layout (little-endian)::

    header  magic b"CFAMC1" | format_version u32 | frame_len u32 | n_ru u32 | record_count u64
    record  record_id u64 | label u8 | split u8 | egc_snr_db f32 |
            snr_linear f32[n_ru] | samples f32[n_ru * frame_len * 2]

Samples are interleaved I,Q and RU-major. Every split lives in its own frame
file; ``manifest.json`` next to them carries the config, per-cell counts and a
64-bit BLAKE2b digest of each file.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import seeding
from .errors import CorruptDataError, InvalidArgument, NotFound, PersistenceError
from .signal import (
    FrameMeta,
    IQFrame,
    ModulationScheme,
    SNRPlan,
    apply_channel,
    make_snr_plan,
    modulate,
)

MAGIC = b"CFAMC1"
FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}
HEADER_DTYPE = np.dtype(
    [("magic", "S6"), ("format_version", "<u4"), ("frame_len", "<u4"),
     ("n_ru", "<u4"), ("record_count", "<u8")]
)
MANIFEST_NAME = "manifest.json"


def record_dtype(n_ru: int, frame_len: int) -> np.dtype:
    return np.dtype([
        ("record_id", "<u8"),
        ("label", "u1"),
        ("split", "u1"),
        ("egc_snr_db", "<f4"),
        ("snr_linear", "<f4", (n_ru,)),
        ("samples", "<f4", (n_ru * frame_len * 2,)),
    ])


@dataclass(frozen=True)
class DatasetConfig:
    schemes: tuple = tuple(ModulationScheme)
    snr_grid_db: tuple = tuple(float(s) for s in range(-10, 31, 2))
    frames_per_pair: int = 1024
    frame_len: int = 1024
    n_ru: int = 3
    plan_mode: str = "diverse"
    master_seed: int = 20240101
    split: tuple = (768, 128, 128)

    def __post_init__(self):
        object.__setattr__(self, "schemes",
                           tuple(ModulationScheme.parse(s) for s in self.schemes))
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "split", tuple(int(s) for s in self.split))
        self.validate()

    def validate(self):
        if not self.schemes or len(set(self.schemes)) != len(self.schemes):
            raise InvalidArgument("schemes must be a non-empty set")
        g = np.asarray(self.snr_grid_db)
        if g.size == 0 or not np.all(np.isfinite(g)):
            raise InvalidArgument("snr grid must be non-empty and finite")
        if g.size > 1:
            d = np.diff(g)
            if np.any(d <= 0):
                raise InvalidArgument("snr grid must be strictly increasing")
            if not np.allclose(d, d[0]):
                raise InvalidArgument("snr grid must be an arithmetic sequence")
        if self.frames_per_pair < 1 or self.frame_len < 1 or self.n_ru < 1:
            raise InvalidArgument("frames_per_pair, frame_len and n_ru must be positive")
        if len(self.split) != 3 or min(self.split) < 0:
            raise InvalidArgument("split must be three non-negative counts")
        if sum(self.split) != self.frames_per_pair:
            raise InvalidArgument(
                f"split counts {self.split} do not sum to frames_per_pair={self.frames_per_pair}")
        if self.plan_mode not in ("equal", "diverse"):
            raise InvalidArgument(f"unknown plan mode {self.plan_mode!r}")

    @property
    def total_records(self) -> int:
        return len(self.schemes) * len(self.snr_grid_db) * self.frames_per_pair

    @classmethod
    def paper(cls, **overrides) -> "DatasetConfig":
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "DatasetConfig":
        kw = dict(
            schemes=(ModulationScheme.BPSK, ModulationScheme.QPSK, ModulationScheme.QAM16),
            snr_grid_db=(10.0, 20.0, 30.0),
            frames_per_pair=256,
            split=(192, 32, 32),
        )
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schemes"] = [s.name for s in self.schemes]
        d["snr_grid_db"] = list(self.snr_grid_db)
        d["split"] = dict(zip(SPLITS, self.split))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        if isinstance(d.get("split"), dict):
            d["split"] = tuple(d["split"][k] for k in SPLITS)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class FrameRecord:
    ru_frames: tuple
    label: ModulationScheme
    egc_snr_db: float
    plan: SNRPlan
    split: str
    record_id: int


@dataclass
class DatasetManifest:
    config: DatasetConfig
    root: Path | None
    files: dict = field(default_factory=dict)
    record_counts: dict = field(default_factory=dict)
    cell_counts: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION
    checksums: dict = field(default_factory=dict)

    @property
    def total_records(self) -> int:
        return sum(self.record_counts.values())

    def path(self, split: str) -> Path:
        if split not in SPLITS:
            raise InvalidArgument(f"unknown split {split!r}")
        if self.root is None or split not in self.files:
            raise NotFound(f"manifest has no file for split {split!r}")
        return Path(self.root) / self.files[split]

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "files": dict(self.files),
            "record_counts": dict(self.record_counts),
            "total_records": self.total_records,
            "cell_counts": list(self.cell_counts),
            "checksums": dict(self.checksums),
            "seed_derivation": "splitmix64-fold(master_seed, scheme_id, snr_index, frame_index, role)",
        }

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else Path(self.root) / MANIFEST_NAME
        try:
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as e:
            raise PersistenceError(f"cannot write manifest: {e}", path) from e
        return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        d = json.loads(path.read_text())
    except OSError as e:
        raise PersistenceError(f"cannot read manifest: {e}", path) from e
    except json.JSONDecodeError as e:
        raise CorruptDataError(f"manifest is not valid JSON: {e}", path) from e
    if d.get("format_version") != FORMAT_VERSION:
        raise CorruptDataError(f"unsupported format_version {d.get('format_version')}", path)
    return DatasetManifest(
        config=DatasetConfig.from_dict(d["config"]),
        root=path.parent,
        files=d["files"],
        record_counts=d["record_counts"],
        cell_counts=d["cell_counts"],
        format_version=d["format_version"],
        checksums=d["checksums"],
    )


# ---------------------------------------------------------------------------
# generation


def _split_permutation(config: DatasetConfig, scheme: ModulationScheme, snr_index: int):
    seed = seeding.derive_seed(config.master_seed, int(scheme), snr_index, seeding.ROLE_SPLIT)
    return np.random.default_rng(seed).permutation(config.frames_per_pair)


def _split_codes(config: DatasetConfig, scheme, snr_index: int) -> np.ndarray:
    """Split code per frame index of one (scheme, snr) pair."""
    perm = _split_permutation(config, scheme, snr_index)
    codes = np.empty(config.frames_per_pair, dtype=np.uint8)
    n_train, n_val, _ = config.split
    codes[perm[:n_train]] = SPLIT_CODE["train"]
    codes[perm[n_train:n_train + n_val]] = SPLIT_CODE["val"]
    codes[perm[n_train + n_val:]] = SPLIT_CODE["test"]
    return codes


def record_id_for(config: DatasetConfig, scheme, snr_index: int, frame_index: int) -> int:
    return (int(scheme) * len(config.snr_grid_db) + snr_index) * config.frames_per_pair + frame_index


def synthesize_record(config: DatasetConfig, scheme, snr_index: int, frame_index: int):
    """Build the clean frame, the SNR plan and the ``n_ru`` channel outputs of one frame."""
    scheme = ModulationScheme.parse(scheme)
    snr_db = config.snr_grid_db[snr_index]
    base = (config.master_seed, int(scheme), snr_index, frame_index)
    clean = modulate(scheme, config.frame_len, seeding.derive_seed(*base, seeding.ROLE_SYMBOLS))
    clean = IQFrame(clean.samples, FrameMeta(scheme, snr_db, None, clean.meta.seed))
    plan = make_snr_plan(snr_db, config.n_ru, config.plan_mode,
                         seeding.derive_seed(*base, seeding.ROLE_PLAN))
    branches = []
    for r in range(config.n_ru):
        f = apply_channel(clean, plan.amplitudes[r], plan.noise_vars[r],
                          seeding.derive_seed(*base, seeding.ROLE_NOISE, r))
        branches.append(IQFrame(f.samples, FrameMeta(scheme, snr_db, r, f.meta.seed)))
    return clean, plan, branches


def _generate_pair(config: DatasetConfig, scheme, snr_index: int) -> np.ndarray:
    dt = record_dtype(config.n_ru, config.frame_len)
    out = np.zeros(config.frames_per_pair, dtype=dt)
    codes = _split_codes(config, scheme, snr_index)
    for f in range(config.frames_per_pair):
        _, plan, branches = synthesize_record(config, scheme, snr_index, f)
        iq = np.stack([b.samples for b in branches]).astype(np.complex64)
        rec = out[f]
        rec["record_id"] = record_id_for(config, scheme, snr_index, f)
        rec["label"] = int(scheme)
        rec["split"] = codes[f]
        rec["egc_snr_db"] = config.snr_grid_db[snr_index]
        rec["snr_linear"] = plan.per_ru_snr_linear
        rec["samples"] = iq.view(np.float32).reshape(-1)
    return out


def _generate_pair_star(args):
    return _generate_pair(*args)


def describe_dataset(config: DatasetConfig) -> DatasetManifest:
    """Manifest (counts and split cells) of ``config`` without synthesizing samples."""
    config.validate()
    cells = []
    totals = dict.fromkeys(SPLITS, 0)
    for scheme in config.schemes:
        for i, snr in enumerate(config.snr_grid_db):
            codes = _split_codes(config, scheme, i)
            counts = {name: int(np.sum(codes == SPLIT_CODE[name])) for name in SPLITS}
            for name in SPLITS:
                totals[name] += counts[name]
            cells.append({"scheme": scheme.name, "snr_db": snr, **counts})
    return DatasetManifest(config=config, root=None, record_counts=totals, cell_counts=cells)


def file_digest(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_header(fh, config: DatasetConfig, count: int):
    hdr = np.zeros(1, dtype=HEADER_DTYPE)
    hdr["magic"] = MAGIC
    hdr["format_version"] = FORMAT_VERSION
    hdr["frame_len"] = config.frame_len
    hdr["n_ru"] = config.n_ru
    hdr["record_count"] = count
    fh.write(hdr.tobytes())


def default_workers() -> int:
    return max(1, int(os.environ.get("CFAMC_WORKERS", "1")))


def generate_dataset(config: DatasetConfig, out_dir, workers: int | None = None) -> DatasetManifest:
    """Synthesize every record of ``config`` into ``out_dir`` and return its manifest."""
    manifest = describe_dataset(config)
    out_dir = Path(out_dir)
    workers = default_workers() if workers is None else max(1, int(workers))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise PersistenceError(f"cannot create output directory: {e}", out_dir) from e

    manifest.root = out_dir
    manifest.files = {name: f"{name}.cfamc" for name in SPLITS}
    jobs = [(config, s, i) for s in config.schemes for i in range(len(config.snr_grid_db))]
    handles = {}
    current = None
    try:
        for name in SPLITS:
            current = out_dir / manifest.files[name]
            handles[name] = open(current, "wb")
            _write_header(handles[name], config, manifest.record_counts[name])
        current = out_dir
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                chunks = pool.map(_generate_pair_star, jobs)
                _route(chunks, handles)
        else:
            _route(map(_generate_pair_star, jobs), handles)
    except OSError as e:
        raise PersistenceError(f"dataset write failed: {e}", current) from e
    finally:
        for fh in handles.values():
            fh.close()

    manifest.checksums = {name: file_digest(manifest.path(name)) for name in SPLITS}
    manifest.save()
    return manifest


def _route(chunks, handles):
    for chunk in chunks:
        for name, fh in handles.items():
            fh.write(chunk[chunk["split"] == SPLIT_CODE[name]].tobytes())


# ---------------------------------------------------------------------------
# splits and loading


def _snr_index(config: DatasetConfig, snr_db: float) -> int:
    for i, s in enumerate(config.snr_grid_db):
        if math.isclose(s, snr_db, abs_tol=1e-9):
            return i
    raise NotFound(f"SNR {snr_db} dB is not in the grid")


def split_membership(manifest: DatasetManifest, scheme, snr_db: float) -> dict:
    """Frame indices of one (scheme, snr) pair in each split."""
    config = manifest.config
    try:
        scheme = ModulationScheme.parse(scheme)
    except (InvalidArgument, ValueError):
        raise NotFound(f"unknown scheme {scheme!r}") from None
    if scheme not in config.schemes:
        raise NotFound(f"scheme {scheme.name} is not in the dataset")
    codes = _split_codes(config, scheme, _snr_index(config, snr_db))
    return {name: np.flatnonzero(codes == SPLIT_CODE[name]) for name in SPLITS}


def _verify(manifest: DatasetManifest, split: str) -> Path:
    path = manifest.path(split)
    if not path.exists():
        raise PersistenceError("frame file missing", path)
    digest = file_digest(path)
    expected = manifest.checksums.get(split)
    if digest != expected:
        raise CorruptDataError(
            f"checksum mismatch for {path}: expected {expected}, got {digest}", path)
    return path


def read_records(manifest: DatasetManifest, split: str, verify: bool = True) -> np.ndarray:
    """Raw structured records of a split (memory-mapped, read-only)."""
    path = _verify(manifest, split) if verify else manifest.path(split)
    hdr = np.fromfile(path, dtype=HEADER_DTYPE, count=1)
    if hdr.size != 1 or hdr["magic"][0] != MAGIC:
        raise CorruptDataError(f"bad frame file header in {path}", path)
    n_ru, frame_len = int(hdr["n_ru"][0]), int(hdr["frame_len"][0])
    count = int(hdr["record_count"][0])
    dt = record_dtype(n_ru, frame_len)
    if path.stat().st_size != HEADER_DTYPE.itemsize + count * dt.itemsize:
        raise CorruptDataError(f"truncated frame file {path}", path)
    if count == 0:
        return np.zeros(0, dtype=dt)
    return np.memmap(path, dtype=dt, mode="r", offset=HEADER_DTYPE.itemsize, shape=(count,))


def _to_record(rec, config: DatasetConfig) -> FrameRecord:
    label = ModulationScheme(int(rec["label"]))
    snr = float(rec["egc_snr_db"])
    s = tuple(float(v) for v in rec["snr_linear"])
    plan = SNRPlan(snr, config.n_ru, config.plan_mode, s, s, s)
    iq = np.asarray(rec["samples"]).view(np.complex64).reshape(config.n_ru, config.frame_len)
    frames = tuple(IQFrame(iq[r].copy(), FrameMeta(label, snr, r, 0)) for r in range(config.n_ru))
    return FrameRecord(frames, label, snr, plan, SPLITS[int(rec["split"])], int(rec["record_id"]))


def epoch_order(manifest: DatasetManifest, split: str, n: int, epoch: int, shuffle: bool):
    if not shuffle:
        return np.arange(n)
    seed = seeding.derive_seed(manifest.config.master_seed, seeding.ROLE_SHUFFLE,
                               SPLIT_CODE[split], epoch)
    return np.random.default_rng(seed).permutation(n)


def load_split(manifest: DatasetManifest, split: str, batch_size: int, epoch: int = 0,
               shuffle: bool | None = None) -> Iterator[list]:
    """Yield batches of :class:`FrameRecord` covering ``split`` once.

    The train split is reshuffled per ``epoch``; val/test keep file order.
    """
    if split not in SPLITS:
        raise InvalidArgument(f"unknown split {split!r}")
    if batch_size < 1:
        raise InvalidArgument("batch_size must be >= 1")
    recs = read_records(manifest, split)
    if shuffle is None:
        shuffle = split == "train"
    order = epoch_order(manifest, split, len(recs), epoch, shuffle)
    for start in range(0, len(order), batch_size):
        yield [_to_record(recs[i], manifest.config) for i in order[start:start + batch_size]]


@dataclass
class SplitData:
    """Array view of one split, ready for batched model input."""

    x: np.ndarray            # complex64 (n, n_ru, frame_len)
    labels: np.ndarray       # int64 scheme ids
    egc_snr_db: np.ndarray
    snr_linear: np.ndarray   # (n, n_ru)
    record_ids: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def n_ru(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "SplitData":
        return SplitData(self.x[idx], self.labels[idx], self.egc_snr_db[idx],
                         self.snr_linear[idx], self.record_ids[idx])


def load_arrays(manifest: DatasetManifest, split: str, max_len: int | None = None) -> SplitData:
    """Load a whole split; ``max_len`` keeps only the first samples of each frame."""
    recs = read_records(manifest, split)
    cfg = manifest.config
    n = len(recs)
    keep = cfg.frame_len if max_len is None else min(int(max_len), cfg.frame_len)
    x = np.empty((n, cfg.n_ru, keep), dtype=np.complex64)
    step = 4096
    for a in range(0, n, step):
        iq = np.asarray(recs["samples"][a:a + step]).view(np.complex64)
        x[a:a + step] = iq.reshape(-1, cfg.n_ru, cfg.frame_len)[:, :, :keep]
    return SplitData(
        x=x,
        labels=np.asarray(recs["label"], dtype=np.int64),
        egc_snr_db=np.asarray(recs["egc_snr_db"], dtype=np.float64),
        snr_linear=np.asarray(recs["snr_linear"], dtype=np.float64).reshape(n, cfg.n_ru),
        record_ids=np.asarray(recs["record_id"], dtype=np.int64),
    )
