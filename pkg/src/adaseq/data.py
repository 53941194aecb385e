"""Sequence datasets: PAMAP2 ingestion, transient-ratio extraction, splits,
standardisation, a synthetic generator and a binary cache format."""

from __future__ import annotations

import json
import logging
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAMAP2_COLUMNS = 54
NUM_FEATURES = 52
SPLITS = ("train", "validation", "test")
UNASSIGNED = -1


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    timestamp: float
    activity_id: int
    features: np.ndarray
    subject: int = 0

    @property
    def transient(self) -> bool:
        return self.activity_id == 0


@dataclass
class RecordTable:
    """Column-wise store of :class:`Record` rows (PAMAP2 has millions of them)."""

    timestamps: np.ndarray
    activity: np.ndarray
    features: np.ndarray
    subjects: np.ndarray

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, i) -> Record:
        return Record(float(self.timestamps[i]), int(self.activity[i]), self.features[i], int(self.subjects[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def transient(self) -> np.ndarray:
        return self.activity == 0

    @classmethod
    def concat(cls, tables) -> RecordTable:
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in ("timestamps", "activity", "features", "subjects")))


# -- PAMAP2 --------------------------------------------------------------------


def _locate_bad_line(path: Path) -> str:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != PAMAP2_COLUMNS:
                return f"{path}:{lineno}: expected {PAMAP2_COLUMNS} columns, found {len(tokens)}"
            for tok in tokens:
                try:
                    float(tok)
                except ValueError:
                    return f"{path}:{lineno}: cannot parse {tok!r} as a number"
    return f"{path}: unreadable"


def read_pamap2_file(path, subject: int = 0) -> RecordTable:
    """Parse one whitespace-separated PAMAP2 subject file and drop NaN rows."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"PAMAP2 file not found: {path}")
    try:
        raw = np.loadtxt(path, ndmin=2)
    except ValueError:
        raise DataFormatError(_locate_bad_line(path)) from None
    if raw.size and raw.shape[1] != PAMAP2_COLUMNS:
        raise DataFormatError(_locate_bad_line(path))
    raw = raw.reshape(-1, PAMAP2_COLUMNS)
    keep = ~np.isnan(raw).any(axis=1)
    dropped = int((~keep).sum())
    if dropped:
        log.debug("%s: dropped %d of %d rows with NaN", path.name, dropped, len(raw))
    raw = raw[keep]
    return RecordTable(
        raw[:, 0].copy(),
        raw[:, 1].astype(np.int64),
        np.ascontiguousarray(raw[:, 2:]),
        np.full(len(raw), subject, dtype=np.int64),
    )


def _subject_id(path: Path, fallback: int) -> int:
    digits = re.findall(r"\d+", path.stem)
    return int(digits[-1]) if digits else fallback


def load_pamap2(path) -> RecordTable:
    """Load a PAMAP2 directory (all ``*.dat`` files) or a single subject file.

    Rows with any NaN are removed; columns 3..54 form the 52 features.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"PAMAP2 path not found: {path}")
    files = sorted(path.glob("*.dat")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no *.dat subject files under {path}")
    return RecordTable.concat([read_pamap2_file(f, _subject_id(f, k)) for k, f in enumerate(files)])


# -- sequence datasets -------------------------------------------------------------


@dataclass
class SequenceDataset:
    X: np.ndarray  # (N, n, F) float64
    y: np.ndarray  # (N, n) dense label ids
    subjects: np.ndarray  # (N,)
    split: np.ndarray  # (N,) int8: index into SPLITS, or -1
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.X)

    @property
    def num_classes(self) -> int:
        return len(self.meta["classes"])

    @property
    def steps(self) -> int:
        return self.X.shape[1]

    @property
    def num_features(self) -> int:
        return self.X.shape[2]

    def split_arrays(self, name: str):
        sel = self.split == SPLITS.index(name)
        return self.X[sel], self.y[sel]

    def split_counts(self) -> dict:
        return {name: int(np.sum(self.split == k)) for k, name in enumerate(SPLITS)}

    def replace(self, **changes) -> SequenceDataset:
        fields = dict(X=self.X, y=self.y, subjects=self.subjects, split=self.split, meta=dict(self.meta))
        fields.update(changes)
        return SequenceDataset(**fields)


def transient_count(r: float, n: int) -> int:
    # tolerance so e.g. 0.29 * 100 still floors to 29
    return int(math.floor(r * n + 1e-9))


def extract_sequences(records: RecordTable, r: float, n: int, seed) -> SequenceDataset:
    """Build length-``n`` sequences with exactly ``floor(r*n)`` transient steps each.

    Per subject, transient (activity 0) and other records are pooled and
    shuffled; each sequence takes the next ``floor(r*n)`` transient and
    ``n - floor(r*n)`` other records, sorted by timestamp. A subject stops
    contributing once either pool runs out.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"transient ratio must lie in [0, 1], got {r}")
    if n < 1:
        raise ValueError("sequence length must be positive")
    rng = np.random.default_rng(seed)
    n_tr = transient_count(r, n)
    n_act = n - n_tr
    picks, subj = [], []
    for s in np.unique(records.subjects):
        idx = np.flatnonzero(records.subjects == s)
        is_tr = records.activity[idx] == 0
        trans, act = idx[is_tr], idx[~is_tr]
        if len(trans) < n_tr or len(act) < n_act:
            log.warning(
                "subject %s skipped: needs %d transient and %d active records, has %d and %d",
                s, n_tr, n_act, len(trans), len(act),
            )
            continue
        trans = rng.permutation(trans)
        act = rng.permutation(act)
        k = min(len(trans) // n_tr if n_tr else math.inf, len(act) // n_act if n_act else math.inf)
        for j in range(int(k)):
            pick = np.concatenate([trans[j * n_tr : (j + 1) * n_tr], act[j * n_act : (j + 1) * n_act]])
            pick = pick[np.argsort(records.timestamps[pick], kind="stable")]
            picks.append(pick)
            subj.append(int(s))
    if not picks:
        raise ValueError("not enough records to build a single sequence")
    picks = np.stack(picks)
    raw_labels = records.activity[picks]
    classes = sorted(set(np.unique(raw_labels).tolist()) | {0})
    lookup = {c: k for k, c in enumerate(classes)}
    y = np.vectorize(lookup.__getitem__, otypes=[np.int64])(raw_labels)
    return SequenceDataset(
        X=records.features[picks].astype(np.float64),
        y=y,
        subjects=np.asarray(subj, dtype=np.int64),
        split=np.full(len(picks), UNASSIGNED, dtype=np.int8),
        meta={"source": "pamap2", "r": r, "n": n, "seed": seed, "classes": classes},
    )


def split_sizes(total: int, fractions=(0.8, 0.1, 0.1)) -> tuple:
    n_val = int(math.floor(total * fractions[1] + 0.5))
    n_test = int(math.floor(total * fractions[2] + 0.5))
    return total - n_val - n_test, n_val, n_test


def split_dataset(dataset: SequenceDataset, seed) -> SequenceDataset:
    """Shuffle sequences and assign 80/10/10 train/validation/test."""
    total = len(dataset)
    if total < 10:
        raise ValueError(f"need at least 10 sequences to split, got {total}")
    n_train, n_val, _ = split_sizes(total)
    order = np.random.default_rng(seed).permutation(total)
    split = np.empty(total, dtype=np.int8)
    split[order[:n_train]] = 0
    split[order[n_train : n_train + n_val]] = 1
    split[order[n_train + n_val :]] = 2
    meta = dict(dataset.meta, split_seed=seed)
    return dataset.replace(split=split, meta=meta)


def standardize(dataset: SequenceDataset):
    """Zero-mean / unit-variance features using training-split statistics only.

    Returns ``(dataset, mean, std)``; constant features keep a std of 1.
    """
    Xtr, _ = dataset.split_arrays("train")
    if len(Xtr) == 0:
        raise ValueError("standardize needs a non-empty training split")
    flat = Xtr.reshape(-1, Xtr.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    X = (dataset.X - mean) / std
    return dataset.replace(X=X), mean, std


# -- synthetic data ----------------------------------------------------------------


def _segment_lengths(rng, total: int, mean: float) -> list:
    out = []
    while total > 0:
        length = min(int(rng.geometric(1.0 / mean)), total)
        out.append(length)
        total -= length
    return out


def synth_generate(r: float, n: int, num_sequences: int, input_dim: int, num_classes: int, seed, segment_mean: float = 8.0, noise: float = 0.1, persistence: float = 0.75) -> SequenceDataset:
    """Regime-switching sequences with non-uniform information content.

    Each sequence has ``round(r*n)`` transient steps (label 0, isotropic
    noise of scale ``noise``) cut into geometric segments with mean
    ``segment_mean``, and the remaining steps in active segments of the same
    length law, shuffled together. Inside an active segment of class ``c`` a
    hidden 2-D oscillator turns by a class-specific angle per step and is
    embedded into ``input_dim`` features through a fixed orthonormal map,
    plus noise. Amplitude and phase are drawn per segment, so a single frame
    says nothing about ``c``; the class is the rotation between consecutive
    frames.

    An active segment resumes the previous segment's activity with
    probability ``persistence`` (transient bursts interrupt an ongoing
    activity), so carrying state across transient stretches pays off.
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    if num_classes < 2 or input_dim < 2:
        raise ValueError("need num_classes >= 2 and input_dim >= 2")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(input_dim, 2)))
    omegas = np.pi * np.arange(1, num_classes) / num_classes
    X = np.empty((num_sequences, n, input_dim))
    y = np.empty((num_sequences, n), dtype=np.int64)
    n_tr = int(round(r * n))
    for s in range(num_sequences):
        segs = [(0, L) for L in _segment_lengths(rng, n_tr, segment_mean)]
        segs += [(1, L) for L in _segment_lengths(rng, n - n_tr, segment_mean)]
        segs = [segs[k] for k in rng.permutation(len(segs))]
        t = 0
        c = int(rng.integers(1, num_classes))
        for active, length in segs:
            sl = slice(t, t + length)
            t += length
            if not active:
                X[s, sl] = noise * rng.normal(size=(length, input_dim))
                y[s, sl] = 0
                continue
            if num_classes > 2 and rng.random() >= persistence:
                c = int(rng.choice([k for k in range(1, num_classes) if k != c]))
            amp = rng.uniform(0.8, 1.2)
            angle = rng.uniform(0, 2 * np.pi) + omegas[c - 1] * np.arange(length)
            z = amp * np.stack([np.cos(angle), np.sin(angle)], axis=1)
            X[s, sl] = z @ basis.T + noise * rng.normal(size=(length, input_dim))
            y[s, sl] = c
    return SequenceDataset(
        X=X,
        y=y,
        subjects=np.zeros(num_sequences, dtype=np.int64),
        split=np.full(num_sequences, UNASSIGNED, dtype=np.int8),
        meta={"source": "synth", "r": r, "n": n, "seed": seed, "classes": list(range(num_classes))},
    )


def constant_predictor_ce(labels, num_classes: int) -> float:
    """Cross-entropy of the best constant predictor (the empirical label frequencies)."""
    counts = np.bincount(np.asarray(labels).ravel(), minlength=num_classes).astype(float)
    q = counts / counts.sum()
    nz = q[q > 0]
    return float(-(nz * np.log(nz)).sum())


# -- cache file ----------------------------------------------------------------------

CACHE_MAGIC = b"ADSQDATA"
CACHE_VERSION = 1


def save_dataset(dataset: SequenceDataset, path):
    """Write the versioned binary cache; layout is described in docs/formats.md."""
    N, n, F = dataset.X.shape
    header = json.dumps(
        {"version": CACHE_VERSION, "N": N, "n": n, "F": F, "meta": dataset.meta}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", CACHE_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.X, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.y, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(dataset.subjects, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(dataset.split, dtype="<i1").tobytes())


def load_dataset(path) -> SequenceDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CACHE_MAGIC:
        raise DataFormatError(f"{path}: not a dataset cache")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != CACHE_VERSION:
        raise DataFormatError(f"{path}: unsupported cache version {version}")
    header = json.loads(blob[16 : 16 + hlen])
    N, n, F = header["N"], header["n"], header["F"]
    off = 16 + hlen

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    X = take("<f8", N * n * F).reshape(N, n, F).astype(np.float64)
    y = take("<i4", N * n).reshape(N, n).astype(np.int64)
    subjects = take("<i4", N).astype(np.int64)
    split = take("<i1", N).astype(np.int8)
    if off != len(blob):
        raise DataFormatError(f"{path}: trailing bytes in cache")
    return SequenceDataset(X, y, subjects, split, header["meta"])
