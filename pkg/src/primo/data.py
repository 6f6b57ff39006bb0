"""Two-modality datasets: synthetic XOR generation, masking, splits, and TSV I/O.

All randomness goes through numpy's PCG64 bit generator seeded with explicit
``SeedSequence`` values, so a given seed reproduces the same dataset bit for
bit. Missing second-modality values are stored as NaN in memory and written
as ``NA`` on disk; they are never silently encoded as zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError

UNLABELED = -1

FILE_FORMAT = "primo-dataset"
FILE_VERSION = 1


class SchemaError(ValueError):
    """A dataset file violates the declared schema."""


@dataclass(frozen=True)
class Example:
    """One observation: x_o always present, x_m optional, label optional."""

    id: int
    x_o: np.ndarray
    x_m: np.ndarray | None
    y: int | None


class Dataset:
    """Column-oriented container for examples sharing one schema.

    ``x_m`` rows are NaN wherever ``m_present`` is False; unlabeled rows carry
    ``y == UNLABELED``. Instances are treated as immutable once built.
    """

    def __init__(self, x_o, x_m, m_present, y, ids, n_classes):
        self.x_o = np.asarray(x_o, dtype=np.float64)
        self.x_m = np.asarray(x_m, dtype=np.float64)
        self.m_present = np.asarray(m_present, dtype=bool)
        self.y = np.asarray(y, dtype=np.int64)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.n_classes = int(n_classes)
        n = len(self.ids)
        if not (len(self.x_o) == len(self.x_m) == len(self.m_present) == len(self.y) == n):
            raise SchemaError("dataset columns have inconsistent lengths")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> Example:
        x_m = self.x_m[i].copy() if self.m_present[i] else None
        y = int(self.y[i]) if self.y[i] != UNLABELED else None
        return Example(id=int(self.ids[i]), x_o=self.x_o[i].copy(), x_m=x_m, y=y)

    @property
    def x_o_dim(self):
        return self.x_o.shape[1]

    @property
    def x_m_dim(self):
        return self.x_m.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices)
        return Dataset(
            self.x_o[indices],
            self.x_m[indices],
            self.m_present[indices],
            self.y[indices],
            self.ids[indices],
            self.n_classes,
        )

    def complete_indices(self):
        return np.flatnonzero(self.m_present)

    def missing_indices(self):
        return np.flatnonzero(~self.m_present)

    def labeled_indices(self):
        return np.flatnonzero(self.y != UNLABELED)

    def equals(self, other):
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.m_present, other.m_present)
            and np.array_equal(self.x_o, other.x_o)
            and np.array_equal(
                np.where(self.m_present[:, None], self.x_m, 0.0),
                np.where(other.m_present[:, None], other.x_m, 0.0),
            )
        )


@dataclass
class XorConfig:
    """Generation parameters for the synthetic XOR mixture benchmark."""

    n_samples: int = 40_000
    centers: tuple = ((-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0))
    sigma: float = 0.5
    weights: tuple | None = None
    mask_prob: float = 0.5
    train_frac: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ContractError("sigma must be positive")
        if self.weights is None:
            k = len(self.centers)
            self.weights = tuple(1.0 / k for _ in range(k))
        if len(self.weights) != len(self.centers):
            raise ContractError("weights and centers must have equal length")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ContractError(f"weights sum to {sum(self.weights)}, not 1")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ContractError("mask_prob must lie in [0, 1]")
        if not 0.0 < self.train_frac < 1.0:
            raise ContractError("train_frac must lie in (0, 1)")


def xor_label(x_o_val, x_m_val):
    """Class 1 when the coordinate signs differ (zero counts as non-negative)."""
    return int((x_o_val < 0) != (x_m_val < 0))


def generate_xor(cfg: XorConfig) -> Dataset:
    """Sample (x_o, x_m) from the Gaussian mixture and label by sign parity."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    n = cfg.n_samples
    comp = rng.choice(len(cfg.centers), size=n, p=np.asarray(cfg.weights))
    centers = np.asarray(cfg.centers, dtype=np.float64)
    points = centers[comp] + cfg.sigma * rng.standard_normal((n, 2))
    x_o = points[:, :1]
    x_m = points[:, 1:]
    y = ((x_o[:, 0] < 0) != (x_m[:, 0] < 0)).astype(np.int64)
    return Dataset(
        x_o=x_o,
        x_m=x_m,
        m_present=np.ones(n, dtype=bool),
        y=y,
        ids=np.arange(n, dtype=np.int64),
        n_classes=2,
    )


def apply_missingness(ds: Dataset, p: float, seed: int) -> Dataset:
    """Drop each example's x_m independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ContractError("missingness probability must lie in [0, 1]")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    drop = rng.random(len(ds)) < p
    keep = ds.m_present & ~drop
    x_m = np.where(keep[:, None], ds.x_m, np.nan)
    return Dataset(ds.x_o.copy(), x_m, keep, ds.y.copy(), ds.ids.copy(), ds.n_classes)


@dataclass
class DatasetSplit:
    train: Dataset
    test: Dataset
    validation: Dataset | None = None


def split(ds: Dataset, fractions, seed: int) -> DatasetSplit:
    """Deterministic shuffled split; fractions must sum to 1.

    Two fractions give train/test, three give train/validation/test.
    """
    fractions = list(fractions)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"split fractions sum to {sum(fractions)}, not 1")
    if len(fractions) not in (2, 3):
        raise ContractError("split takes two or three fractions")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    order = rng.permutation(len(ds))
    bounds = [int(round(f * len(ds))) for f in np.cumsum(fractions[:-1])]
    pieces = np.split(order, bounds)
    if len(fractions) == 2:
        return DatasetSplit(train=ds.subset(pieces[0]), test=ds.subset(pieces[1]))
    return DatasetSplit(
        train=ds.subset(pieces[0]),
        validation=ds.subset(pieces[1]),
        test=ds.subset(pieces[2]),
    )


# ---------------------------------------------------------------------------
# file format: one header line, then tab-separated records


def _fmt_vec(vec):
    return " ".join(repr(float(v)) for v in vec)


def save(ds: Dataset, path):
    """Write the dataset as TSV with a one-line schema header."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(
            f"# {FILE_FORMAT} v{FILE_VERSION} "
            f"x_o_dim={ds.x_o_dim} x_m_dim={ds.x_m_dim} n_classes={ds.n_classes}\n"
        )
        for i in range(len(ds)):
            y = str(int(ds.y[i])) if ds.y[i] != UNLABELED else "NA"
            x_m = _fmt_vec(ds.x_m[i]) if ds.m_present[i] else "NA"
            fh.write(f"{int(ds.ids[i])}\t{y}\t{_fmt_vec(ds.x_o[i])}\t{x_m}\n")


def _parse_header(line, path):
    parts = line.strip().split()
    if len(parts) < 2 or parts[0] != "#" or parts[1] != FILE_FORMAT:
        raise SchemaError(f"{path}: missing '{FILE_FORMAT}' header line")
    if parts[2] != f"v{FILE_VERSION}":
        raise SchemaError(f"{path}: unsupported format version {parts[2]}")
    fields = dict(kv.split("=", 1) for kv in parts[3:])
    try:
        return int(fields["x_o_dim"]), int(fields["x_m_dim"]), int(fields["n_classes"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed header fields: {exc}") from exc


def load(path) -> Dataset:
    """Read a dataset written by :func:`save`, validating every record."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        x_o_dim, x_m_dim, n_classes = _parse_header(header, path)
        ids, ys, x_os, x_ms, present = [], [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise SchemaError(f"{path}:{lineno}: expected 4 columns, got {len(cols)}")
            rec_id = int(cols[0])
            try:
                y = UNLABELED if cols[1] == "NA" else int(cols[1])
                x_o = np.array([float(v) for v in cols[2].split()], dtype=np.float64)
                if cols[3] == "NA":
                    x_m = np.full(x_m_dim, np.nan)
                    has_m = False
                else:
                    x_m = np.array([float(v) for v in cols[3].split()], dtype=np.float64)
                    has_m = True
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: record {rec_id}: {exc}") from exc
            if x_o.shape != (x_o_dim,):
                raise SchemaError(
                    f"{path}:{lineno}: record {rec_id}: x_o has length "
                    f"{len(x_o)}, schema says {x_o_dim}"
                )
            if has_m and x_m.shape != (x_m_dim,):
                raise SchemaError(
                    f"{path}:{lineno}: record {rec_id}: x_m has length "
                    f"{len(x_m)}, schema says {x_m_dim}"
                )
            if y != UNLABELED and not 0 <= y < n_classes:
                raise SchemaError(f"{path}:{lineno}: record {rec_id}: label {y} out of range")
            ids.append(rec_id)
            ys.append(y)
            x_os.append(x_o)
            x_ms.append(x_m)
            present.append(has_m)
    n = len(ids)
    return Dataset(
        x_o=np.vstack(x_os) if n else np.zeros((0, x_o_dim)),
        x_m=np.vstack(x_ms) if n else np.zeros((0, x_m_dim)),
        m_present=np.array(present, dtype=bool),
        y=np.array(ys, dtype=np.int64),
        ids=np.array(ids, dtype=np.int64),
        n_classes=n_classes,
    )
