"""Dataset handling: TSV archive loading, synthetic corpora, normalization, batching.

File format: UTF-8, tab-separated, one instance per line, label first, then
T*F values flattened feature-major (all T values of feature 0, then feature 1,
and so on).  Any cell that does not parse as a number becomes a missing value.
Datasets are immutable after construction; transforms return new objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import check_positive_int

__all__ = [
    "TimeSeriesInstance",
    "Dataset",
    "from_array",
    "load_tsv",
    "save_tsv",
    "synth_two_class",
    "normalize",
    "batches",
]


@dataclass(frozen=True)
class TimeSeriesInstance:
    """One series of shape (T, F) with an observation mask and optional label.

    ``observed[t, f]`` is False exactly where ``values[t, f]`` is NaN.
    """

    values: np.ndarray
    observed: np.ndarray
    label: Optional[int] = None
    id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        o = np.asarray(self.observed, dtype=bool)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"instance values must be (T>=1, F>=1), got shape {v.shape}")
        if o.shape != v.shape:
            raise ValueError(f"observed mask shape {o.shape} != values shape {v.shape}")
        if (np.isnan(v) == o).any():
            raise ValueError("observed mask must be False exactly at NaN cells")
        v.flags.writeable = False
        o.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "observed", o)


@dataclass(frozen=True)
class Dataset:
    """A list of equally-shaped instances plus label metadata."""

    instances: tuple[TimeSeriesInstance, ...]
    num_classes: Optional[int] = None
    split: str = "train"
    label_names: tuple = field(default=())

    def __post_init__(self):
        if len(self.instances) == 0:
            raise ValueError("dataset must contain at least one instance")
        T, F = self.instances[0].values.shape
        for i, inst in enumerate(self.instances):
            if inst.values.shape != (T, F):
                raise ValueError(
                    f"instance {i} has shape {inst.values.shape}, expected {(T, F)}"
                )
        if self.num_classes is not None:
            for i, inst in enumerate(self.instances):
                if inst.label is not None and not (0 <= inst.label < self.num_classes):
                    raise ValueError(f"instance {i} label {inst.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def length(self) -> int:
        return self.instances[0].values.shape[0]

    @property
    def n_features(self) -> int:
        return self.instances[0].values.shape[1]

    def values_array(self) -> np.ndarray:
        """Stacked (N, T, F) values with NaN at missing cells."""
        return np.stack([inst.values for inst in self.instances])

    def observed_array(self) -> np.ndarray:
        return np.stack([inst.observed for inst in self.instances])

    def labels_array(self) -> np.ndarray:
        labels = [inst.label for inst in self.instances]
        if any(lbl is None for lbl in labels):
            raise ValueError("dataset has unlabeled instances")
        return np.asarray(labels, dtype=np.int64)


def _parse_cell(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_tsv(path, n_features: int = 1, expected_length: Optional[int] = None,
             split: str = "train") -> Dataset:
    """Load a tab-separated archive file.

    ``n_features`` de-flattens multivariate rows; row length must equal
    1 + T*F for a uniform T.  Raw labels are remapped to 0..C-1 in sorted
    order (the mapping is recorded in ``label_names``).
    """
    n_features = check_positive_int(n_features, "n_features")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.rstrip("\n\r")
            if not line:
                continue
            rows.append((line_no, line.split("\t")))
    if not rows:
        raise ValueError(f"empty dataset file: {path}")

    width = len(rows[0][1])
    n_values = width - 1
    if n_values < 1 or n_values % n_features != 0:
        raise ValueError(
            f"row 0 has {n_values} value cells, not divisible by n_features={n_features}"
        )
    T = n_values // n_features
    if expected_length is not None and T != expected_length:
        raise ValueError(f"file has T={T} but expected_length={expected_length}")

    raw_labels = []
    value_rows = []
    for line_no, cells in rows:
        if len(cells) != width:
            raise ValueError(
                f"ragged row at line {line_no}: has {len(cells)} cells, expected {width}"
            )
        try:
            raw_labels.append(float(cells[0]))
        except ValueError as e:
            raise ValueError(f"unparsable label at line {line_no}: {cells[0]!r}") from e
        value_rows.append([_parse_cell(c) for c in cells[1:]])

    uniq = sorted(set(raw_labels))
    label_map = {raw: i for i, raw in enumerate(uniq)}

    instances = []
    for i, ((line_no, _), raw, vals) in enumerate(zip(rows, raw_labels, value_rows)):
        # feature-major flattening: (F, T) blocks -> (T, F)
        v = np.asarray(vals, dtype=np.float64).reshape(n_features, T).T
        instances.append(TimeSeriesInstance(
            values=v, observed=~np.isnan(v), label=label_map[raw], id=f"row{line_no}",
        ))
    return Dataset(
        instances=tuple(instances),
        num_classes=len(uniq),
        split=split,
        label_names=tuple(uniq),
    )


def save_tsv(ds: Dataset, path) -> None:
    """Write the dataset back in the same feature-major TSV layout."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in ds.instances:
            label = inst.label if inst.label is not None else 0
            flat = inst.values.T.reshape(-1)  # feature-major
            cells = [str(label)] + [repr(float(v)) if math.isfinite(v) else "NaN" for v in flat]
            fh.write("\t".join(cells) + "\n")


def synth_two_class(n_per_class: int, T: int, F: int, seed: int,
                    noise: float = 0.1, split: str = "train") -> Dataset:
    """Two-class sinusoid corpus: period T/4 vs period T/8, Gaussian noise.

    Class means are exactly sin(2*pi*4t/T) and sin(2*pi*8t/T); every feature
    channel shares the mean and gets independent noise.  Deterministic per seed.
    """
    n_per_class = check_positive_int(n_per_class, "n_per_class")
    T = check_positive_int(T, "T")
    F = check_positive_int(F, "F")
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)
    means = {
        0: np.sin(2.0 * np.pi * 4.0 * t / T),
        1: np.sin(2.0 * np.pi * 8.0 * t / T),
    }
    instances = []
    for label in (0, 1):
        base = means[label][:, None]
        for i in range(n_per_class):
            v = base + noise * rng.standard_normal((T, F))
            instances.append(TimeSeriesInstance(
                values=v, observed=np.ones((T, F), dtype=bool),
                label=label, id=f"synth-{label}-{i:03d}",
            ))
    return Dataset(instances=tuple(instances), num_classes=2, split=split,
                   label_names=(0.0, 1.0))


def normalize(ds: Dataset, mode: str = "per-instance-z") -> Dataset:
    """Per-instance, per-feature z-normalization over observed entries.

    Constant channels map to all-zeros.  A channel with no observed values is
    an error (there is nothing to scale by).
    """
    if mode != "per-instance-z":
        raise ValueError(f"unknown normalization mode: {mode!r}")
    out = []
    for idx, inst in enumerate(ds.instances):
        v = inst.values.copy()
        for f in range(v.shape[1]):
            col = v[:, f]
            obs = inst.observed[:, f]
            if not obs.any():
                raise ValueError(f"instance {idx} ({inst.id}): feature {f} is fully missing")
            mean = col[obs].mean()
            std = col[obs].std()
            if std == 0.0:
                col[obs] = 0.0
            else:
                col[obs] = (col[obs] - mean) / std
        out.append(TimeSeriesInstance(values=v, observed=inst.observed.copy(),
                                      label=inst.label, id=inst.id))
    return Dataset(instances=tuple(out), num_classes=ds.num_classes, split=ds.split,
                   label_names=ds.label_names)


def batches(ds_or_n, batch_size: int, shuffle_seed: int) -> list[np.ndarray]:
    """Deterministic shuffled partition into batches of indices.

    The trailing batch is dropped only when it has fewer than 2 instances
    (instance-wise contrastive terms need at least one true negative).
    """
    batch_size = check_positive_int(batch_size, "batch_size", minimum=2)
    n = ds_or_n if isinstance(ds_or_n, int) else len(ds_or_n)
    rng = np.random.default_rng(shuffle_seed)
    perm = rng.permutation(n)
    out = []
    for start in range(0, n, batch_size):
        chunk = perm[start:start + batch_size]
        if len(chunk) >= 2:
            out.append(chunk)
    return out
