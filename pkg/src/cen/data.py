"""Age-labelled datasets: range bookkeeping, a synthetic generator, CSV I/O, splits."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

RANGE_COMMENT = "# age_range"


@dataclass(frozen=True)
class AgeRange:
    """Inclusive integer age interval [l1, lk] with k = lk - l1 + 1 discrete ages."""

    l1: int
    lk: int

    def __post_init__(self):
        if not self.l1 < self.lk:
            raise ValueError(f"AgeRange requires l1 < lk, got [{self.l1}, {self.lk}]")

    @property
    def k(self) -> int:
        return self.lk - self.l1 + 1

    @property
    def ages(self) -> np.ndarray:
        """The k discrete ages as float64, lowest first."""
        return np.arange(self.l1, self.lk + 1, dtype=np.float64)

    def contains(self, age: int) -> bool:
        return self.l1 <= age <= self.lk


def normalize_age(age: int, age_range: AgeRange) -> float:
    """Map an integer age to [0, 1], hitting 0 at l1 and 1 at lk."""
    if not age_range.contains(age):
        raise ValueError(f"age {age} outside range [{age_range.l1}, {age_range.lk}]")
    return (age - age_range.l1) / (age_range.lk - age_range.l1)


@dataclass(frozen=True)
class Sample:
    """One instance: feature vector, integer age, normalized age, one-hot index."""

    features: np.ndarray
    age: int
    y: float
    onehot_index: int


@dataclass
class Dataset:
    """An ordered, immutable collection of samples sharing one age range.

    Stored column-wise (features matrix plus age vector) so training code can
    slice minibatches without per-sample object overhead.
    """

    features: np.ndarray  # (n, d) float64
    ages: np.ndarray  # (n,) int64
    age_range: AgeRange
    provenance: str
    split: str = "train"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.ages = np.ascontiguousarray(self.ages, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError(f"Dataset features must be (n, d) with n > 0, got {self.features.shape}")
        if self.ages.shape != (self.features.shape[0],):
            raise ValueError(
                f"Dataset ages shape {self.ages.shape} does not match features {self.features.shape}"
            )
        lo, hi = int(self.ages.min()), int(self.ages.max())
        if lo < self.age_range.l1 or hi > self.age_range.lk:
            raise ValueError(
                f"ages span [{lo}, {hi}] outside declared range [{self.age_range.l1}, {self.age_range.lk}]"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def y(self) -> np.ndarray:
        """Normalized ages in [0, 1], one per sample."""
        r = self.age_range
        return (self.ages - r.l1) / float(r.lk - r.l1)

    @property
    def onehot_indices(self) -> np.ndarray:
        return self.ages - self.age_range.l1

    def sample(self, i: int) -> Sample:
        return Sample(
            features=self.features[i].copy(),
            age=int(self.ages[i]),
            y=float(self.y[i]),
            onehot_index=int(self.onehot_indices[i]),
        )


def synth_generate(
    seed: int,
    n: int,
    age_range: AgeRange,
    feature_dim: int,
    noise_sigma: float,
    n_identities: int,
) -> Dataset:
    """Deterministic synthetic age data with identity-dependent aging speed.

    Ages are drawn uniformly over the range. Each sample belongs to one of
    n_identities identities; identity j ages at its own speed, modelled as a
    power warp v = u**gamma_j of the normalized age u. Features are a fixed
    random sinusoidal embedding of the warped age plus Gaussian noise, so the
    feature-to-age map is smooth but not unique across identities.
    """
    if n <= 0 or feature_dim <= 0 or n_identities <= 0:
        raise ValueError("synth_generate: n, feature_dim, n_identities must be positive")
    if noise_sigma < 0:
        raise ValueError(f"synth_generate: noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    ages = rng.integers(age_range.l1, age_range.lk + 1, size=n)
    identity = rng.integers(0, n_identities, size=n)
    gammas = np.exp(rng.uniform(np.log(0.85), np.log(1.18), size=n_identities))
    freqs = rng.uniform(0.5, 4.0, size=feature_dim) * np.pi
    phases = rng.uniform(0.0, 2.0 * np.pi, size=feature_dim)
    # Noise is drawn unconditionally so the stream is identical across sigmas.
    noise = rng.normal(size=(n, feature_dim)) * noise_sigma
    u = (ages - age_range.l1) / float(age_range.lk - age_range.l1)
    v = u ** gammas[identity]
    features = np.sin(np.outer(v, freqs) + phases) + noise
    return Dataset(
        features=features,
        ages=ages,
        age_range=age_range,
        provenance=f"synth:seed={seed}",
    )


def split_at(dataset: Dataset, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded permutation, then cut the first n_train samples off as the train half."""
    n = len(dataset)
    if not 0 < n_train < n:
        raise ValueError(f"split: train size {n_train} leaves an empty half of {n} samples")
    order = np.random.default_rng(seed).permutation(n)
    tr, te = order[:n_train], order[n_train:]
    make = lambda idx, tag: Dataset(
        features=dataset.features[idx],
        ages=dataset.ages[idx],
        age_range=dataset.age_range,
        provenance=dataset.provenance,
        split=tag,
    )
    return make(tr, "train"), make(te, "test")


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split into (train, test) halves; fraction is the train share."""
    return split_at(dataset, round(len(dataset) * fraction), seed)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    """Write `age,f0,...` rows, preceded by a comment declaring the age range.

    Floats are written with repr so a reload reproduces the samples bit for bit.
    """
    path = Path(path)
    d = dataset.feature_dim
    header = "age," + ",".join(f"f{j}" for j in range(d))
    lines = [f"{RANGE_COMMENT} {dataset.age_range.l1} {dataset.age_range.lk}", header]
    for i in range(len(dataset)):
        row = dataset.features[i]
        lines.append(str(int(dataset.ages[i])) + "," + ",".join(repr(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n")


def load_csv(path: str | Path, age_range: AgeRange | None = None, split: str = "train") -> Dataset:
    """Load a `age,f0,...` CSV written by save_csv or by hand.

    The age range comes from the leading `# age_range l1 lk` comment when
    present, else from the age_range argument, else from the data itself.
    Malformed content raises DataError naming the offending line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"{path}: {e}") from None
    lines = text.splitlines()
    declared = age_range
    lineno = 0
    # Leading comments; only the age_range comment is interpreted.
    while lineno < len(lines) and lines[lineno].startswith("#"):
        comment = lines[lineno]
        if comment.startswith(RANGE_COMMENT):
            parts = comment[len(RANGE_COMMENT) :].split()
            if len(parts) != 2:
                raise DataError(f"{path}: line {lineno + 1}: malformed age_range comment")
            declared = AgeRange(int(parts[0]), int(parts[1]))
        lineno += 1
    if lineno >= len(lines) or not lines[lineno].strip():
        raise DataError(f"{path}: empty file (no header row)")
    header = lines[lineno].split(",")
    if header[0] != "age" or len(header) < 2:
        raise DataError(f"{path}: line {lineno + 1}: header must be 'age,f0,...'")
    d = len(header) - 1
    ages, rows = [], []
    for ln in range(lineno + 1, len(lines)):
        raw = lines[ln]
        if not raw.strip():
            continue
        cells = raw.split(",")
        if len(cells) != d + 1:
            raise DataError(f"{path}: line {ln + 1}: expected {d + 1} cells, found {len(cells)}")
        try:
            age = int(cells[0])
            feats = [float(c) for c in cells[1:]]
        except ValueError:
            raise DataError(f"{path}: line {ln + 1}: non-numeric cell") from None
        ages.append(age)
        rows.append(feats)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if declared is None:
        declared = AgeRange(min(ages), max(ages))
    return Dataset(
        features=np.array(rows, dtype=np.float64),
        ages=np.array(ages, dtype=np.int64),
        age_range=declared,
        provenance=f"csv:{path}",
        split=split,
    )


_DATA_FIELDS = (
    "source",
    "seed",
    "n_train",
    "n_test",
    "l1",
    "lk",
    "feature_dim",
    "noise_sigma",
    "n_identities",
    "split_seed",
    "train_csv",
    "test_csv",
    "eval_sigma",
)


@dataclass
class DataConfig:
    """The `data` section of a run config; strict about its key set."""

    source: str
    seed: int
    n_train: int
    n_test: int
    l1: int
    lk: int
    feature_dim: int
    noise_sigma: float
    n_identities: int
    split_seed: int
    train_csv: str | None
    test_csv: str | None
    eval_sigma: float | None

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        if not isinstance(d, dict):
            raise ConfigError("data: expected an object")
        for key in d:
            if key not in _DATA_FIELDS:
                raise ConfigError(f"data: unknown key '{key}'")
        for key in _DATA_FIELDS:
            if key not in d:
                raise ConfigError(f"data: missing key '{key}'")
        cfg = cls(**{k: d[k] for k in _DATA_FIELDS})
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _DATA_FIELDS}

    def validate(self) -> None:
        if self.source not in ("synth", "csv"):
            raise ConfigError(f"data.source must be 'synth' or 'csv', got '{self.source}'")
        if self.l1 >= self.lk:
            raise ConfigError(f"data: l1 must be < lk, got [{self.l1}, {self.lk}]")
        if self.source == "synth":
            for key in ("n_train", "n_test", "feature_dim", "n_identities"):
                if int(getattr(self, key)) <= 0:
                    raise ConfigError(f"data.{key} must be positive")
            if self.noise_sigma < 0:
                raise ConfigError("data.noise_sigma must be >= 0")
            if self.seed < 0 or self.split_seed < 0:
                raise ConfigError("data seeds must be non-negative")
        else:
            if not self.train_csv or not self.test_csv:
                raise ConfigError("data: csv source requires train_csv and test_csv paths")
        if self.eval_sigma is not None and not self.eval_sigma > 0:
            raise ConfigError("data.eval_sigma must be positive when set")

    @property
    def age_range(self) -> AgeRange:
        return AgeRange(self.l1, self.lk)


def datasets_from_config(cfg: DataConfig) -> tuple[Dataset, Dataset]:
    """Materialize the (train, test) pair a config describes."""
    if cfg.source == "synth":
        total = synth_generate(
            seed=cfg.seed,
            n=cfg.n_train + cfg.n_test,
            age_range=cfg.age_range,
            feature_dim=cfg.feature_dim,
            noise_sigma=cfg.noise_sigma,
            n_identities=cfg.n_identities,
        )
        return split_at(total, cfg.n_train, cfg.split_seed)
    train = load_csv(cfg.train_csv, age_range=cfg.age_range, split="train")
    test = load_csv(cfg.test_csv, age_range=cfg.age_range, split="test")
    if train.feature_dim != test.feature_dim:
        raise DataError(
            f"train/test feature dims differ: {train.feature_dim} vs {test.feature_dim}"
        )
    return train, test
