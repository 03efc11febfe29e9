"""C-MAPSS ingestion, censoring simulation, windowing, normalization and synthetic data."""

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .container import read_container, write_container
from .utils import make_rng

FAILED = "failed"
CENSORED = "censored"

N_SETTINGS = 3
N_SENSORS = 21
N_COLUMNS = 2 + N_SETTINGS + N_SENSORS

PROFILES = ("fd001", "fd004", "synthetic")

# (altitude kft, Mach, throttle resolver angle) of the six flight conditions
OPERATING_CONDITIONS = np.array([
    [0.0, 0.00, 100.0],
    [10.0, 0.25, 100.0],
    [20.0, 0.70, 100.0],
    [25.0, 0.62, 60.0],
    [35.0, 0.84, 100.0],
    [42.0, 0.84, 100.0],
])
CONDITION_TOLERANCE = np.array([0.5, 0.05, 0.5])


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class InstanceSeries:
    """One engine: per-cycle sensor readings, operating settings and life status.

    ``failure_time`` is known only for failed units. ``true_rul`` is the RUL
    at the last observed cycle when known (0 for run-to-failure units, the
    ground truth for test units).
    """

    unit_id: int
    sensors: np.ndarray
    settings: np.ndarray
    status: str = FAILED
    failure_time: int = None
    true_rul: float = None
    features: np.ndarray = field(default=None, repr=False)

    @property
    def length(self):
        return self.sensors.shape[0]


@dataclass
class NormStats:
    """Train-split z-normalization of the continuous feature columns.

    ``kept`` indexes the continuous columns that survive (non-zero variance);
    the trailing ``n_onehot`` columns pass through untouched.
    """

    mean: np.ndarray
    std: np.ndarray
    kept: np.ndarray
    n_continuous: int
    n_onehot: int = 0

    @property
    def dropped(self):
        return np.setdiff1d(np.arange(self.n_continuous), self.kept)

    @property
    def n_features(self):
        return len(self.kept) + self.n_onehot

    def apply(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.shape[1] != self.n_continuous + self.n_onehot:
            raise ValueError(f"expected {self.n_continuous + self.n_onehot} raw features, got {features.shape[1]}")
        cont = (features[:, self.kept] - self.mean[self.kept]) / self.std[self.kept]
        return np.hstack([cont, features[:, self.n_continuous:]])

    def to_meta(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "kept": self.kept.tolist(),
                "n_continuous": self.n_continuous, "n_onehot": self.n_onehot}

    @classmethod
    def from_meta(cls, meta):
        return cls(np.array(meta["mean"], dtype=np.float64), np.array(meta["std"], dtype=np.float64),
                   np.array(meta["kept"], dtype=np.int64), int(meta["n_continuous"]), int(meta["n_onehot"]))


@dataclass
class DatasetBundle:
    train: list
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    profile: str = "fd001"
    norm_stats: NormStats = None

    @property
    def n_features(self):
        for split in (self.train, self.validation, self.test):
            for inst in split:
                if inst.features is not None:
                    return inst.features.shape[1]
        return None


@dataclass
class WindowSet:
    """Truncated input windows with exact RUL or censored lower-bound labels."""

    inputs: list
    values: np.ndarray
    censored: np.ndarray
    unit_ids: np.ndarray
    t0: np.ndarray

    def __len__(self):
        return len(self.inputs)

    @classmethod
    def empty(cls):
        return cls([], np.zeros(0), np.zeros(0, bool), np.zeros(0, np.int64), np.zeros(0, np.int64))

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls([x for s in sets for x in s.inputs],
                   np.concatenate([s.values for s in sets]),
                   np.concatenate([s.censored for s in sets]),
                   np.concatenate([s.unit_ids for s in sets]),
                   np.concatenate([s.t0 for s in sets]))

    def subset(self, keep):
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        return WindowSet([self.inputs[i] for i in keep], self.values[keep], self.censored[keep],
                         self.unit_ids[keep], self.t0[keep])

    def failed_only(self):
        return self.subset(~self.censored)

    def for_mode(self, mode):
        """Windows a training mode may use: ``orc`` keeps censored ones, ``mr``/``or`` do not."""
        if mode == "orc":
            return self
        if mode in ("mr", "or"):
            return self.failed_only()
        raise ValueError(f"unknown mode {mode!r}")

    def to_arrays(self, prefix):
        lengths = np.array([x.shape[0] for x in self.inputs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        p = self.inputs[0].shape[1] if self.inputs else 0
        data = np.vstack(self.inputs) if self.inputs else np.zeros((0, p))
        return {f"{prefix}.data": data, f"{prefix}.offsets": offsets, f"{prefix}.value": self.values,
                f"{prefix}.censored": self.censored, f"{prefix}.unit": self.unit_ids, f"{prefix}.t0": self.t0}

    @classmethod
    def from_arrays(cls, arrays, prefix):
        data = arrays[f"{prefix}.data"]
        offsets = arrays[f"{prefix}.offsets"]
        inputs = [data[offsets[i]:offsets[i + 1]] for i in range(len(offsets) - 1)]
        return cls(inputs, arrays[f"{prefix}.value"], arrays[f"{prefix}.censored"].astype(bool),
                   arrays[f"{prefix}.unit"], arrays[f"{prefix}.t0"])


# -- parsing ------------------------------------------------------------------

def _read_table(path):
    """Group rows of a C-MAPSS text file by unit, validating as we go."""
    units = {}
    order = []
    last = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < N_COLUMNS:
                raise DataFormatError(f"{path}:{lineno}: expected {N_COLUMNS} columns, found {len(fields)}")
            try:
                values = [float(f) for f in fields[:N_COLUMNS]]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field") from None
            unit, cycle = values[0], values[1]
            if unit != int(unit) or cycle != int(cycle):
                raise DataFormatError(f"{path}:{lineno}: unit and cycle must be integers")
            unit, cycle = int(unit), int(cycle)
            if unit != last:
                if unit in units:
                    raise DataFormatError(f"{path}:{lineno}: rows of unit {unit} are not contiguous")
                if cycle != 1:
                    raise DataFormatError(f"{path}:{lineno}: unit {unit} does not start at cycle 1")
                units[unit] = []
                order.append(unit)
                last = unit
            elif cycle != units[unit][-1][1] + 1:
                raise DataFormatError(f"{path}:{lineno}: cycle {cycle} of unit {unit} breaks the cycle order")
            units[unit].append(values)
    if not order:
        raise DataFormatError(f"{path}: no data rows")
    return [(u, np.array(units[u])) for u in order]


def _read_rul(path):
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                values.append(float(s.split()[0]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: RUL value is not numeric") from None
    return values


def parse_cmapss(train_path, test_path=None, rul_path=None):
    """Read C-MAPSS train/test/RUL files into an unnormalized bundle.

    Train units are run to failure (``failure_time`` = last cycle). Test
    units are operational with their ground-truth RUL attached in file order.
    """
    train = [InstanceSeries(u, rows[:, 5:], rows[:, 2:5], FAILED, int(rows.shape[0]), 0.0)
             for u, rows in _read_table(train_path)]
    test = []
    if test_path is not None:
        table = _read_table(test_path)
        if rul_path is None:
            raise DataFormatError("a test file needs its RUL file")
        ruls = _read_rul(rul_path)
        if len(ruls) != len(table):
            raise DataFormatError(f"{rul_path}:{len(ruls)}: {len(ruls)} RUL values for {len(table)} test units")
        test = [InstanceSeries(u, rows[:, 5:], rows[:, 2:5], CENSORED, None, r)
                for (u, rows), r in zip(table, ruls)]
    return DatasetBundle(train=train, test=test, profile=detect_profile(train))


def read_series(path, rul_path=None):
    """Read operational units (no failure observed) from a C-MAPSS-format file.

    With ``rul_path`` the ground-truth RUL of each unit is attached.
    """
    table = _read_table(path)
    ruls = [None] * len(table)
    if rul_path is not None:
        ruls = _read_rul(rul_path)
        if len(ruls) != len(table):
            raise DataFormatError(f"{rul_path}:{len(ruls)}: {len(ruls)} RUL values for {len(table)} units")
    return [InstanceSeries(u, rows[:, 5:], rows[:, 2:5], CENSORED, None, r) for (u, rows), r in zip(table, ruls)]


def detect_profile(instances):
    settings = np.vstack([inst.settings for inst in instances])
    if np.ptp(settings[:, 0]) > 1.0:
        return "fd004"
    return "fd001"


def write_cmapss(instances, path):
    """Write instances in the 26-column text format; sensors are padded to 21 columns."""
    with open(path, "w") as fh:
        for inst in instances:
            sensors = inst.sensors
            if sensors.shape[1] < N_SENSORS:
                pad = np.ones((sensors.shape[0], N_SENSORS - sensors.shape[1]))
                sensors = np.hstack([sensors, pad])
            for t in range(inst.length):
                row = [f"{inst.unit_id}", f"{t + 1}"]
                row += [f"{v:.6f}" for v in inst.settings[t]]
                row += [f"{v:.6f}" for v in sensors[t]]
                fh.write(" ".join(row) + "\n")


# -- splitting and censoring ----------------------------------------------------

def split_validation(bundle, fraction=0.2, seed=0):
    """Move a random ``fraction`` of the training units into the validation split."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    units = list(bundle.train) + list(bundle.validation)
    if len(units) < 2:
        raise ValueError("need at least two units to split")
    n_val = min(len(units) - 1, max(1, int(round(fraction * len(units)))))
    rng = make_rng(seed, "split")
    val_idx = set(rng.choice(len(units), size=n_val, replace=False).tolist())
    train = [u for i, u in enumerate(units) if i not in val_idx]
    val = [u for i, u in enumerate(units) if i in val_idx]
    return replace(bundle, train=train, validation=val)


def n_censored_for(n_units, percent):
    # floor reproduces 40/56/72 of 80 and 99/139/179 of 199
    return int(math.floor(percent * n_units / 100.0 + 1e-9))


def simulate_censoring(instances, percent, rng):
    """Turn ``percent``% of failed instances into censored ones.

    Each chosen instance is truncated at a cycle drawn uniformly from
    ``[1, F - 1]`` and its failure time is forgotten.
    """
    if not 0 <= percent < 100:
        raise ValueError("censoring percentage must lie in [0, 100)")
    instances = list(instances)
    n_c = n_censored_for(len(instances), percent)
    if n_c == 0:
        return instances
    chosen = set(rng.choice(len(instances), size=n_c, replace=False).tolist())
    out = []
    for i, inst in enumerate(instances):
        if i in chosen:
            if inst.status != FAILED or inst.length < 2:
                raise ValueError(f"unit {inst.unit_id} cannot be censored")
            t = int(rng.integers(1, inst.length))
            feats = None if inst.features is None else inst.features[:t]
            inst = replace(inst, sensors=inst.sensors[:t], settings=inst.settings[:t], status=CENSORED,
                           failure_time=None, true_rul=None, features=feats)
        out.append(inst)
    return out


# -- features -----------------------------------------------------------------

def condition_index(settings):
    """Index of the canonical operating condition for each settings row."""
    settings = np.asarray(settings, dtype=np.float64)
    dev = np.abs(settings[:, None, :] - OPERATING_CONDITIONS[None, :, :]) / CONDITION_TOLERANCE
    score = dev.max(axis=2)
    idx = score.argmin(axis=1)
    bad = score[np.arange(len(idx)), idx] > 1.0
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise DataFormatError(f"operating settings {settings[row].tolist()} match none of the six conditions")
    return idx


def instance_features(inst, profile):
    if profile in ("fd001", "synthetic"):
        return np.asarray(inst.sensors, dtype=np.float64)
    if profile == "fd004":
        onehot = np.eye(len(OPERATING_CONDITIONS))[condition_index(inst.settings)]
        return np.hstack([inst.sensors, onehot])
    raise ValueError(f"unknown profile {profile!r}")


def build_features(bundle, profile=None):
    """Attach raw feature matrices: sensors only, plus a 6-dim condition one-hot for fd004."""
    profile = profile or bundle.profile

    def convert(split):
        return [replace(inst, features=instance_features(inst, profile)) for inst in split]

    return replace(bundle, train=convert(bundle.train), validation=convert(bundle.validation),
                   test=convert(bundle.test), profile=profile)


def n_onehot_for(profile):
    return len(OPERATING_CONDITIONS) if profile == "fd004" else 0


def fit_norm_stats(instances, n_onehot=0):
    rows = np.vstack([inst.features for inst in instances])
    n_cont = rows.shape[1] - n_onehot
    cont = rows[:, :n_cont]
    mean = cont.mean(axis=0)
    std = cont.std(axis=0)
    kept = np.flatnonzero(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    std = np.where(std > 0, std, 1.0)
    return NormStats(mean, std, kept.astype(np.int64), n_cont, n_onehot)


def z_normalize(bundle):
    """Fit z-normalization on the train split and apply it to every split."""
    if not bundle.train:
        raise ValueError("train split is empty")
    stats = fit_norm_stats(bundle.train, n_onehot_for(bundle.profile))

    def apply(split):
        return [replace(inst, features=stats.apply(inst.features)) for inst in split]

    return stats, replace(bundle, train=apply(bundle.train), validation=apply(bundle.validation),
                          test=apply(bundle.test), norm_stats=stats)


# -- windows ------------------------------------------------------------------

def make_windows(instance, n_windows=20, max_len=360, rng=None):
    """Truncate an instance at distinct random points ``t0`` in ``[1, T-1]``.

    Each window holds the most recent ``max_len`` cycles up to ``t0``. Failed
    instances get the exact label ``F - t0``; censored ones the lower bound
    ``T - t0``.
    """
    feats = instance.features if instance.features is not None else instance.sensors
    length = instance.length
    if length < 2:
        raise ValueError(f"unit {instance.unit_id} is too short to window (T={length})")
    n = min(n_windows, length - 1)
    t0 = np.sort(rng.choice(np.arange(1, length), size=n, replace=False))
    inputs = [feats[max(0, t - max_len):t] for t in t0]
    if instance.status == FAILED:
        values = (instance.failure_time - t0).astype(np.float64)
    else:
        values = (length - t0).astype(np.float64)
    censored = np.full(n, instance.status != FAILED)
    return WindowSet(inputs, values, censored, np.full(n, instance.unit_id, dtype=np.int64), t0.astype(np.int64))


def _is_lower_bound(instance):
    return instance.status != FAILED and instance.true_rul is None


def last_window(instance, max_len=360):
    """The most recent ``max_len`` cycles of an instance, labelled with its true RUL."""
    feats = instance.features if instance.features is not None else instance.sensors
    rul = np.nan if instance.true_rul is None else float(instance.true_rul)
    return WindowSet([feats[-max_len:]], np.array([rul]), np.array([_is_lower_bound(instance)]),
                     np.array([instance.unit_id], dtype=np.int64), np.array([instance.length], dtype=np.int64))


def windows_for(instances, n_windows=20, max_len=360, rng=None):
    sets = [make_windows(inst, n_windows, max_len, rng) for inst in instances if inst.length >= 2]
    return WindowSet.concat(sets)


def full_series(instances):
    """One entry per unit holding its whole (normalized) feature sequence."""
    sets = []
    for inst in instances:
        rul = np.nan if inst.true_rul is None else float(inst.true_rul)
        sets.append(WindowSet([inst.features], np.array([rul]), np.array([_is_lower_bound(inst)]),
                              np.array([inst.unit_id], dtype=np.int64), np.array([inst.length], dtype=np.int64)))
    return WindowSet.concat(sets)


# -- synthetic data -------------------------------------------------------------

def generate_synthetic(n_units=100, noise_level=0.3, censor_percent=0, seed=0, n_sensors=8, n_test=None,
                       unit_variation=0.2):
    """Run-to-failure units driven by a few latent degradation signals.

    Lifetimes are drawn from ``[120, 350]``. Latent signals are two
    exponentials in the remaining life (time constants 30 and 70 cycles) and
    the linear life fraction. Every sensor mixes them with same-sign weights,
    so without noise each sensor is a smooth monotone trajectory. Test units
    are cut at a random RUL in ``[1, 150]`` with the truth attached.

    ``unit_variation`` scales engine-to-engine differences: a per-unit
    degradation-rate factor ``exp(N(0, v))`` on the time constants and
    per-sensor manufacturing offsets with standard deviation ``v``.
    """
    if n_units < 4:
        raise ValueError("need at least 4 units")
    n_test = n_units if n_test is None else n_test
    rng = make_rng(seed, "synth")
    n_latent = 3
    signs = rng.choice([-1.0, 1.0], size=n_sensors)
    mixing = signs[:, None] * rng.uniform(0.2, 1.0, size=(n_sensors, n_latent))
    base = rng.uniform(-1.0, 1.0, size=n_sensors)
    taus = np.array([30.0, 70.0])

    def unit(uid):
        life = int(rng.integers(120, 351))
        t = np.arange(1, life + 1, dtype=np.float64)
        remaining = life - t
        rate = np.exp(unit_variation * rng.standard_normal())
        tau = taus * rate
        latent = np.column_stack([np.exp(-remaining / tau[0]), np.exp(-remaining / tau[1]), t / life])
        offset = unit_variation * rng.standard_normal(n_sensors)
        sensors = base + offset + latent @ mixing.T
        if noise_level > 0:
            sensors = sensors + noise_level * rng.standard_normal(sensors.shape)
        return InstanceSeries(uid, sensors, np.zeros((life, N_SETTINGS)), FAILED, life, 0.0)

    train = [unit(u) for u in range(1, n_units + 1)]
    test = []
    for u in range(1, n_test + 1):
        full = unit(u)
        rul = int(rng.integers(1, min(150, full.length - 10) + 1))
        cut = full.length - rul
        test.append(replace(full, sensors=full.sensors[:cut], settings=full.settings[:cut], status=CENSORED,
                            failure_time=None, true_rul=float(rul)))
    train = simulate_censoring(train, censor_percent, make_rng(seed, "censor"))
    return DatasetBundle(train=train, test=test, profile="synthetic")


# -- prepared-dataset cache -------------------------------------------------------

@dataclass
class PreparedData:
    """Normalized windows for every split plus what is needed to reproduce them."""

    train: WindowSet
    validation: WindowSet
    test: WindowSet
    norm_stats: NormStats
    profile: str
    meta: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return self.norm_stats.n_features

    def counts(self):
        out = {}
        for name in ("train", "validation", "test"):
            ws = getattr(self, name)
            out[f"{name}_windows"] = len(ws)
            out[f"{name}_units"] = int(len(np.unique(ws.unit_ids)))
        for name in ("train", "validation"):
            s = self.series.get(name)
            if s is not None:
                out[f"{name}_failed_units"] = int((~s.censored).sum())
                out[f"{name}_censored_units"] = int(s.censored.sum())
        return out


def prepare(bundle, censor_percent=0, seed=0, val_fraction=0.2, n_windows=20, max_len=360):
    """Split, censor, featurize, normalize and window a parsed or generated bundle."""
    bundle = split_validation(bundle, val_fraction, seed)
    rng = make_rng(seed, "censor")
    bundle = replace(bundle, train=simulate_censoring(bundle.train, censor_percent, rng),
                     validation=simulate_censoring(bundle.validation, censor_percent, rng))
    bundle = build_features(bundle)
    stats, bundle = z_normalize(bundle)
    wrng = make_rng(seed, "windows")
    train = windows_for(bundle.train, n_windows, max_len, wrng)
    val = windows_for(bundle.validation, n_windows, max_len, wrng)
    test = WindowSet.concat([last_window(inst, max_len) for inst in bundle.test])
    meta = {"censor_percent": censor_percent, "seed": seed, "val_fraction": val_fraction,
            "n_windows": n_windows, "max_len": max_len}
    series = {"train": full_series(bundle.train), "validation": full_series(bundle.validation),
              "test": full_series(bundle.test)}
    return PreparedData(train, val, test, stats, bundle.profile, meta, series)


def save_prepared(prepared, path):
    meta = {"kind": "prepared-dataset", "profile": prepared.profile, "n_features": prepared.n_features,
            "norm_stats": prepared.norm_stats.to_meta(), "config": prepared.meta, "counts": prepared.counts()}
    arrays = {}
    for name in ("train", "validation", "test"):
        arrays.update(getattr(prepared, name).to_arrays(f"windows.{name}"))
    for name, ws in prepared.series.items():
        arrays.update(ws.to_arrays(f"series.{name}"))
    write_container(path, meta, arrays)


def load_prepared(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    meta, arrays = read_container(path)
    if meta.get("kind") != "prepared-dataset":
        raise DataFormatError(f"{path} is not a prepared-dataset cache")
    windows = {name: WindowSet.from_arrays(arrays, f"windows.{name}") for name in ("train", "validation", "test")}
    series = {}
    for name in ("train", "validation", "test"):
        if f"series.{name}.data" in arrays:
            series[name] = WindowSet.from_arrays(arrays, f"series.{name}")
    return PreparedData(windows["train"], windows["validation"], windows["test"],
                        NormStats.from_meta(meta["norm_stats"]), meta["profile"], meta["config"], series)
