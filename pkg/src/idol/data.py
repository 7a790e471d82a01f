"""Synthetic tropical-cyclone sample generation and the on-disk dataset format.

Every sample is rendered from a Holland pressure profile, so the four labels
(wind speed v, central pressure p, inner-core radius ri, outer-core radius ro)
are smooth functionals of the profile parameters and the task dependencies
encoded downstream genuinely exist in the data.  Train/test splits use
disjoint storm ids, and a ShiftSpec moves the test distribution in a
controlled way (covariate, label or concept shift).

Disk format: one ``manifest.json`` plus little-endian float32 raw arrays
(``<split>_<name>.f32``, row-major); shapes live only in the manifest.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List

import numpy as np
from scipy.ndimage import gaussian_filter

from idol.holland import HollandParams

FORMAT_VERSION = 1

# Outer-core radius is where the normalized pressure deficit falls to 10%,
# the inner core where it falls to 75%, the width factor where it halves.
_OUTER_LEVEL = 0.10
_INNER_LEVEL = 0.75
_LN_OUTER = math.log(1.0 / (1.0 - _OUTER_LEVEL))
_LN_INNER = math.log(1.0 / (1.0 - _INNER_LEVEL))
_LN_HALF = math.log(2.0)

# Wind speed from pressure deficit: v = K_WIND * sqrt(p_n - p_c) (m/s per
# sqrt(hPa)); concept shift perturbs this constant on the test split.
K_WIND = 3.92

SHIFT_KINDS = ("none", "covariate", "label", "concept")


class DatasetError(RuntimeError):
    """Raised for manifest/array inconsistencies when loading."""


@dataclass(frozen=True)
class ShiftSpec:
    kind: str = "none"
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SHIFT_KINDS:
            raise ValueError(f"unknown shift kind {self.kind!r}")
        if self.magnitude < 0:
            raise ValueError("shift magnitude must be >= 0")


@dataclass(frozen=True)
class GeneratorConfig:
    counts: Dict[str, int] = field(
        default_factory=lambda: {"train": 512, "valid": 64, "test": 64}
    )
    grid: int = 64
    storm_len: int = 4
    seed: int = 0
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    shift_splits: tuple = ("test",)
    noise_amp: float = 0.05

    def __post_init__(self) -> None:
        for split, n in self.counts.items():
            if n < 0:
                raise ValueError(f"negative count for split {split!r}")
        if self.grid < 8:
            raise ValueError("grid too small")
        if self.storm_len < 1:
            raise ValueError("storm_len must be >= 1")
        object.__setattr__(self, "shift_splits", tuple(self.shift_splits))
        for split in self.shift_splits:
            if split not in self.counts:
                raise ValueError(f"shift split {split!r} not in counts")

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(GeneratorConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "shift" in d:
            d["shift"] = ShiftSpec(**d["shift"])
        if "shift_splits" in d:
            d["shift_splits"] = tuple(d["shift_splits"])
        return GeneratorConfig(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["shift_splits"] = list(self.shift_splits)
        return d


@dataclass
class TCSample:
    """One timestamped synthetic example.

    ir:     (t=2, c=2, h, w) float32 in [0, 1]
    dev:    (prev_level, minutes_named)
    cor:    (tcf, tcc, tce, tcw) -- first three in (0, 1], tcw in km
    labels: (v m/s, p hPa, ri km, ro km)
    """

    ir: np.ndarray
    dev: np.ndarray
    cor: np.ndarray
    labels: np.ndarray
    storm_id: int
    t: int
    params: HollandParams


def _sample_params(rng: np.random.Generator, shift: ShiftSpec, shifted: bool):
    """Draw Holland parameters plus the wind constant for one storm state."""
    m = shift.magnitude if shifted else 0.0
    B = rng.uniform(1.0, 2.5)
    p_n = rng.uniform(1005.0, 1015.0)
    if shifted and shift.kind == "label":
        p_c = rng.uniform(900.0, 1000.0 - 60.0 * m)
        ro = rng.uniform(50.0 + 120.0 * min(m, 2.0), 400.0)
    else:
        p_c = rng.uniform(900.0, 1000.0)
        ro = rng.uniform(50.0, 400.0)
    A = _LN_OUTER * ro**B
    k = K_WIND
    if shifted and shift.kind == "concept":
        k = K_WIND * (1.0 + 0.35 * m)
    return HollandParams(A=A, B=B, p_n=p_n, p_c=p_c), k


def _labels_from_params(params: HollandParams, k: float) -> np.ndarray:
    ri = (params.A / _LN_INNER) ** (1.0 / params.B)
    ro = (params.A / _LN_OUTER) ** (1.0 / params.B)
    v = k * math.sqrt(params.deficit)
    return np.array([v, params.p_c, ri, ro], dtype=np.float64)


def _deficit_field(params: HollandParams, grid: int, extent_km: float):
    """Normalized pressure-deficit field on a centered square grid."""
    half = extent_km / 2.0
    coords = (np.arange(grid) + 0.5) / grid * extent_km - half
    xx, yy = np.meshgrid(coords, coords)
    r = np.sqrt(xx**2 + yy**2)
    r = np.maximum(r, 1e-3)
    return 1.0 - np.exp(-params.A / r**params.B), r


def _render_frame(
    params: HollandParams,
    grid: int,
    extent_km: float,
    rng: np.random.Generator,
    noise_amp: float,
    warp: float,
) -> np.ndarray:
    deficit, _ = _deficit_field(params, grid, extent_km)
    if warp > 0:
        coords = (np.arange(grid) + 0.5) / grid * extent_km - extent_km / 2
        xx, yy = np.meshgrid(coords, coords)
        theta = np.arctan2(yy, xx)
        deficit = deficit * (1.0 + warp * np.cos(theta))
    noise = gaussian_filter(rng.standard_normal((grid, grid)), sigma=2.0)
    ch0 = np.clip(deficit + noise_amp * noise, 0.0, 1.0)
    gy, gx = np.gradient(ch0)
    gmag = np.hypot(gx, gy)
    peak = gmag.max()
    ch1 = gmag / peak if peak > 0 else gmag
    return np.stack([ch0, ch1]).astype(np.float32)


def _cor_factors(params: HollandParams, labels: np.ndarray) -> np.ndarray:
    """Deterministic correlation factors of the clean rendered field."""
    ri, ro = labels[2], labels[3]
    tcf = 1.0 - ri / ro
    deficit, r = _deficit_field(params, grid=96, extent_km=2.5 * ro)
    inner = deficit[r <= ri]
    outer = deficit[r <= ro]
    tcc = float(outer.mean() / inner.mean())
    tce = float((inner**2).sum() / (deficit**2).sum())
    tcw = (params.A / _LN_HALF) ** (1.0 / params.B)
    return np.array([tcf, tcc, tce, tcw], dtype=np.float64)


def _dev_factors(v: float, rng: np.random.Generator) -> np.ndarray:
    # Saffir-Simpson-style category bins over wind speed in m/s.
    level = int(np.digitize(v, [18.0, 33.0, 43.0, 50.0, 58.0]))
    minutes = max(0.0, rng.normal(3000.0 + 40.0 * v, 800.0))
    return np.array([level, minutes], dtype=np.float64)


def _sample_rng(cfg_seed: int, shift_seed: int, storm_id: int, t: int):
    ss = np.random.SeedSequence([cfg_seed, shift_seed, storm_id, t])
    return np.random.Generator(np.random.PCG64(ss))


def generate_sample(
    config: GeneratorConfig, storm_id: int, t: int, shifted: bool
) -> TCSample:
    """Generate one sample deterministically from (config, storm_id, t).

    ``shifted`` applies the configured ShiftSpec to this sample; splits
    listed in ``config.shift_splits`` are generated with it set.
    """
    shift = config.shift
    storm_rng = _sample_rng(config.seed, shift.seed, storm_id, 0)
    params, k = _sample_params(storm_rng, shift, shifted)
    # Per-timestep evolution: the outer core grows slightly frame to frame.
    growth = storm_rng.uniform(0.01, 0.04)
    ro0 = (params.A / _LN_OUTER) ** (1.0 / params.B)
    ro_t1 = ro0 * (1.0 + growth) ** t
    ro_t0 = ro0 * (1.0 + growth) ** (t - 1)
    params_t1 = HollandParams(
        A=_LN_OUTER * ro_t1**params.B, B=params.B, p_n=params.p_n, p_c=params.p_c
    )
    params_t0 = HollandParams(
        A=_LN_OUTER * ro_t0**params.B, B=params.B, p_n=params.p_n, p_c=params.p_c
    )
    labels = _labels_from_params(params_t1, k)
    extent = 2.5 * labels[3]

    rng = _sample_rng(config.seed, shift.seed, storm_id, t + 1)
    noise_amp = config.noise_amp
    warp = 0.0
    if shifted and shift.kind == "covariate":
        noise_amp = config.noise_amp + 0.15 * shift.magnitude
        warp = 0.4 * min(shift.magnitude, 1.0)
    frame0 = _render_frame(params_t0, config.grid, extent, rng, noise_amp, warp)
    frame1 = _render_frame(params_t1, config.grid, extent, rng, noise_amp, warp)
    ir = np.stack([frame0, frame1])

    cor = _cor_factors(params_t1, labels)
    dev = _dev_factors(labels[0], rng)
    return TCSample(
        ir=ir,
        dev=dev,
        cor=cor,
        labels=labels,
        storm_id=storm_id,
        t=t,
        params=params_t1,
    )


_ARRAY_NAMES = ("ir", "dev", "cor", "labels", "meta")

# Test-split storms are offset so train/test storm ids never collide.
_SPLIT_ID_OFFSET = {"train": 0, "valid": 1_000_000, "test": 2_000_000}


def _split_samples(config: GeneratorConfig, split: str) -> Iterator[TCSample]:
    count = config.counts[split]
    offset = _SPLIT_ID_OFFSET[split]
    shifted = split in config.shift_splits
    for i in range(count):
        storm_id = offset + i // config.storm_len
        t = i % config.storm_len
        yield generate_sample(config, storm_id, t, shifted)


def generate_dataset(config: GeneratorConfig, out_dir: str) -> dict:
    """Write all splits plus ``manifest.json`` under ``out_dir``.

    Returns the manifest dict.  Byte-identical output for identical config.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest: dict = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "splits": {},
    }
    for split in config.counts:
        arrays: Dict[str, List[np.ndarray]] = {n: [] for n in _ARRAY_NAMES}
        for s in _split_samples(config, split):
            arrays["ir"].append(s.ir)
            arrays["dev"].append(s.dev)
            arrays["cor"].append(s.cor)
            arrays["labels"].append(s.labels)
            arrays["meta"].append(np.array([s.storm_id, s.t], dtype=np.float64))
        split_entry: dict = {"count": config.counts[split], "arrays": {}}
        for name, chunks in arrays.items():
            if chunks:
                arr = np.stack(chunks).astype("<f4")
            else:
                arr = np.zeros((0,), dtype="<f4")
            fname = f"{split}_{name}.f32"
            arr.tofile(os.path.join(out_dir, fname))
            split_entry["arrays"][name] = {
                "file": fname,
                "shape": list(arr.shape),
            }
        manifest["splits"][split] = split_entry
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_manifest(path: str) -> dict:
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise DatasetError(f"no manifest.json under {path}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError("unsupported dataset format version")
    return manifest


def load_split(path: str, split: str) -> Dict[str, np.ndarray]:
    """Load all arrays of one split, validating byte lengths against shapes."""
    manifest = load_manifest(path)
    if split not in manifest["splits"]:
        raise DatasetError(f"split {split!r} not in manifest")
    out = {}
    for name, entry in manifest["splits"][split]["arrays"].items():
        fpath = os.path.join(path, entry["file"])
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape)) * 4
        actual = os.path.getsize(fpath)
        if actual != expected:
            raise DatasetError(
                f"{entry['file']}: expected {expected} bytes for shape "
                f"{shape}, found {actual}"
            )
        out[name] = np.fromfile(fpath, dtype="<f4").reshape(shape)
    return out


def iter_batches(
    path: str,
    split: str,
    batch_size: int,
    shuffle_seed: int | None = None,
) -> Iterator[Dict[str, np.ndarray]]:
    """Yield batches of a split; last batch may be short.

    Order is deterministic given ``shuffle_seed`` (None keeps file order).
    """
    data = load_split(path, split)
    n = data["labels"].shape[0]
    order = np.arange(n)
    if shuffle_seed is not None:
        np.random.Generator(np.random.PCG64(shuffle_seed)).shuffle(order)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield {name: arr[idx] for name, arr in data.items()}


def split_storm_ids(path: str, split: str) -> np.ndarray:
    return load_split(path, split)["meta"][:, 0].astype(np.int64)
