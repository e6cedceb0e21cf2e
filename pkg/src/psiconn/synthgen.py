"""Ground-truth synthetic data.

* :func:`coupled_pair` - a band-limited source and a delayed, noisy copy.
* :func:`planted_dataset` / :func:`planted_record` - labelled multichannel
  epochs where each class carries its own set of delayed channel pairs.
* :func:`planted_feature_table` - a plain feature table with a few
  class-informative columns among noise columns.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .exceptions import PlanError
from .featureset import pair_to_feature
from .signal_io import (PHASE_LABELS, ChannelLayout, Epoch, MultichannelRecord,
                        PhaseSchedule)

FILTER_ORDER = 4
_PAD_S = 1.0


@dataclass(frozen=True)
class CouplingSpec:
    """Source band, signed delay (ms; positive means channel 1 leads), snr."""

    band: tuple = (4.0, 8.0)
    tau_ms: float = 20.0
    snr: float = 2.0
    duration_s: float = 2.5
    rate: float = 1000.0

    def __post_init__(self):
        lo, hi = self.band
        if not 0 < lo < hi < self.rate / 2:
            raise ValueError(f"band {self.band} must lie inside (0, {self.rate / 2})")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if not abs(self.tau_ms) < 1000 * self.duration_s / 10:
            raise ValueError("|tau| must be below a tenth of the duration")


def band_noise(n, band, rate, rng):
    """White noise through a zero-phase Butterworth band-pass."""
    pad = int(_PAD_S * rate)
    sos = butter(FILTER_ORDER, band, btype="bandpass", fs=rate, output="sos")
    return sosfiltfilt(sos, rng.standard_normal(n + 2 * pad))[pad:pad + n]


def delay_samples(tau_ms, rate):
    """Integer sample shift for ``tau_ms`` and whether it had to be rounded."""
    exact = tau_ms * rate / 1000.0
    d = int(round(exact))
    return d, not math.isclose(exact, d, abs_tol=1e-9)


def _delayed_source(n, d, band, rate, rng):
    """``(s[t], s[t - d])`` for a band-limited source ``s``."""
    long = band_noise(n + 2 * abs(d), band, rate, rng)
    lead = long[abs(d):abs(d) + n]
    lag = long[abs(d) - d:abs(d) - d + n]
    return lead, lag


def coupled_pair(spec: CouplingSpec = CouplingSpec(), rng=None):
    """Two-channel record where channel 2 is channel 1 delayed by ``tau`` plus noise.

    Channel 1 is band-limited noise. Channel 2 adds independent white noise
    with variance ``var(channel 1) / snr``.

    Returns
    -------
    record : MultichannelRecord
    manifest : dict
        Requested and realised delay; ``warning`` is set when rounding to an
        integer sample count changed the delay.
    """
    rng = np.random.default_rng(rng)
    n = int(round(spec.duration_s * spec.rate))
    d, rounded = delay_samples(spec.tau_ms, spec.rate)
    x, y = _delayed_source(n, d, spec.band, spec.rate, rng)
    noise = rng.standard_normal(n) * math.sqrt(np.var(x) / spec.snr)
    samples = np.column_stack([x, y + noise])
    layout = ChannelLayout(("src", "dst"), ("F", "F"))
    manifest = {"spec": asdict(spec), "delay_samples": d,
                "delay_ms": 1000.0 * d / spec.rate}
    if rounded:
        manifest["warning"] = (f"delay {spec.tau_ms} ms rounded to {d} samples "
                               f"({manifest['delay_ms']} ms)")
    return MultichannelRecord(samples, spec.rate, layout), manifest


# --------------------------------------------------------------------------
# planted multichannel dataset

def round_robin_matchings(n):
    """The ``n - 1`` perfect matchings of the circle method for even ``n``."""
    if n < 2 or n % 2:
        raise ValueError("need an even number of channels >= 2")
    others = list(range(1, n))
    rounds = []
    for _ in range(n - 1):
        ring = [0] + others
        rounds.append([tuple(sorted((ring[k], ring[n - 1 - k]))) for k in range(n // 2)])
        others = others[-1:] + others[:-1]
    return rounds


@dataclass(frozen=True)
class PlantedPlan:
    """Class-specific delayed pairs on top of white channel noise.

    ``plants`` maps each label to ``[(i, j, tau_ms), ...]``; a positive delay
    makes ``i`` lead ``j``. When omitted, ``pairs_per_class`` disjoint pairs
    are drawn per class from distinct round-robin matchings so that no pair
    is reused across classes, with delays alternating in sign.
    """

    n_channels: int = 8
    n_epochs_per_class: int = 100
    pairs_per_class: int = 3
    tau_ms: float = 20.0
    source_var: float = 2.0
    band: tuple = (4.0, 8.0)
    epoch_len_s: float = 2.5
    rate: float = 1000.0
    epochs_per_phase: int = 3
    plants: dict | None = field(default=None, hash=False, compare=False)

    def __post_init__(self):
        if self.n_channels < 2:
            raise PlanError("need at least two channels")
        if self.n_epochs_per_class < 1:
            raise PlanError("need at least one epoch per class")
        if not self.source_var > 0:
            raise PlanError("source_var must be positive")
        if self.epochs_per_phase < 1:
            raise PlanError("epochs_per_phase must be >= 1")
        plants = self.resolve()
        seen = {}
        for lab in PHASE_LABELS:
            used = set()
            for i, j, tau in plants[lab]:
                if not (0 <= i < self.n_channels and 0 <= j < self.n_channels) or i == j:
                    raise PlanError(f"bad channel pair ({i}, {j}) in class {lab}")
                key = (min(i, j), max(i, j))
                if key in used:
                    raise PlanError(f"pair {key} planted twice in class {lab}")
                used.add(key)
                # same pair and same signed lag in two classes makes them
                # indistinguishable on that feature
                lag = tau if i < j else -tau
                if seen.get((key, lag)) not in (None, lab):
                    raise PlanError(f"pair {key} planted with the same delay in "
                                    f"classes {seen[(key, lag)]} and {lab}")
                seen[(key, lag)] = lab

    def resolve(self) -> dict:
        """Explicit ``{label: [(i, j, tau_ms), ...]}`` for every class."""
        if self.plants is not None:
            out = {lab: [tuple(p) for p in self.plants.get(lab, ())] for lab in PHASE_LABELS}
            return {lab: [(int(i), int(j), float(t)) for i, j, t in v]
                    for lab, v in out.items()}
        k = self.pairs_per_class
        if k == 0:
            return {lab: [] for lab in PHASE_LABELS}
        n = self.n_channels
        if n % 2 or k > n // 2 or len(PHASE_LABELS) * k > n * (n - 1) // 2:
            raise PlanError(f"cannot place {k} disjoint pairs per class on {n} channels")
        rounds = round_robin_matchings(n)
        if len(rounds) < len(PHASE_LABELS):
            raise PlanError("too few channels for class-specific matchings")
        out = {}
        for c, lab in enumerate(PHASE_LABELS):
            pairs = rounds[c][:k]
            out[lab] = [(i, j, self.tau_ms if (c + t) % 2 == 0 else -self.tau_ms)
                        for t, (i, j) in enumerate(pairs)]
        return out

    def to_dict(self):
        d = asdict(self)
        d["plants"] = {lab: [list(p) for p in v] for lab, v in self.resolve().items()}
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        for key in ("band",):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def _planted_epoch(plan, plants, rng):
    n = int(round(plan.epoch_len_s * plan.rate))
    x = rng.standard_normal((n, plan.n_channels))
    scale = math.sqrt(plan.source_var)
    for i, j, tau in plants:
        d, _ = delay_samples(tau, plan.rate)
        lead, lag = _delayed_source(n, d, plan.band, plan.rate, rng)
        norm = scale / np.std(lead)
        x[:, i] += norm * lead
        x[:, j] += norm * lag
    return x


def planted_manifest(plan: PlantedPlan, seed) -> dict:
    plants = plan.resolve()
    n = plan.n_channels
    df = 1.0
    n_terms = int(round((plan.band[1] - plan.band[0]) / df))
    per_class = {}
    delays = {}
    for lab in PHASE_LABELS:
        fids = []
        for i, j, tau in plants[lab]:
            a, b = min(i, j), max(i, j)
            fid = pair_to_feature(a, b, n)
            fids.append(fid)
            delays.setdefault(str(fid), {})[lab] = tau if i < j else -tau
        per_class[lab] = sorted(fids)
    all_ids = sorted({f for v in per_class.values() for f in v})
    d_ms = {k: {lab: 1000.0 * delay_samples(t, plan.rate)[0] / plan.rate
                for lab, t in v.items()} for k, v in delays.items()}
    return {"seed": seed, "planted_features": all_ids, "per_class": per_class,
            "delays_ms": d_ms,
            # noise-free limit of psi for a lag tau at unit coherency
            "psi_limit": {k: {lab: n_terms * math.sin(2 * math.pi * df * t / 1000.0)
                              for lab, t in v.items()} for k, v in d_ms.items()},
            "plan": plan.to_dict()}


def planted_dataset(plan: PlantedPlan = PlantedPlan(), rng=None):
    """Labelled epochs and a ground-truth manifest.

    Every epoch draws from its own child of ``SeedSequence(rng)`` so
    generation is order-independent.

    Returns
    -------
    epochs : list of Epoch
        Ordered by class (IN, IH, EX, EH), ``n_epochs_per_class`` each.
    manifest : dict
        ``planted_features`` (pair feature ids over all classes),
        ``per_class`` ids, ``delays_ms`` keyed by feature id then class.
    """
    seed = _seed_of(rng)
    plants = plan.resolve()
    children = np.random.SeedSequence(seed).spawn(len(PHASE_LABELS) * plan.n_epochs_per_class)
    epochs = []
    for c, lab in enumerate(PHASE_LABELS):
        for e in range(plan.n_epochs_per_class):
            g = np.random.default_rng(children[c * plan.n_epochs_per_class + e])
            epochs.append(Epoch(_planted_epoch(plan, plants[lab], g), lab,
                                e * plan.epoch_len_s, plan.rate))
    return epochs, planted_manifest(plan, seed)


def planted_record(plan: PlantedPlan = PlantedPlan(), rng=None):
    """The planted epochs laid end to end as one record with a phase schedule.

    Phases cycle IN, IH, EX, EH with ``epochs_per_phase`` epochs each (the
    last cycle may be shorter), so epoching the record with ``epoch_len_s``
    returns exactly the epochs of :func:`planted_dataset`.
    """
    epochs, manifest = planted_dataset(plan, rng)
    by_class = {lab: [ep for ep in epochs if ep.label == lab] for lab in PHASE_LABELS}
    chunks, phases = [], []
    t = 0.0
    m = plan.epochs_per_phase
    for start in range(0, plan.n_epochs_per_class, m):
        for lab in PHASE_LABELS:
            block = by_class[lab][start:start + m]
            chunks.extend(ep.samples for ep in block)
            phases.append((lab, t, len(block) * plan.epoch_len_s))
            t += len(block) * plan.epoch_len_s
    layout = ChannelLayout.generic(plan.n_channels)
    record = MultichannelRecord(np.concatenate(chunks), plan.rate, layout)
    return record, PhaseSchedule(phases), manifest


def _seed_of(rng):
    if rng is None:
        return 0
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(np.random.default_rng(rng).integers(2 ** 31))


# --------------------------------------------------------------------------
# planted feature table

_CODES = np.array([[1, 1, -1, -1], [1, -1, 1, -1], [1, -1, -1, 1]], dtype=float)


def planted_feature_table(n_features=100, n_informative=10, n_per_class=120,
                          effect=0.8, rng=None):
    """Four-class table with ``n_informative`` shifted columns among N(0, 1) noise.

    Informative column ``t`` adds ``effect * code[t % 3][class]`` where the
    codes are the three balanced two-versus-two splits of the classes.

    Returns
    -------
    X : ndarray of shape (4 * n_per_class, n_features)
    y : ndarray of str
    informative : ndarray of int
        Sorted ids of the informative columns.
    """
    if not 0 < n_informative <= n_features:
        raise ValueError("need 0 < n_informative <= n_features")
    rng = np.random.default_rng(rng)
    cls = np.repeat(np.arange(len(PHASE_LABELS)), n_per_class)
    y = np.array(PHASE_LABELS)[cls]
    X = rng.standard_normal((len(y), n_features))
    informative = np.sort(rng.choice(n_features, n_informative, replace=False))
    for t, f in enumerate(informative):
        X[:, f] += effect * _CODES[t % len(_CODES)][cls]
    return X, y, informative
