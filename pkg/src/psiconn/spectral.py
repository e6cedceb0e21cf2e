"""Cross-spectra, complex coherency and the phase slope index.

Sign convention: ``psi[i, j] > 0`` means channel ``i`` leads channel ``j``.
With ``S_ij(f) = mean(X_i(f) * conj(X_j(f)))`` a lag of ``j`` behind ``i`` by
``tau`` gives coherency phase ``+2*pi*f*tau``, which increases with ``f``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import BandResolutionError, SpectralConfigError
from .featureset import PairIndex
from .validation import check_epochs


@dataclass(frozen=True)
class BandSpec:
    name: str
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not 0 < self.f_lo < self.f_hi:
            raise ValueError(f"band {self.name}: need 0 < f_lo < f_hi")

    def check_rate(self, rate):
        if not self.f_hi < rate / 2:
            raise ValueError(f"band {self.name} reaches Nyquist for rate {rate}")

    def to_dict(self):
        return {"name": self.name, "f_lo": self.f_lo, "f_hi": self.f_hi}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["name"], float(doc["f_lo"]), float(doc["f_hi"]))


DEFAULT_BANDS = (
    BandSpec("theta", 4.0, 8.0),
    BandSpec("alpha1", 8.0, 10.0),
    BandSpec("alpha2", 10.0, 12.0),
    BandSpec("beta1", 12.0, 18.0),
    BandSpec("beta2", 18.0, 21.0),
    BandSpec("beta3", 21.0, 30.0),
    BandSpec("low_gamma", 30.0, 45.0),
)


def get_band(name) -> BandSpec:
    if isinstance(name, BandSpec):
        return name
    for b in DEFAULT_BANDS:
        if b.name == name:
            return b
    raise KeyError(f"unknown band {name!r}")


@dataclass(frozen=True)
class SpectralConfig:
    """Welch segmentation. Defaults give 4 segments per 2.5 s epoch, 1 Hz bins."""

    rate: float = 1000.0
    seg_len_s: float = 1.0
    overlap_frac: float = 0.5
    window: str = "hann"
    normalize: bool = False

    def __post_init__(self):
        if not 0 <= self.overlap_frac < 1:
            raise SpectralConfigError("overlap_frac must lie in [0, 1)")
        if self.nperseg < 8:
            raise SpectralConfigError(
                f"segment of {self.seg_len_s}s at {self.rate}Hz has fewer than 8 samples")

    @property
    def nperseg(self) -> int:
        return int(round(self.seg_len_s * self.rate))

    @property
    def step(self) -> int:
        return max(1, int(round(self.nperseg * (1 - self.overlap_frac))))

    @property
    def df(self) -> float:
        return self.rate / self.nperseg

    def n_segments(self, n_samples: int) -> int:
        if n_samples < self.nperseg:
            return 0
        return (n_samples - self.nperseg) // self.step + 1

    def to_dict(self):
        return {"rate": self.rate, "seg_len_s": self.seg_len_s,
                "overlap_frac": self.overlap_frac, "window": self.window,
                "normalize": self.normalize}


@dataclass(frozen=True, eq=False)
class CrossSpectralEstimate:
    S: np.ndarray      # [n_channels, n_channels, n_freqs]
    freqs: np.ndarray


@dataclass(frozen=True, eq=False)
class CoherencySpectrum:
    C: np.ndarray
    freqs: np.ndarray


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    psi: np.ndarray
    band: BandSpec
    channel_names: tuple = field(default=())

    def to_json(self) -> dict:
        return {"band": self.band.to_dict(),
                "channel_names": list(self.channel_names),
                "psi": self.psi.tolist()}

    @classmethod
    def from_json(cls, doc) -> "ConnectivityMatrix":
        return cls(np.array(doc["psi"], dtype=float), BandSpec.from_dict(doc["band"]),
                   tuple(doc.get("channel_names", ())))

    def to_csv(self) -> str:
        return "\n".join(",".join(repr(float(v)) for v in row)
                         for row in self.psi) + "\n"


def _samples(epoch):
    x = getattr(epoch, "samples", epoch)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def segment_spectra(epoch, config: SpectralConfig, fmax=None):
    """Tapered segment FFTs ``[n_segments, n_freqs, n_channels]`` and frequencies."""
    x = _samples(epoch)
    n_seg = config.n_segments(x.shape[0])
    if n_seg < 2:
        raise SpectralConfigError(
            f"{x.shape[0]} samples give {n_seg} segment(s) of {config.nperseg}; "
            "at least 2 are needed, use a shorter seg_len_s")
    nper = config.nperseg
    win = get_window(config.window, nper)
    starts = np.arange(n_seg) * config.step
    segs = np.stack([x[s:s + nper] for s in starts])          # [seg, t, ch]
    X = np.fft.rfft(segs * win[None, :, None], axis=1)
    freqs = np.fft.rfftfreq(nper, d=1.0 / config.rate)
    if fmax is not None:
        keep = freqs <= fmax + 1e-9
        X, freqs = X[:, keep], freqs[keep]
    # density scaling; cancels in coherency but keeps S in physical units
    X *= np.sqrt(1.0 / (config.rate * np.sum(win ** 2)))
    return X, freqs


def _average_cross(X):
    S = np.einsum("sfi,sfj->ijf", X, X.conj()) / X.shape[0]
    return (S + np.conj(np.transpose(S, (1, 0, 2)))) / 2


def cross_spectra(epoch, config: SpectralConfig, fmax=None) -> CrossSpectralEstimate:
    """Welch average ``S_ij(f) = mean_seg X_i(f) conj(X_j(f))`` (Hermitian)."""
    X, freqs = segment_spectra(epoch, config, fmax=fmax)
    return CrossSpectralEstimate(_average_cross(X), freqs)


def coherency(S) -> CoherencySpectrum:
    """``C_ij(f) = S_ij / sqrt(S_ii S_jj)``; zero where either power is zero."""
    freqs = getattr(S, "freqs", None)
    S = getattr(S, "S", S)
    power = np.real(np.diagonal(S, axis1=0, axis2=1)).T     # [ch, f]
    denom = np.sqrt(power[:, None, :] * power[None, :, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        C = np.where(denom > 0, S / np.where(denom > 0, denom, 1.0), 0.0)
    return CoherencySpectrum(C, freqs)


def band_bins(freqs, band: BandSpec, df: float):
    """Indices ``k`` such that ``freqs[k]`` is in ``[f_lo, f_hi)`` and
    ``freqs[k] + df <= f_hi``; each contributes one slope term."""
    freqs = np.asarray(freqs)
    tol = 1e-9 * max(1.0, df)
    sel = (freqs >= band.f_lo - tol) & (freqs < band.f_hi - tol) \
        & (freqs + df <= band.f_hi + tol)
    idx = np.flatnonzero(sel)
    step = int(round(df / (freqs[1] - freqs[0]))) if len(freqs) > 1 else 1
    idx = idx[idx + step < len(freqs)]
    if len(idx) < 1:
        raise BandResolutionError(
            f"band {band.name} ({band.f_lo}-{band.f_hi} Hz) holds fewer than "
            f"2 bins at resolution {df} Hz")
    return idx, step


def psi(C, band: BandSpec, df: float, freqs=None) -> ConnectivityMatrix:
    """``psi_ij = Im sum_f conj(C_ij(f)) C_ij(f + df)`` over the band."""
    if freqs is None:
        freqs = C.freqs
    C = getattr(C, "C", C)
    idx, step = band_bins(freqs, band, df)
    terms = np.conj(C[:, :, idx]) * C[:, :, idx + step]
    return ConnectivityMatrix(np.imag(terms.sum(axis=2)), band)


def _jackknife_psi(X, bands, df, freqs):
    """Leave-one-segment-out PSI for each band: ``[n_bands, n_seg, ch, ch]``."""
    n_seg = X.shape[0]
    full = np.einsum("sfi,sfj->sijf", X, X.conj())
    total = full.sum(axis=0)
    out = []
    for k in range(n_seg):
        S = (total - full[k]) / (n_seg - 1)
        S = (S + np.conj(np.transpose(S, (1, 0, 2)))) / 2
        C = coherency(S).C
        out.append([psi(C, b, df, freqs).psi for b in bands])
    return np.transpose(np.array(out), (1, 0, 2, 3))


def psi_all_bands(epoch, config: SpectralConfig, bands=DEFAULT_BANDS,
                  channel_names=()) -> list:
    """One :class:`ConnectivityMatrix` per band from a single coherency estimate."""
    bands = [get_band(b) for b in bands]
    for b in bands:
        b.check_rate(config.rate)
    fmax = max(b.f_hi for b in bands) + config.df
    X, freqs = segment_spectra(epoch, config, fmax=fmax)
    C = coherency(_average_cross(X)).C
    mats = [psi(C, b, config.df, freqs).psi for b in bands]
    if config.normalize:
        jk = _jackknife_psi(X, bands, config.df, freqs)
        n_seg = X.shape[0]
        for i, m in enumerate(mats):
            sd = np.sqrt((n_seg - 1) * np.var(jk[i], axis=0))
            with np.errstate(divide="ignore", invalid="ignore"):
                mats[i] = np.where(sd > 0, m / np.where(sd > 0, sd, 1.0), 0.0)
    names = tuple(channel_names)
    return [ConnectivityMatrix(m, b, names) for m, b in zip(mats, bands)]


def shuffle_segments(x, block: int, rng):
    """Permute non-overlapping blocks of ``x``; the trailing remainder stays put."""
    x = np.asarray(x)
    nb = x.shape[0] // block
    order = rng.permutation(nb)
    head = x[:nb * block].reshape(nb, block, *x.shape[1:])[order]
    return np.concatenate([head.reshape(nb * block, *x.shape[1:]), x[nb * block:]])


def surrogate_null(epoch, config: SpectralConfig, band, i=0, j=1,
                   n_surrogates=200, rng=None, block=None):
    """|psi_ij| under segment shuffling of channel ``j``; returns the null sample.

    Shuffling blocks of one channel destroys the cross-channel phase relation
    while keeping each channel's spectrum.
    """
    rng = np.random.default_rng(rng)
    band = get_band(band)
    x = _samples(epoch)
    block = block or max(1, config.step)
    null = np.empty(n_surrogates)
    for k in range(n_surrogates):
        y = x.copy()
        y[:, j] = shuffle_segments(x[:, j], block, rng)
        pair = y[:, [i, j]]
        X, freqs = segment_spectra(pair, config, fmax=band.f_hi + config.df)
        C = coherency(_average_cross(X)).C
        null[k] = abs(psi(C, band, config.df, freqs).psi[0, 1])
    return null


class PhaseSlopeIndex(TransformerMixin, BaseEstimator):
    """Epochs ``[n_epochs, n_samples, n_channels]`` -> signed upper-triangle PSI.

    Output columns are grouped by band, then by channel pair in row-major
    upper-triangle order (``i < j``).

    Parameters
    ----------
    rate : float
        Sampling rate in Hz.
    bands : sequence of BandSpec or band names, default all seven EEG bands
    seg_len_s, overlap_frac, window, normalize
        Welch settings, see :class:`SpectralConfig`.
    channel_names : sequence of str, optional
        Used for ``get_feature_names_out``.
    """

    def __init__(self, rate=1000.0, bands=None, seg_len_s=1.0, overlap_frac=0.5,
                 window="hann", normalize=False, channel_names=None):
        self.rate = rate
        self.bands = bands
        self.seg_len_s = seg_len_s
        self.overlap_frac = overlap_frac
        self.window = window
        self.normalize = normalize
        self.channel_names = channel_names

    def _config(self):
        return SpectralConfig(self.rate, self.seg_len_s, self.overlap_frac,
                              self.window, self.normalize)

    def fit(self, X, y=None):
        X = check_epochs(X)
        self.config_ = self._config()
        self.bands_ = [get_band(b) for b in (self.bands or DEFAULT_BANDS)]
        self.n_channels_ = X.shape[2]
        self.pair_index_ = PairIndex(self.n_channels_)
        names = self.channel_names or [f"ch{i}" for i in range(self.n_channels_)]
        if len(names) != self.n_channels_:
            raise ValueError("channel_names length differs from channel count")
        self.channel_names_ = tuple(names)
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_is_fitted
        check_is_fitted(self, "config_")
        X = check_epochs(X)
        if X.shape[2] != self.n_channels_:
            raise ValueError(
                f"fitted on {self.n_channels_} channels, got {X.shape[2]}")
        iu = self.pair_index_.triu
        rows = []
        for ep in X:
            mats = psi_all_bands(ep, self.config_, self.bands_)
            rows.append(np.concatenate([m.psi[iu] for m in mats]))
        return np.array(rows)

    def get_feature_names_out(self, input_features=None):
        pairs = self.pair_index_.names(self.channel_names_)
        return np.array([f"{b.name}:{p}" for b in self.bands_ for p in pairs],
                        dtype=object)
