"""Synthetic 19-channel scalp EEG with one embedded seizure per recording.

Sources (seizure, spike bursts, slow waves, background rhythms, Gaussian
bursts) are generated in source space, projected to the 10-20 montage with a
Gaussian kernel over great-circle distance, and the Gaussian component is
rescaled so the recording hits an SNR drawn from the configured band.

Everything is a pure function of ``(config, seed)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

SNR_BANDS = {
    "high": (3.1, 6.0),
    "mid": (0.92, 3.1),
    "low": (-1.6, 0.92),
}

SOURCE_KINDS = ("seizure", "spike", "slow_wave", "gaussian", "background")

# (polar angle from vertex, azimuth from nose; positive = right), degrees
_STANDARD_1020 = {
    "Fp1": (72, -18), "Fp2": (72, 18),
    "F7": (72, -54), "F3": (48, -40), "Fz": (36, 0), "F4": (48, 40), "F8": (72, 54),
    "T3": (72, -90), "C3": (36, -90), "Cz": (0, 0), "C4": (36, 90), "T4": (72, 90),
    "T5": (72, -126), "P3": (48, -140), "Pz": (36, 180), "P4": (48, 140), "T6": (72, 126),
    "O1": (72, -162), "O2": (72, 162),
}

ANTERIOR = ("Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8")
POSTERIOR = ("T5", "P3", "Pz", "P4", "T6", "O1", "O2")
CENTRAL = ("C3", "C4")

SPATIAL_SIGMA = 0.6  # rad
BACKGROUND_BANDS = {"alpha": (8.0, 13.0, 1.0), "beta": (13.0, 30.0, 0.5)}
SEIZURE_AMPLITUDE = 4.0
SEIZURE_TO_SPIKE_POWER = 2.0
SLOW_WAVE_AMPLITUDE = 2.5
GAUSSIAN_DUR_RANGE_S = (120.0, 300.0)
PERI_ONSET_S = 30.0
SENSOR_FLOOR = 0.1


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class MontageSpec:
    channel_names: tuple
    channel_positions: np.ndarray
    sample_rate: float = 200.0

    def __post_init__(self):
        if len(self.channel_names) != 19:
            raise SimulationError("montage must have exactly 19 channels")
        if self.sample_rate <= 0:
            raise SimulationError("sample_rate must be positive")
        pos = np.asarray(self.channel_positions, dtype=float)
        if pos.shape != (19, 3) or not np.allclose(np.linalg.norm(pos, axis=1), 1.0):
            raise SimulationError("channel positions must be 19 unit vectors")

    @property
    def n_channels(self):
        return len(self.channel_names)

    def index(self, name):
        return self.channel_names.index(name)

    def distances(self):
        """Great-circle distance matrix between electrodes (radians)."""
        cos = np.clip(self.channel_positions @ self.channel_positions.T, -1.0, 1.0)
        return np.arccos(cos)

    def gains(self, origin, sigma=SPATIAL_SIGMA):
        d = self.distances()[origin]
        return np.exp(-(d ** 2) / sigma ** 2)

    def to_dict(self):
        return {
            "channel_names": list(self.channel_names),
            "channel_positions": self.channel_positions.round(12).tolist(),
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["channel_names"]), np.asarray(d["channel_positions"], float), float(d["sample_rate"]))


def standard_montage(sample_rate=200.0):
    names = tuple(_STANDARD_1020)
    theta = np.deg2rad([_STANDARD_1020[n][0] for n in names])
    phi = np.deg2rad([_STANDARD_1020[n][1] for n in names])
    pos = np.stack([np.sin(theta) * np.sin(phi), np.sin(theta) * np.cos(phi), np.cos(theta)], axis=1)
    pos /= np.linalg.norm(pos, axis=1, keepdims=True)
    return MontageSpec(names, pos, sample_rate)


@dataclass(frozen=True)
class SourceEvent:
    kind: str
    origin_channel: int
    onset_s: float
    duration_s: float
    freq_low_hz: float
    freq_high_hz: float
    amplitude: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise SimulationError(f"unknown source kind {self.kind!r}")
        if self.onset_s < 0 or self.duration_s <= 0:
            raise SimulationError("event needs onset >= 0 and duration > 0")
        if not self.freq_low_hz < self.freq_high_hz:
            raise SimulationError("freq_low_hz must be below freq_high_hz")
        # zero amplitude is allowed so callers can silence a source
        if self.amplitude < 0:
            raise SimulationError("amplitude must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int = 120
    recordings_per_subject_range: tuple = (1, 10)
    recording_len_s: int = 600
    seizure_dur_range_s: tuple = (29, 491)
    snr_band: str = "mid"
    seed: int = 0
    sample_rate: float = 200.0

    def validate(self):
        lo, hi = self.recordings_per_subject_range
        if self.n_subjects < 1 or lo < 1 or hi < lo:
            raise SimulationError("invalid subject/recording counts")
        dmin, dmax = self.seizure_dur_range_s
        if not 0 < dmin <= dmax:
            raise SimulationError("invalid seizure duration range")
        if dmax >= self.recording_len_s:
            raise SimulationError(
                f"seizure duration up to {dmax}s cannot fit in a {self.recording_len_s}s recording"
            )
        if self.snr_band not in SNR_BANDS:
            raise SimulationError(f"snr_band must be one of {sorted(SNR_BANDS)}")
        if self.sample_rate <= 0:
            raise SimulationError("sample_rate must be positive")
        return self

    def to_dict(self):
        return {
            "n_subjects": self.n_subjects,
            "recordings_per_subject_range": list(self.recordings_per_subject_range),
            "recording_len_s": self.recording_len_s,
            "seizure_dur_range_s": list(self.seizure_dur_range_s),
            "snr_band": self.snr_band,
            "seed": self.seed,
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_subjects=int(d["n_subjects"]),
            recordings_per_subject_range=tuple(d["recordings_per_subject_range"]),
            recording_len_s=int(d["recording_len_s"]),
            seizure_dur_range_s=tuple(d["seizure_dur_range_s"]),
            snr_band=d["snr_band"],
            seed=int(d["seed"]),
            sample_rate=float(d.get("sample_rate", 200.0)),
        )


@dataclass
class Recording:
    signal: np.ndarray  # (channels, samples) float32
    clean_intervals: list
    subject_id: int
    record_id: int
    snr_db: float
    sample_rate: float = 200.0
    components: dict = field(default=None, repr=False)

    @property
    def recording_len_s(self):
        return self.signal.shape[1] / self.sample_rate

    @property
    def key(self):
        return f"s{self.subject_id:03d}_r{self.record_id:02d}"


def _rng(*words):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(w) for w in words])))


def record_seed(seed, subject_id, record_id):
    state = np.random.SeedSequence([int(seed), int(subject_id), int(record_id)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _subject_draws(cfg, subject_id, n_channels=19):
    rng = _rng(cfg.seed, subject_id)
    lo, hi = cfg.recordings_per_subject_range
    n_rec = int(rng.integers(lo, hi + 1))
    return n_rec, int(rng.integers(n_channels))


def recording_count(cfg: SimConfig, subject_id: int):
    """Number of recordings :func:`generate_subject` will emit, without synthesis."""
    return _subject_draws(cfg, subject_id)[0]


def subject_seizure_channel(cfg: SimConfig, subject_id: int):
    return _subject_draws(cfg, subject_id)[1]


def generate_subject(cfg: SimConfig, subject_id: int, montage: MontageSpec | None = None):
    """All recordings of one subject; the seizure origin is shared across them."""
    cfg.validate()
    if not 0 <= subject_id < cfg.n_subjects:
        raise SimulationError(f"subject_id {subject_id} outside [0, {cfg.n_subjects})")
    montage = montage or standard_montage(cfg.sample_rate)
    n_rec, seizure_channel = _subject_draws(cfg, subject_id, montage.n_channels)
    out = []
    for r in range(n_rec):
        rs = record_seed(cfg.seed, subject_id, r)
        events = synthesize_sources(cfg, seizure_channel, rs, montage)
        rec = mix_to_scalp(events, montage, cfg.snr_band, rs, cfg.recording_len_s)
        rec.subject_id = subject_id
        rec.record_id = r
        out.append(rec)
    return out


def iter_corpus(cfg: SimConfig, montage: MontageSpec | None = None):
    for sid in range(cfg.n_subjects):
        yield from generate_subject(cfg, sid, montage)


def synthesize_sources(cfg: SimConfig, subject_seizure_channel: int, record_seed: int, montage=None):
    """Event list for one recording (parameters only; waveforms come later)."""
    montage = montage or standard_montage(cfg.sample_rate)
    rng = _rng(record_seed, 1)
    L = cfg.recording_len_s
    seeds = iter(rng.integers(0, 2**63 - 1, size=128))
    events = []

    dmin, dmax = cfg.seizure_dur_range_s
    dur = int(rng.integers(int(dmin), int(dmax) + 1))
    onset = int(rng.integers(0, L - dur + 1))
    events.append(SourceEvent("seizure", subject_seizure_channel, onset, dur, 2.5, 4.0,
                              SEIZURE_AMPLITUDE, int(next(seeds))))

    spike_amp = SEIZURE_AMPLITUDE / np.sqrt(SEIZURE_TO_SPIKE_POWER)
    for _ in range(int(rng.integers(1, 6))):
        d = rng.uniform(5.0, 10.0)
        ch = int(rng.integers(montage.n_channels))
        t0 = rng.uniform(0, L - d)
        events.append(SourceEvent("spike", ch, t0, d, 6.0, 14.0, spike_amp, int(next(seeds))))

    region = ANTERIOR if rng.random() < 0.5 else POSTERIOR
    ch = montage.index(region[int(rng.integers(len(region)))])
    d = rng.uniform(5.0, 60.0)
    t0 = rng.uniform(0, L - d)
    events.append(SourceEvent("slow_wave", ch, t0, d, 1.0, 3.0, SLOW_WAVE_AMPLITUDE, int(next(seeds))))

    for name, (lo, hi, amp) in BACKGROUND_BANDS.items():
        for c in range(montage.n_channels):
            events.append(SourceEvent("background", c, 0.0, float(L), lo, hi, amp, int(next(seeds))))

    gauss_origins = [e.origin_channel for e in events if e.kind in ("seizure", "spike", "slow_wave")]
    gauss_origins += [montage.index(n) for n in CENTRAL]
    for ch in gauss_origins:
        d = rng.uniform(*GAUSSIAN_DUR_RANGE_S)
        t0 = rng.uniform(0, L - d)
        events.append(SourceEvent("gaussian", ch, t0, d, 0.0, cfg.sample_rate / 2, 1.0, int(rng.integers(2**63 - 1))))
    t0 = max(0.0, onset - PERI_ONSET_S)
    t1 = min(float(L), onset + PERI_ONSET_S)
    events.append(SourceEvent("gaussian", subject_seizure_channel, t0, t1 - t0, 0.0, cfg.sample_rate / 2,
                              1.0, int(rng.integers(2**63 - 1))))
    return events


def _taper(n, fs, ramp_s=0.5):
    k = min(int(ramp_s * fs), n // 2)
    w = np.ones(n)
    if k > 0:
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, k, endpoint=False))
        w[:k] = ramp
        w[n - k:] = ramp[::-1]
    return w


def _unit_rms(x):
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def _bandlimited_noise(rng, n, fs, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spec, n)


def seizure_waveform(n, fs, freq, rng):
    """Sawtooth-like oscillation with a decaying spike at each peak, ramped in amplitude."""
    t = np.arange(n) / fs
    width = 0.85
    osc = sps.sawtooth(2 * np.pi * freq * t, width=width)
    spikes = np.zeros(n)
    tau = 0.025
    k_len = int(6 * tau * fs)
    kernel = np.exp(-np.arange(k_len) / (tau * fs))
    peaks = ((np.arange(int(freq * n / fs) + 1) + width) / freq * fs).astype(int)
    peaks = peaks[peaks < n]
    # polyspikes on a random subset of cycles
    amps = 1.0 + (rng.random(len(peaks)) < 0.3) * 0.8
    spikes[peaks] = amps
    spikes = np.convolve(spikes, kernel)[:n]
    env = np.linspace(0.5, 1.0, n)
    return _unit_rms(env * (osc + 1.5 * spikes)) * _taper(n, fs)


def spike_waveform(n, fs, freq):
    t = np.arange(n) / fs
    one_sided = np.maximum(np.sin(2 * np.pi * freq * t), 0.0) ** 4
    return _unit_rms(one_sided) * _taper(n, fs, 0.25)


def event_waveform(ev: SourceEvent, fs, n_total):
    """(start_sample, waveform) for one event, clipped to the recording."""
    start = int(round(ev.onset_s * fs))
    n = min(int(round(ev.duration_s * fs)), n_total - start)
    if n <= 0:
        return start, np.zeros(0)
    rng = _rng(ev.seed)
    # oscillatory sources draw their frequency inside the event band
    if ev.kind == "seizure":
        w = seizure_waveform(n, fs, rng.uniform(ev.freq_low_hz, ev.freq_high_hz), rng)
    elif ev.kind == "spike":
        w = spike_waveform(n, fs, rng.uniform(ev.freq_low_hz, ev.freq_high_hz))
    elif ev.kind == "slow_wave":
        f = rng.uniform(ev.freq_low_hz, ev.freq_high_hz)
        t = np.arange(n) / fs
        w = _unit_rms(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))) * np.hanning(n)
    elif ev.kind == "background":
        w = _unit_rms(_bandlimited_noise(rng, n, fs, ev.freq_low_hz, ev.freq_high_hz))
    else:
        w = rng.standard_normal(n) * _taper(n, fs)
    return start, ev.amplitude * w


def mix_to_scalp(events, montage: MontageSpec, snr_band, record_seed, recording_len_s=600,
                 keep_components=False):
    """Project events to the scalp and scale the Gaussian part to hit the SNR band.

    SNR is ``10 log10(P_structured / P_gaussian)`` with powers averaged over
    every channel and sample of the recording.
    """
    if not events:
        raise SimulationError("no source events to mix")
    if snr_band not in SNR_BANDS:
        raise SimulationError(f"snr_band must be one of {sorted(SNR_BANDS)}")
    fs = montage.sample_rate
    n_total = int(round(recording_len_s * fs))
    structured = np.zeros((montage.n_channels, n_total))
    noise = np.zeros((montage.n_channels, n_total))
    gain_cache = {}
    for ev in events:
        start, w = event_waveform(ev, fs, n_total)
        if w.size == 0:
            continue
        g = gain_cache.get(ev.origin_channel)
        if g is None:
            g = gain_cache[ev.origin_channel] = montage.gains(ev.origin_channel)
        target = noise if ev.kind == "gaussian" else structured
        target[:, start:start + w.size] += g[:, None] * w[None, :]

    p_struct = np.mean(structured ** 2)
    if p_struct == 0:
        raise SimulationError("structured signal has zero power; SNR undefined")
    rng = _rng(record_seed, 2)
    noise += SENSOR_FLOOR * rng.standard_normal(noise.shape)
    lo, hi = SNR_BANDS[snr_band]
    # one uniform draw mapped into the band keeps sources identical across bands
    target_db = lo + (hi - lo) * _rng(record_seed, 3).random()
    noise *= np.sqrt(p_struct / (np.mean(noise ** 2) * 10 ** (target_db / 10)))
    snr_db = 10 * np.log10(p_struct / np.mean(noise ** 2))

    seizure = [e for e in events if e.kind == "seizure"]
    intervals = [(float(e.onset_s), float(e.onset_s + e.duration_s)) for e in seizure]
    rec = Recording(
        signal=(structured + noise).astype(np.float32),
        clean_intervals=sorted(intervals),
        subject_id=-1,
        record_id=-1,
        snr_db=float(snr_db),
        sample_rate=fs,
    )
    if keep_components:
        rec.components = {"structured": structured, "noise": noise}
    return rec


def measured_snr_db(rec: Recording):
    """SNR recomputed from the emitted float32 signal and the stored structured part."""
    s = rec.components["structured"]
    resid = rec.signal.astype(np.float64) - s
    return float(10 * np.log10(np.mean(s ** 2) / np.mean(resid ** 2)))
