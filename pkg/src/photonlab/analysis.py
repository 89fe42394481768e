"""Figures of merit from time-tag datasets, plus the lifetime and waveshape fits."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize, signal, stats

from .errors import AmbiguityError, FitError, LineageError, PreconditionError
from .source import WaveshapeParams, input_intensity
from .timetags import D1, D2, TimeTagDataset

PS = 1e12
LN2 = math.log(2.0)


class Measurement(NamedTuple):
    value: float
    error: float

    def as_dict(self) -> dict:
        return {"value": _json_float(self.value), "error": _json_float(self.error)}


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# windowed counting and g2


@dataclass
class WindowedCounts:
    """Per-trial detection statistics of one dataset inside one window.

    ``p1``/``p2`` are fractions of trials with at least one click on D1/D2;
    ``c12[n]`` the symmetrized fraction of trial pairs (k, k+n) with D1 in
    one and D2 in the other; ``c12_counts[n]`` the raw coincidence counts
    behind it. ``clicks`` is the total click number on both detectors.
    """

    n_trials: int
    window_ps: tuple
    p1: float
    p2: float
    c12: dict
    c12_counts: dict
    c12_pairs: dict
    clicks: int

    @property
    def mean_clicks(self) -> float:
        return self.clicks / self.n_trials


def window_counts(dataset: TimeTagDataset, window, max_lag: int = 1) -> WindowedCounts:
    """Count clicks in ``window`` = (start, end) seconds after each trigger."""
    n = dataset.n_trials
    if n == 0:
        raise PreconditionError("dataset has no trials")
    lo, hi = (int(round(w * PS)) for w in window)
    if not 0 <= lo < hi <= dataset.trial_period_ps:
        raise PreconditionError(f"window [{lo}, {hi}) ps is not inside the trial period")
    trial, ch, off = dataset.click_offsets()
    inside = (off >= lo) & (off < hi)
    hit1 = np.zeros(n, bool)
    hit2 = np.zeros(n, bool)
    hit1[trial[inside & (ch == D1)]] = True
    hit2[trial[inside & (ch == D2)]] = True
    c12, counts, pairs = {}, {}, {}
    for lag in range(max_lag + 1):
        if lag == 0:
            k, npairs = int(np.count_nonzero(hit1 & hit2)), n
        elif lag < n:
            k = int(np.count_nonzero(hit1[:-lag] & hit2[lag:]) + np.count_nonzero(hit2[:-lag] & hit1[lag:]))
            npairs = 2 * (n - lag)
        else:
            break
        counts[lag], pairs[lag] = k, npairs
        c12[lag] = k / npairs
    return WindowedCounts(
        n_trials=n,
        window_ps=(lo, hi),
        p1=float(hit1.mean()),
        p2=float(hit2.mean()),
        c12=c12,
        c12_counts=counts,
        c12_pairs=pairs,
        clicks=int(np.count_nonzero(inside)),
    )


@dataclass
class G2Result:
    n: int
    value: float
    error: float
    defined: bool
    coincidences: int


def g2_of_n(counts: WindowedCounts, n: int = 0) -> G2Result:
    """Normalized coincidence rate ``c12(n) / (p1 p2)`` with first-order errors
    (Poisson on the coincidences, binomial on p1 and p2)."""
    if n not in counts.c12:
        raise PreconditionError(f"lag {n} not computed (max lag {max(counts.c12)})")
    p1, p2, N = counts.p1, counts.p2, counts.n_trials
    k = counts.c12_counts[n]
    if p1 * p2 == 0:
        return G2Result(n, float("nan"), float("nan"), False, k)
    g = counts.c12[n] / (p1 * p2)
    rel2 = (1 - p1) / (N * p1) + (1 - p2) / (N * p2)
    if k > 0:
        err = g * math.sqrt(1.0 / k + rel2)
    else:
        # one-count Poisson scale so that zero coincidences still carry an error bar
        err = (1.0 / counts.c12_pairs[n]) / (p1 * p2)
    return G2Result(n, g, err, True, k)


def noise_mixed_g2(g2_in: float, snr: float) -> float:
    """g2(0) after mixing a signal with a Poissonian background of relative
    weight 1/snr: (snr^2 g2_in + 2 snr + 1) / (snr + 1)^2."""
    if snr < 0:
        raise PreconditionError("snr must be non-negative")
    if math.isinf(snr):
        return float(g2_in)
    return (snr**2 * g2_in + 2 * snr + 1) / (snr + 1) ** 2


def window_capture(envelope: WaveshapeParams, window, n: int = 200_001) -> float:
    """Fraction of the emitted photon's intensity inside ``window`` (s)."""
    lo = envelope.peak_time - 12 * envelope.rise_sigma
    hi = envelope.peak_time + 40 * envelope.decay_tau
    t = np.linspace(lo, hi, n)
    y = input_intensity(envelope, t)
    inside = (t >= window[0]) & (t < window[1])
    return float(np.trapezoid(y * inside, t) / np.trapezoid(y, t))


def estimate_p_gen(counts: WindowedCounts, efficiency: float, capture: float = 1.0,
                   background: float = 0.0) -> Measurement:
    """Generation probability from the mean click number per trial.

    ``capture`` is the fraction of the photon falling inside the window and
    ``background`` the mean background click number in the same window.
    """
    N = counts.n_trials
    m = counts.mean_clicks - background
    scale = efficiency * capture
    return Measurement(m / scale, math.sqrt(counts.clicks) / N / scale)


# ---------------------------------------------------------------------------
# memory figures


@dataclass
class MemoryFigures:
    eta_w: Measurement
    eta_r: Measurement
    eta_wr: Measurement
    snr: Measurement
    mu1: Measurement
    s_over_t: Measurement
    survival: Measurement
    p_in: Measurement
    p_t: Measurement
    p_s: Measurement
    p_n: Measurement
    clamped: list = field(default_factory=list)
    degenerate: bool = False

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.as_dict() if isinstance(v, Measurement) else v
        return out


def _rate(ds: TimeTagDataset, window) -> Measurement:
    """Mean clicks per trial in a window, with Poisson error."""
    c = window_counts(ds, window, max_lag=0)
    return Measurement(c.mean_clicks, math.sqrt(c.clicks) / c.n_trials)


def _ratio(a: Measurement, b: Measurement) -> Measurement:
    if b.value == 0:
        return Measurement(float("nan"), float("nan"))
    v = a.value / b.value
    err = math.hypot(a.error / b.value, a.value * b.error / b.value**2)
    return Measurement(v, err)


def _diff(a: Measurement, b: Measurement) -> Measurement:
    return Measurement(a.value - b.value, math.hypot(a.error, b.error))


def memory_figures(input_run: TimeTagDataset, storage_run: TimeTagDataset, noise_run: TimeTagDataset,
                   windows) -> MemoryFigures:
    """Background-subtracted memory figures from the three standard runs.

    ``windows`` provides ``input`` and ``stored`` as (start, end) seconds.
    Probabilities are mean click numbers per trial summed over both
    detectors; the noise run supplies the per-window background.
    """
    hashes = {bytes(d.config_hash) for d in (input_run, storage_run, noise_run)}
    if len(hashes) != 1:
        raise LineageError("runs come from different configurations (config hash mismatch)")
    periods = {d.trial_period_ps for d in (input_run, storage_run, noise_run)}
    if len(periods) != 1:
        raise LineageError("runs have different trial periods")
    w_in, w_st = windows.input, windows.stored

    bg_in = _rate(noise_run, w_in)
    p_n = _rate(noise_run, w_st)
    raw_s = _rate(storage_run, w_st)
    clamped = []

    def sub(raw, bg, name):
        m = _diff(raw, bg)
        if m.value < 0:
            clamped.append(name)
            warnings.warn(f"background-subtracted {name} is negative; clamped to 0", stacklevel=3)
            m = Measurement(0.0, m.error)
        return m

    p_in = sub(_rate(input_run, w_in), bg_in, "p_in")
    p_t = sub(_rate(storage_run, w_in), bg_in, "p_t")
    p_s = sub(raw_s, p_n, "p_s")

    eta_wr = _ratio(p_s, p_in)
    absorbed = _diff(p_in, p_t)
    eta_w = _ratio(absorbed, p_in)
    if p_in.value > 0:
        # absorbed and p_in share p_in: d(1 - p_t/p_in)
        eta_w = Measurement(eta_w.value, _ratio(p_t, p_in).error)
    eta_r = _ratio(eta_wr, eta_w) if eta_w.value > 0 else Measurement(float("nan"), float("nan"))
    kinds = (input_run.kind, storage_run.kind, noise_run.kind)
    degenerate = (
        kinds != ("input_only", "storage", "noise_only")
        or len({id(input_run), id(storage_run), id(noise_run)}) < 3
        or not (eta_w.value > 0 and p_in.value > 0)
    )
    snr = _ratio(raw_s, p_n)
    mu1 = _ratio(p_n, eta_wr) if eta_wr.value > 0 else Measurement(float("inf"), float("nan"))
    return MemoryFigures(
        eta_w=eta_w,
        eta_r=eta_r,
        eta_wr=eta_wr,
        snr=snr,
        mu1=mu1,
        s_over_t=_ratio(p_s, p_t),
        survival=_ratio(Measurement(p_s.value + p_t.value, math.hypot(p_s.error, p_t.error)), p_in),
        p_in=p_in,
        p_t=p_t,
        p_s=p_s,
        p_n=p_n,
        clamped=clamped,
        degenerate=bool(degenerate),
    )


# ---------------------------------------------------------------------------
# lifetime fit


def lifetime_model(params, t):
    """eta0 exp(-u t^2) (1 - A + A cos(w t)) with u = 1/tau^2; 2 or 4 params."""
    t = np.asarray(t, float)
    eta0, u = params[0], params[1]
    g = np.exp(-u * t**2)
    if len(params) == 2:
        return eta0 * g
    A, w = params[2], params[3]
    return eta0 * g * (1 - A + A * np.cos(w * t))


def lifetime_jacobian(params, t):
    t = np.asarray(t, float)
    eta0, u = params[0], params[1]
    g = np.exp(-u * t**2)
    if len(params) == 2:
        return np.column_stack([g, -eta0 * t**2 * g])
    A, w = params[2], params[3]
    osc = 1 - A + A * np.cos(w * t)
    return np.column_stack([
        g * osc,
        -eta0 * t**2 * g * osc,
        eta0 * g * (np.cos(w * t) - 1),
        -eta0 * g * A * t * np.sin(w * t),
    ])


@dataclass
class LifetimeFit:
    eta0: Measurement
    tau: Measurement
    A: Measurement
    omega: Measurement
    oscillation: bool
    unbounded: bool
    f_pvalue: float
    residuals: np.ndarray


def _lsq(model, jac, p0, t, y, w, max_nfev=None):
    def res(p):
        return (model(p, t) - y) * w

    def j(p):
        return jac(p, t) * w[:, None]

    r = optimize.least_squares(res, p0, jac=j, method="lm", max_nfev=max_nfev or 2000 * len(p0))
    if r.status <= 0 or not np.all(np.isfinite(r.x)):
        raise FitError(f"lifetime fit did not converge: {r.message}", r.fun / w)
    dof = max(1, len(t) - len(p0))
    s2 = 2 * r.cost / dof
    try:
        cov = np.linalg.inv(r.jac.T @ r.jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((len(p0), len(p0)), np.nan)
    return r.x, cov, 2 * r.cost


def fit_lifetime(t_store, eta, sigma=None, alpha: float = 0.05, n_omega: int = 400,
                 max_nfev: int | None = None) -> LifetimeFit:
    """Fit the storage-time decay; the oscillation term is kept only if an
    F-test prefers it at level ``alpha``."""
    t = np.asarray(t_store, float)
    y = np.asarray(eta, float)
    if t.size < 5 or t.size != y.size:
        raise PreconditionError("need at least 5 (t_store, eta) points")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise PreconditionError("lifetime data must be finite")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, float)
    span = float(t.max() - t.min())
    if span <= 0:
        raise PreconditionError("storage times must span a non-zero interval")

    # time in units of the span keeps the problem well scaled
    ts = t / span
    pos = y > 0
    eta0_guess = float(y[np.argmin(t)]) or float(y.max())
    u_guess = 1.0
    if np.count_nonzero(pos) >= 2 and eta0_guess > 0:
        ratio = np.clip(y[pos] / eta0_guess, 1e-6, None)
        den = float(np.sum(ts[pos] ** 4))
        u_guess = max(float(-np.sum(np.log(ratio) * ts[pos] ** 2) / den), 1e-3) if den else 1.0
    p2, cov2, rss2 = _lsq(lifetime_model, lifetime_jacobian, [eta0_guess, u_guess], ts, y, w, max_nfev)

    # oscillation start: scan omega, solving A linearly on the 2-parameter residual
    base = lifetime_model(p2, ts)
    rel = np.divide(y - base, base, out=np.zeros_like(y), where=base != 0)
    dmin = np.min(np.diff(np.unique(ts))) if np.unique(ts).size > 1 else 1.0
    omegas = np.linspace(2 * np.pi / 4, np.pi / dmin, n_omega)
    best = None
    for om in omegas:
        basis = (np.cos(om * ts) - 1) * base * w
        den = float(basis @ basis)
        if den <= 0:
            continue
        A = float(basis @ ((y - base) * w)) / den
        r = float(np.sum(((y - base) * w - A * basis) ** 2))
        if best is None or r < best[0]:
            best = (r, A, om)
    p4 = cov4 = None
    pval = 1.0
    if best is not None and t.size > 4:
        A0 = float(np.clip(best[1], 1e-3, 0.5)) if best[1] > 0 else 1e-3
        try:
            p4, cov4, rss4 = _lsq(lifetime_model, lifetime_jacobian, [p2[0], p2[1], A0, best[2]], ts, y, w,
                                  max_nfev)
        except FitError:
            p4 = None
        if p4 is not None and p4[2] > 0 and rss4 < rss2:
            dof4 = t.size - 4
            F = ((rss2 - rss4) / 2) / (rss4 / dof4) if rss4 > 0 else np.inf
            pval = float(stats.f.sf(F, 2, dof4)) if np.isfinite(F) else 0.0
            # omega was searched, not fixed: Bonferroni over independent frequencies
            n_freq = max(1.0, (omegas[-1] - omegas[0]) / np.pi)
            pval = min(1.0, pval * n_freq)
    use4 = p4 is not None and pval < alpha
    p, cov = (p4, cov4) if use4 else (p2, cov2)
    err = np.sqrt(np.abs(np.diag(cov)))
    u, du = p[1], err[1]
    if u > 0:
        tau = span / math.sqrt(u)
        dtau = 0.5 * tau * du / u
    else:
        tau, dtau = math.inf, math.nan
    unbounded = (not math.isfinite(tau)) or tau > 10 * span or (du > 0 and u - 2 * du <= 0)
    if use4:
        A = Measurement(float(p[2]), float(err[2]))
        omega = Measurement(abs(float(p[3])) / span, float(err[3]) / span)
    else:
        A, omega = Measurement(0.0, 0.0), Measurement(0.0, 0.0)
    return LifetimeFit(
        eta0=Measurement(float(p[0]), float(err[0])),
        tau=Measurement(tau, dtau),
        A=A,
        omega=omega,
        oscillation=use4,
        unbounded=bool(unbounded),
        f_pvalue=pval,
        residuals=y - lifetime_model(p, ts),
    )


# ---------------------------------------------------------------------------
# waveshape fit


def waveshape_model(params, t):
    """Gaussian rise glued to an exponential decay at ``t0``, over a flat
    background: params (h, t0, sigma, tau, b), repeated (h, t0) pairs allowed
    before the shared (sigma, tau, b) tail for multi-component fits."""
    t = np.asarray(t, float)
    *pairs, sigma, tau, b = params
    out = np.full_like(t, b, dtype=float)
    for h, t0 in zip(pairs[0::2], pairs[1::2]):
        x = t - t0
        out += h * np.where(x < 0, np.exp(-0.5 * (np.minimum(x, 0) / sigma) ** 2), np.exp(-np.maximum(x, 0) / tau))
    return out


def waveshape_jacobian(params, t):
    t = np.asarray(t, float)
    *pairs, sigma, tau, b = params
    cols = []
    d_sigma = np.zeros_like(t)
    d_tau = np.zeros_like(t)
    for h, t0 in zip(pairs[0::2], pairs[1::2]):
        x = t - t0
        left = x < 0
        xl, xr = np.minimum(x, 0), np.maximum(x, 0)
        gl = np.exp(-0.5 * (xl / sigma) ** 2)
        gr = np.exp(-xr / tau)
        f = np.where(left, gl, gr)
        cols.append(f)
        cols.append(h * np.where(left, gl * xl / sigma**2, gr / tau))
        d_sigma += h * np.where(left, gl * xl**2 / sigma**3, 0.0)
        d_tau += h * np.where(left, 0.0, gr * xr / tau**2)
    cols += [d_sigma, d_tau, np.ones_like(t)]
    return np.column_stack(cols)


@dataclass
class WaveshapeFit:
    rise_sigma: Measurement
    decay_tau: Measurement
    fwhm: Measurement
    peak_times: list
    amplitudes: list
    background: Measurement

    @property
    def rise_half_width(self) -> Measurement:
        k = math.sqrt(2 * LN2)
        return Measurement(self.rise_sigma.value * k, self.rise_sigma.error * k)

    @property
    def decay_half_width(self) -> Measurement:
        return Measurement(self.decay_tau.value * LN2, self.decay_tau.error * LN2)


def _find_peaks(y) -> np.ndarray:
    y = np.asarray(y, float)
    k = max(1, y.size // 100)
    sm = np.convolve(y, np.ones(2 * k + 1) / (2 * k + 1), mode="same") if y.size > 2 * k + 1 else y
    peaks, _ = signal.find_peaks(np.concatenate(([sm.min()], sm, [sm.min()])), prominence=0.25 * np.ptp(sm))
    return peaks - 1


def fit_waveshape(t, counts, mode: str = "single", weighted: bool = True) -> WaveshapeFit:
    """Fit a histogram (bin centres ``t`` in s, ``counts``) with the
    Gaussian-rise / exponential-decay shape.

    ``mode="time_bin"`` fits two components sharing sigma and tau; in the
    default mode a histogram with several comparable peaks is rejected.
    """
    t = np.asarray(t, float)
    y = np.asarray(counts, float)
    if t.size < 6 or t.size != y.size or not np.any(y > 0):
        raise PreconditionError("histogram needs >= 6 bins and some counts")
    peaks = _find_peaks(y)
    if mode == "single":
        if len(peaks) > 1:
            raise AmbiguityError(f"histogram has {len(peaks)} peaks at t = {t[peaks]}")
        n_comp = 1
    elif mode == "time_bin":
        if len(peaks) < 2:
            raise AmbiguityError("time-bin mode needs two peaks")
        n_comp = 2
    else:
        raise PreconditionError(f"unknown waveshape fit mode {mode!r}")
    if len(peaks) < n_comp:
        peaks = np.array([int(np.argmax(y))])
    order = np.argsort(y[peaks])[::-1][:n_comp]
    peaks = np.sort(peaks[order])

    scale = float(np.ptp(t)) or 1.0
    ts = (t - t[0]) / scale
    ymax = float(y.max())
    b0 = float(np.percentile(y, 5))
    p0 = []
    for pk in peaks:
        p0 += [float(y[pk]) - b0, ts[pk]]
    # half-width at half max on the main peak gives the edge scales
    main = peaks[np.argmax(y[peaks])]
    half = b0 + 0.5 * (y[main] - b0)
    left = main
    while left > 0 and y[left] > half:
        left -= 1
    right = main
    while right < y.size - 1 and y[right] > half:
        right += 1
    dt = ts[1] - ts[0] if ts.size > 1 else 1.0
    p0 += [max(ts[main] - ts[left], dt) / math.sqrt(2 * LN2), max(ts[right] - ts[main], dt) / LN2, b0]

    w = np.ones_like(y) if weighted is False else 1.0 / np.sqrt(np.maximum(y, 1.0)) * math.sqrt(ymax)

    def res(p):
        return (waveshape_model(p, ts) - y) * w

    def jac(p):
        return waveshape_jacobian(p, ts) * w[:, None]

    r = optimize.least_squares(res, p0, jac=jac, method="lm", max_nfev=5000)
    if r.status <= 0 or not np.all(np.isfinite(r.x)):
        raise FitError(f"waveshape fit did not converge: {r.message}", r.fun / w)
    p = r.x
    dof = max(1, t.size - p.size)
    try:
        cov = np.linalg.inv(r.jac.T @ r.jac) * (2 * r.cost / dof)
    except np.linalg.LinAlgError:
        cov = np.full((p.size, p.size), np.nan)
    err = np.sqrt(np.abs(np.diag(cov)))
    sigma, tau = abs(p[-3]) * scale, abs(p[-2]) * scale
    ds, dtau = err[-3] * scale, err[-2] * scale
    k = math.sqrt(2 * LN2)
    fwhm = sigma * k + tau * LN2
    dfwhm = math.sqrt((k * ds) ** 2 + (LN2 * dtau) ** 2 + 2 * k * LN2 * cov[-3, -2] * scale**2)
    peaks_out = [Measurement(t[0] + p[2 * i + 1] * scale, err[2 * i + 1] * scale) for i in range(n_comp)]
    amps = [Measurement(p[2 * i], err[2 * i]) for i in range(n_comp)]
    return WaveshapeFit(
        rise_sigma=Measurement(sigma, ds),
        decay_tau=Measurement(tau, dtau),
        fwhm=Measurement(fwhm, dfwhm if math.isfinite(dfwhm) else math.nan),
        peak_times=peaks_out,
        amplitudes=amps,
        background=Measurement(p[-1], err[-1]),
    )


def fwhm_of_profile(t, y) -> float:
    """Half-maximum crossing distance with linear interpolation."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    above = np.nonzero(y >= half)[0]
    a, b = above[0], above[-1]

    def cross(j0, j1):
        y0, y1 = y[j0], y[j1]
        return t[j0] + (half - y0) * (t[j1] - t[j0]) / (y1 - y0) if y1 != y0 else t[j0]

    left = cross(a - 1, a) if a > 0 else t[a]
    right = cross(b, b + 1) if b < y.size - 1 else t[b]
    return float(right - left)


# ---------------------------------------------------------------------------
# histograms and result documents


def histogram(dataset: TimeTagDataset, bin_ps: int, window=None, channels=(D1, D2)):
    """Trial-relative click histogram: (bin_start_ps, count) arrays."""
    if bin_ps <= 0:
        raise PreconditionError("bin width must be positive")
    lo, hi = (0, dataset.trial_period_ps) if window is None else (int(round(w * PS)) for w in window)
    edges = np.arange(lo, hi + bin_ps, bin_ps, dtype=np.int64)
    _, ch, off = dataset.click_offsets()
    sel = np.isin(ch, channels)
    counts, _ = np.histogram(off[sel], bins=edges)
    return edges[:-1], counts


def write_histogram_csv(path, bin_start_ps, counts) -> None:
    with open(path, "w") as fh:
        fh.write("bin_start_ps,count\n")
        for b, c in zip(bin_start_ps, counts):
            fh.write(f"{int(b)},{int(c)}\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def g2_table(dataset: TimeTagDataset, window, max_lag: int = 3) -> list:
    counts = window_counts(dataset, window, max_lag=max_lag)
    rows = []
    for n in sorted(counts.c12):
        g = g2_of_n(counts, n)
        rows.append({"n": n, "value": _json_float(g.value), "error": _json_float(g.error),
                     "defined": g.defined, "coincidences": g.coincidences})
    return rows


def result_document(kind: str, payload: dict, inputs: dict | None = None) -> str:
    """JSON text of one analysis result with input-file provenance."""
    doc = {"analysis": kind, "results": payload, "inputs": inputs or {}}
    return json.dumps(doc, indent=2, sort_keys=True, default=_default)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Measurement):
        return o.as_dict()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
