"""Coupled-mode solver for off-resonant Raman storage and forward retrieval.

The excited state is adiabatically eliminated, leaving two fields on a
normalized length z in [0, 1] (co-moving frame)::

    dE/dz = -(d E + sqrt(d) W S) / (g + i D)
    dS/dt = -(gs + i d2) S - (sqrt(d) W* E + |W|^2 S) / (g + i D)

Internally time is measured in units of ``1 / GAMMA_UNIT`` (the D2 half
linewidth) so ``d`` is the usual dimensionless optical depth and the
coupling survives the ``gamma -> 0`` limit used for lossless checks.
``E`` is photon-flux normalized (``int |E|^2 dt`` is a photon number) and
``S`` satisfies ``int |S|^2 dz`` = stored excitation.

For every time step E(z) is obtained in closed form from S(z) by an
exponential-trapezoid quadrature, so the S equation becomes a linear ODE
``dS/dt = alpha(t) S + beta(t) M S + source(t)`` with a constant matrix M,
integrated with classical RK4. All routines accept a batch of parameter
columns, which is how the sweeps are computed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, InfeasibleError, PreconditionError
from .source import WaveshapeParams, input_envelope

GAMMA_UNIT = 2 * math.pi * 3.03e6
TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class MemoryConfig:
    d: float = 5.0
    delta: float = -TWO_PI * 52e6
    gamma: float = GAMMA_UNIT
    gamma_s: float = 0.0
    delta2: float = 0.0
    tau_mem: float = 30e-6
    osc_amplitude: float = 0.0
    osc_omega: float = 0.0
    nz: int = 64
    dt: float = 0.5e-9
    compensate_light_shift: bool = True

    def __post_init__(self):
        if self.d < 0:
            raise ConfigError("optical depth must be non-negative")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.nz < 32:
            raise ConfigError(f"nz={self.nz} too coarse, need nz >= 32")
        if self.dt <= 0 or self.dt * abs(self.delta) >= 0.2:
            raise ConfigError(
                f"dt={self.dt:g} s does not resolve the one-photon detuning (need dt*|delta| < 0.2)"
            )
        if not 0 <= self.osc_amplitude <= 0.5:
            raise ConfigError("oscillation amplitude must lie in [0, 0.5]")


@dataclass(frozen=True)
class ControlPulse:
    """Control Rabi frequency profile ``W(t)`` (real, non-negative, rad/s).

    ``square`` has raised-cosine edges of length ``edge``; ``gaussian`` is
    centred in ``[t_start, t_start + duration]`` with sigma = duration / 6;
    ``table`` interpolates ``table_values`` (already scaled Rabi
    frequencies) linearly on ``table_times``. ``power_scale`` multiplies the
    power, i.e. the amplitude goes as its square root.
    """

    shape: str = "square"
    peak_rabi: float = 0.0
    t_start: float = 0.0
    duration: float = 300e-9
    power_scale: float = 1.0
    edge: float = 10e-9
    table_times: tuple = ()
    table_values: tuple = ()

    def __post_init__(self):
        if self.shape not in ("square", "gaussian", "table"):
            raise ConfigError(f"unknown pulse shape {self.shape!r}")
        if self.peak_rabi < 0 or self.power_scale < 0:
            raise ConfigError("peak_rabi and power_scale must be non-negative")
        if self.shape == "table":
            times = np.asarray(self.table_times, float)
            vals = np.asarray(self.table_values, float)
            if times.shape != vals.shape or times.size < 2:
                raise ConfigError("table pulse needs matching times/values with >= 2 points")
            if not (np.all(np.isfinite(vals)) and np.all(vals >= 0)):
                raise ConfigError("table pulse values must be finite and non-negative")
            if np.any(np.diff(times) <= 0):
                raise ConfigError("table pulse times must increase")
        elif self.duration <= 0:
            raise ConfigError("pulse duration must be positive")

    @property
    def peak(self) -> float:
        return self.peak_rabi * math.sqrt(self.power_scale)

    def with_power(self, power_scale: float) -> "ControlPulse":
        return replace(self, power_scale=power_scale)

    def rabi(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        amp = math.sqrt(self.power_scale)
        if self.shape == "table":
            return amp * np.interp(t, self.table_times, self.table_values, left=0.0, right=0.0)
        t1 = self.t_start + self.duration
        if self.shape == "square":
            edge = max(self.edge, 1e-15)
            rise = np.clip((t - self.t_start) / edge, 0.0, 1.0)
            fall = np.clip((t1 - t) / edge, 0.0, 1.0)
            prof = 0.5 - 0.5 * np.cos(np.pi * np.minimum(rise, fall))
        else:
            tc = self.t_start + 0.5 * self.duration
            sigma = self.duration / 6.0
            prof = np.exp(-0.5 * ((t - tc) / sigma) ** 2)
            prof = np.where((t >= self.t_start) & (t <= t1), prof, 0.0)
        return self.peak * prof


@dataclass
class FieldState:
    """Result of one solve: boundary fields on the time grid, final spin wave
    and the norm bookkeeping (all in photon-number units)."""

    t: np.ndarray
    z: np.ndarray
    E_in: np.ndarray
    E_out: np.ndarray
    S: np.ndarray
    S_initial: np.ndarray
    norm_in: float
    norm_out: float
    norm_spin_initial: float
    norm_spin: float

    @property
    def scattered(self) -> float:
        return self.norm_in + self.norm_spin_initial - self.norm_out - self.norm_spin


@dataclass
class WriteResult:
    S_final: np.ndarray
    E_trans: np.ndarray
    eta_w: float
    transmission: float
    state: FieldState


@dataclass
class ReadResult:
    E_out: np.ndarray
    eta_r: float
    state: FieldState


def _midpoints(y: np.ndarray) -> np.ndarray:
    """Four-point interpolation of samples to cell midpoints along axis 0."""
    mid = 0.5 * (y[:-1] + y[1:])
    if len(y) >= 4:
        mid[1:-1] = (-y[:-3] + 9 * y[1:-2] + 9 * y[2:-1] - y[3:]) / 16.0
    return mid


class _Medium:
    """Precomputed spatial operators for one MemoryConfig."""

    def __init__(self, cfg: MemoryConfig):
        self.cfg = cfg
        g = cfg.gamma / GAMMA_UNIT
        D = cfg.delta / GAMMA_UNIT
        self.c = complex(g, D)
        self.a = cfg.d / self.c
        self.b = math.sqrt(cfg.d) / self.c
        nz = cfg.nz
        h = 1.0 / (nz - 1)
        self.z = np.linspace(0.0, 1.0, nz)
        lag = np.subtract.outer(np.arange(nz), np.arange(nz))
        K = np.where(lag >= 0, np.exp(-self.a * h * np.clip(lag, 0, None)), 0.0) * h
        K[:, 0] *= 0.5
        K[np.arange(nz), np.arange(nz)] *= 0.5
        K[0, 0] = 0.0
        # E(z) = exp(-a z) E(0) - b W (K S)(z)
        self.K = K
        self.k_end = K[-1].copy()
        self.ez = np.exp(-self.a * self.z)
        self.ez_end = complex(np.exp(-self.a))
        self.M = np.eye(nz) - self.a * K
        self.inv_c = 1.0 / self.c
        self.h = h

    def spin_norm(self, S: np.ndarray) -> np.ndarray:
        return np.trapezoid(np.abs(S) ** 2, self.z, axis=0)


def _check_grid(t: np.ndarray, cfg: MemoryConfig) -> float:
    if t.ndim != 1 or t.size < 2:
        raise ConfigError("time grid must be 1-D with at least two points")
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=0):
        raise ConfigError("time grid must be uniform")
    if dt * abs(cfg.delta) >= 0.2 * (1 + 1e-9):
        raise ConfigError(f"grid step {dt:g} s does not resolve |delta| (need dt*|delta| < 0.2)")
    return dt


def _propagate(medium: _Medium, t: np.ndarray, rabi: np.ndarray, rabi_mid: np.ndarray,
               e_in: np.ndarray, e_in_mid: np.ndarray, S0: np.ndarray, delta2: np.ndarray):
    """RK4 integration over the grid for a batch of columns.

    Shapes: rabi, e_in (nt, B) in physical units; rabi_mid, e_in_mid
    (nt-1, B); S0 (nz, B); delta2 (B,). Returns (E_out (nt, B), S (nz, B)).
    """
    cfg = medium.cfg
    dt = float(t[1] - t[0])
    h = dt * GAMMA_UNIT
    scale_e = 1.0 / math.sqrt(GAMMA_UNIT)
    W = rabi / GAMMA_UNIT
    Wm = rabi_mid / GAMMA_UNIT
    E0 = e_in * scale_e
    E0m = e_in_mid * scale_e

    max_rate = float(np.max(np.abs(W) ** 2, initial=0.0)) * abs(medium.inv_c) * np.abs(medium.M).sum(axis=1).max()
    if h * max_rate > 2.5:
        raise ConfigError(
            f"time step too coarse for the control strength (rate*dt = {h * max_rate:.2f}); reduce dt"
        )

    inv_c = medium.inv_c
    base = -(cfg.gamma_s / GAMMA_UNIT + 1j * np.asarray(delta2, float) / GAMMA_UNIT)
    shift = 1j * inv_c.imag if cfg.compensate_light_shift else 0.0
    sqd = math.sqrt(cfg.d)
    M = medium.M
    ez = medium.ez[:, None]

    def rhs(S, w, e0):
        w2 = w * w
        alpha = base + shift * w2
        return alpha * S - (w2 * inv_c) * (M @ S) - ez * (sqd * inv_c * w * e0)

    S = np.array(S0, dtype=complex)
    nt = len(t)
    E_out = np.empty((nt, S.shape[1]), dtype=complex)
    k_end = medium.k_end
    for k in range(nt):
        E_out[k] = medium.ez_end * E0[k] - medium.b * W[k] * (k_end @ S)
        if k == nt - 1:
            break
        k1 = rhs(S, W[k], E0[k])
        k2 = rhs(S + 0.5 * h * k1, Wm[k], E0m[k])
        k3 = rhs(S + 0.5 * h * k2, Wm[k], E0m[k])
        k4 = rhs(S + h * k3, W[k + 1], E0[k + 1])
        S = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return E_out / scale_e, S


def _as_columns(x, nrows: int, B: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 1:
        x = np.repeat(x[:, None], B, axis=1)
    if x.shape != (nrows, B):
        raise ConfigError(f"array of shape {x.shape} does not match ({nrows}, {B})")
    return x


def write_batch(E_in: np.ndarray, t: np.ndarray, pulses: Sequence[ControlPulse], cfg: MemoryConfig,
                delta2: Sequence[float] | None = None, check_norm: bool = True):
    """Batched write-in. Returns (S_final (nz, B), E_trans (nt, B), medium)."""
    t = np.asarray(t, dtype=float)
    _check_grid(t, cfg)
    B = len(pulses)
    E_in = _as_columns(np.asarray(E_in, dtype=complex), len(t), B)
    if check_norm:
        norms = np.trapezoid(np.abs(E_in) ** 2, t, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise PreconditionError(f"input envelope not normalized: int|E|^2 dt = {norms}")
    medium = _Medium(cfg)
    t_mid = 0.5 * (t[:-1] + t[1:])
    rabi = np.stack([p.rabi(t) for p in pulses], axis=1)
    rabi_mid = np.stack([p.rabi(t_mid) for p in pulses], axis=1)
    d2 = np.full(B, cfg.delta2) if delta2 is None else np.asarray(delta2, float)
    S0 = np.zeros((cfg.nz, B), dtype=complex)
    E_trans, S = _propagate(medium, t, rabi, rabi_mid, E_in, _midpoints(E_in), S0, d2)
    return S, E_trans, medium


def read_batch(S: np.ndarray, t: np.ndarray, pulses: Sequence[ControlPulse], cfg: MemoryConfig):
    """Batched forward retrieval with no input field. Returns (E_out, S_final, medium)."""
    t = np.asarray(t, dtype=float)
    _check_grid(t, cfg)
    B = len(pulses)
    S = _as_columns(np.asarray(S, dtype=complex), cfg.nz, B)
    medium = _Medium(cfg)
    t_mid = 0.5 * (t[:-1] + t[1:])
    rabi = np.stack([p.rabi(t) for p in pulses], axis=1)
    rabi_mid = np.stack([p.rabi(t_mid) for p in pulses], axis=1)
    zeros = np.zeros((len(t), B), dtype=complex)
    E_out, S_end = _propagate(medium, t, rabi, rabi_mid, zeros, zeros[:-1],
                              S, np.full(B, cfg.delta2))
    return E_out, S_end, medium


def solve_write(E_in, pulse: ControlPulse, cfg: MemoryConfig, t) -> WriteResult:
    """Map an input photon onto the spin wave.

    ``E_in`` is sampled on the uniform grid ``t`` and must satisfy
    ``int |E_in|^2 dt = 1``. ``eta_w`` is the stored excitation
    ``int |S|^2 dz``; ``transmission`` is ``int |E_trans|^2 dt``.
    """
    t = np.asarray(t, dtype=float)
    E_in = np.asarray(E_in, dtype=complex)
    S, E_trans, medium = write_batch(E_in, t, [pulse], cfg)
    S, E_trans = S[:, 0], E_trans[:, 0]
    norm_in = float(np.trapezoid(np.abs(E_in) ** 2, t))
    norm_out = float(np.trapezoid(np.abs(E_trans) ** 2, t))
    eta_w = float(medium.spin_norm(S))
    state = FieldState(t=t, z=medium.z, E_in=E_in, E_out=E_trans, S=S,
                       S_initial=np.zeros_like(S), norm_in=norm_in, norm_out=norm_out,
                       norm_spin_initial=0.0, norm_spin=eta_w)
    return WriteResult(S_final=S, E_trans=E_trans, eta_w=eta_w, transmission=norm_out, state=state)


def solve_read(S, pulse: ControlPulse, cfg: MemoryConfig, t) -> ReadResult:
    """Forward retrieval of a stored spin wave; ``eta_r`` is relative to the
    excitation present at the start of the read grid."""
    t = np.asarray(t, dtype=float)
    S = np.asarray(S, dtype=complex)
    medium = _Medium(cfg)
    stored = float(medium.spin_norm(S))
    if not stored > 0:
        raise PreconditionError("cannot read out an empty spin wave")
    E_out, S_end, _ = read_batch(S, t, [pulse], cfg)
    E_out, S_end = E_out[:, 0], S_end[:, 0]
    norm_out = float(np.trapezoid(np.abs(E_out) ** 2, t))
    state = FieldState(t=t, z=medium.z, E_in=np.zeros_like(E_out), E_out=E_out, S=S_end,
                       S_initial=S, norm_in=0.0, norm_out=norm_out, norm_spin_initial=stored,
                       norm_spin=float(medium.spin_norm(S_end)))
    return ReadResult(E_out=E_out, eta_r=norm_out / stored, state=state)


def storage_factor(t_store, cfg: MemoryConfig):
    """Efficiency retained after ``t_store`` of dark storage."""
    t_store = np.asarray(t_store, dtype=float)
    A, w = cfg.osc_amplitude, cfg.osc_omega
    return np.exp(-(t_store / cfg.tau_mem) ** 2) * (1 - A + A * np.cos(w * t_store))


def apply_storage_decay(S, t_store: float, cfg: MemoryConfig) -> np.ndarray:
    if t_store < 0:
        raise PreconditionError("storage time must be non-negative")
    return np.asarray(S) * math.sqrt(float(storage_factor(t_store, cfg)))


# ---------------------------------------------------------------------------
# storage protocol and sweeps


@dataclass(frozen=True)
class StorageProtocol:
    """Timing of one storage attempt, in trial-relative seconds.

    The read pulse ``t_start`` is relative to the start of the read grid,
    which begins ``storage_time`` after the input photon peak.
    """

    write: ControlPulse
    read: ControlPulse
    write_window: tuple = (100e-9, 900e-9)
    storage_time: float = 1.2e-6
    read_span: float = 1.0e-6

    def write_grid(self, cfg: MemoryConfig) -> np.ndarray:
        t0, t1 = self.write_window
        n = int(round((t1 - t0) / cfg.dt)) + 1
        return t0 + cfg.dt * np.arange(n)

    def read_grid(self, cfg: MemoryConfig) -> np.ndarray:
        n = int(round(self.read_span / cfg.dt)) + 1
        return cfg.dt * np.arange(n)


@dataclass
class StorageOutcome:
    """Single-photon fate probabilities and output envelopes of one protocol."""

    transmission: float
    eta_w_spin: float
    eta_wr: float
    t_write: np.ndarray
    trans_intensity: np.ndarray
    t_read: np.ndarray
    out_intensity: np.ndarray
    spin_wave: np.ndarray

    @property
    def eta_w(self) -> float:
        return 1.0 - self.transmission

    @property
    def eta_r(self) -> float:
        return self.eta_wr / self.eta_w if self.eta_w > 0 else float("nan")

    @property
    def loss(self) -> float:
        return max(0.0, 1.0 - self.transmission - self.eta_wr)


def _input_on_grid(envelope, t: np.ndarray) -> np.ndarray:
    if isinstance(envelope, WaveshapeParams):
        return input_envelope(envelope, t, grid_normalize=True).astype(complex)
    if callable(envelope):
        e = np.asarray(envelope(t), dtype=complex)
        return e / math.sqrt(np.trapezoid(np.abs(e) ** 2, t))
    return np.asarray(envelope, dtype=complex)


def _store_and_read(envelope, protocol: StorageProtocol, cfg: MemoryConfig,
                    write_pulses: Sequence[ControlPulse], read_pulses: Sequence[ControlPulse] | None = None,
                    delta2: Sequence[float] | None = None):
    t_w = protocol.write_grid(cfg)
    e_in = _input_on_grid(envelope, t_w)
    S, E_trans, medium = write_batch(e_in, t_w, write_pulses, cfg, delta2=delta2)
    trans = np.trapezoid(np.abs(E_trans) ** 2, t_w, axis=0)
    spin = medium.spin_norm(S)
    S_store = S * math.sqrt(float(storage_factor(protocol.storage_time, cfg)))
    t_r = protocol.read_grid(cfg)
    reads = read_pulses or [protocol.read] * len(write_pulses)
    E_out, _, _ = read_batch(S_store, t_r, reads, cfg)
    eta_wr = np.trapezoid(np.abs(E_out) ** 2, t_r, axis=0)
    return t_w, E_trans, trans, spin, S, t_r, E_out, eta_wr


def simulate_storage(envelope, protocol: StorageProtocol, cfg: MemoryConfig) -> StorageOutcome:
    """Full write / dark storage / read sequence for one input envelope."""
    t_w, E_trans, trans, spin, S, t_r, E_out, eta_wr = _store_and_read(
        envelope, protocol, cfg, [protocol.write])
    read_start = _peak_time(envelope, t_w) + protocol.storage_time
    return StorageOutcome(
        transmission=float(trans[0]),
        eta_w_spin=float(spin[0]),
        eta_wr=float(eta_wr[0]),
        t_write=t_w,
        trans_intensity=np.abs(E_trans[:, 0]) ** 2,
        t_read=read_start + t_r,
        out_intensity=np.abs(E_out[:, 0]) ** 2,
        spin_wave=S[:, 0],
    )


def _peak_time(envelope, t: np.ndarray) -> float:
    if isinstance(envelope, WaveshapeParams):
        return envelope.peak_time
    e = _input_on_grid(envelope, t)
    return float(t[np.argmax(np.abs(e))])


def sweep_detuning(delta2_list, cfg: MemoryConfig, protocol: StorageProtocol, envelope) -> np.ndarray:
    """Storage-and-retrieval efficiency for each two-photon detuning (rad/s)."""
    delta2_list = np.atleast_1d(np.asarray(delta2_list, dtype=float))
    if delta2_list.size == 0:
        raise PreconditionError("detuning list is empty")
    *_, eta_wr = _store_and_read(envelope, protocol, cfg, [protocol.write] * delta2_list.size,
                                 delta2=delta2_list)
    return np.asarray(eta_wr, dtype=float)


@dataclass
class PowerSweep:
    parameter: np.ndarray
    eta_w: np.ndarray
    eta_r: np.ndarray
    eta_wr: np.ndarray
    s_over_t: np.ndarray
    survival: np.ndarray
    transmission: np.ndarray
    eta_w_spin: np.ndarray
    s_over_t_infinite: np.ndarray = field(default=None)

    COLUMNS = ("parameter", "eta_w", "eta_r", "eta_wr", "s_over_t", "survival")

    def rows(self):
        return [tuple(float(getattr(self, c)[i]) for c in self.COLUMNS) for i in range(len(self.parameter))]

    def to_csv(self, path, parameter_name: str = "parameter"):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow((parameter_name,) + self.COLUMNS[1:])
            for row in self.rows():
                w.writerow([repr(x) for x in row])


def temporal_splitter_figures(eta_wr, transmission):
    """Operational figures of merit from per-photon fate probabilities.

    ``eta_w`` is the absorbed fraction ``1 - T`` (what a transmission
    measurement sees), so ``s/t = eta_wr / (1 - eta_w) = eta_wr / T``.
    Returns (eta_w, eta_r, s_over_t, survival, infinite_flag).
    """
    eta_wr = np.asarray(eta_wr, float)
    T = np.asarray(transmission, float)
    eta_w = 1.0 - T
    with np.errstate(divide="ignore", invalid="ignore"):
        eta_r = np.where(eta_w > 0, eta_wr / np.where(eta_w > 0, eta_w, 1), np.nan)
        infinite = T <= 0
        s_over_t = np.where(infinite, np.inf, eta_wr / np.where(infinite, 1, T))
    return eta_w, eta_r, s_over_t, eta_wr + T, infinite


def sweep_write_power(power_list, cfg: MemoryConfig, envelope, protocol: StorageProtocol) -> PowerSweep:
    """Temporal beam-splitter table versus write-pulse power scale."""
    powers = np.asarray(power_list, dtype=float)
    if powers.size == 0 or np.any(powers < 0):
        raise PreconditionError("powers must be a non-empty list of non-negative values")
    if np.any(np.diff(powers) < 0):
        raise PreconditionError("powers must be sorted")
    pulses = [protocol.write.with_power(p) for p in powers]
    _, _, trans, spin, _, _, _, eta_wr = _store_and_read(envelope, protocol, cfg, pulses)
    eta_w, eta_r, s_over_t, survival, inf = temporal_splitter_figures(eta_wr, trans)
    return PowerSweep(parameter=powers, eta_w=eta_w, eta_r=eta_r, eta_wr=np.asarray(eta_wr),
                      s_over_t=s_over_t, survival=survival, transmission=np.asarray(trans),
                      eta_w_spin=np.asarray(spin), s_over_t_infinite=inf)


def read_power_outputs(S, cfg: MemoryConfig, read: ControlPulse, power_list, t) -> np.ndarray:
    """Retrieved intensity profiles (nt, B) for a set of read power scales."""
    pulses = [read.with_power(p) for p in np.asarray(power_list, float)]
    E_out, _, _ = read_batch(S, t, pulses, cfg)
    return np.abs(E_out) ** 2


def calibrate_write_power(target_eta_wr: float, cfg: MemoryConfig, envelope,
                          protocol: StorageProtocol, bracket=(0.01, 10.0), n_scan: int = 24) -> float:
    """Lowest write power scale giving ``target_eta_wr``.

    eta_wr rises and then falls with write power, so the bracket is
    scanned first and the first upward crossing is refined.
    """
    from scipy.optimize import brentq

    grid = np.geomspace(bracket[0], bracket[1], n_scan)
    *_, scan = _store_and_read(envelope, protocol, cfg, [protocol.write.with_power(p) for p in grid])
    above = np.nonzero(np.asarray(scan) >= target_eta_wr)[0]
    if above.size == 0 or above[0] == 0:
        raise InfeasibleError(
            f"target eta_wr={target_eta_wr} not reachable on the rising side within power scales {bracket} "
            f"(max {float(np.max(scan)):.3f})")
    lo, hi = grid[above[0] - 1], grid[above[0]]

    def f(p):
        *_, eta = _store_and_read(envelope, protocol, cfg, [protocol.write.with_power(p)])
        return float(eta[0]) - target_eta_wr

    return brentq(f, lo, hi, xtol=1e-7)


# ---------------------------------------------------------------------------
# read-out pulse shaping


def normalized_mismatch(achieved, target, t) -> float:
    """Relative L2 distance between two intensity profiles after normalizing
    each to unit area."""
    a = np.asarray(achieved, float)
    b = np.asarray(target, float)
    a = a / np.trapezoid(a, t)
    b = b / np.trapezoid(b, t)
    return float(np.sqrt(np.trapezoid((a - b) ** 2, t) / np.trapezoid(b**2, t)))


@dataclass
class ShapedReadout:
    pulse: ControlPulse
    achieved: np.ndarray
    mismatch: float
    iterations: int
    eta_r: float
    history: list


def max_read_efficiency(S, cfg: MemoryConfig, t, peak_rabi: float) -> float:
    """Retrieval efficiency of a strong square read pulse; used as the
    achievable-energy bound for shaped read-out."""
    pulse = ControlPulse("square", peak_rabi=peak_rabi, t_start=0.0, duration=float(t[-1] - t[0]))
    return solve_read(S, pulse, cfg, t).eta_r


def shape_readout(target, cfg: MemoryConfig, S, t, energy: float | None = None,
                  tol: float = 0.05, max_iter: int = 20, rabi_cap: float | None = None,
                  damping: float = 1.0) -> ShapedReadout:
    """Find a read-pulse profile whose retrieved intensity follows ``target``.

    Starts from the single-pole rate estimate
    ``|W(t)|^2 = q(t) / (kappa (1 - Q(t)))`` with ``q`` the normalized
    target and ``Q`` its running integral, then refines by re-solving the
    read-out and re-estimating the effective rate ``kappa(t)`` from the
    achieved output until the normalized L2 mismatch drops below ``tol``.
    """
    t = np.asarray(t, dtype=float)
    target = np.clip(np.asarray(target, dtype=float), 0.0, None)
    area = np.trapezoid(target, t)
    if not area > 0:
        raise PreconditionError("target intensity must have positive area")
    S = np.asarray(S, dtype=complex)
    medium = _Medium(cfg)
    stored = float(medium.spin_norm(S))
    if not stored > 0:
        raise PreconditionError("cannot shape read-out of an empty spin wave")
    if rabi_cap is None:
        # keep RK4 comfortably stable on this grid
        rabi_cap = GAMMA_UNIT * math.sqrt(1.0 / (cfg.dt * GAMMA_UNIT * abs(medium.inv_c) * 2.0))
    if energy is not None:
        bound = max_read_efficiency(S, cfg, t, 0.5 * rabi_cap) * stored
        if energy > bound:
            raise InfeasibleError(
                f"target energy {energy:.4g} exceeds achievable read-out {bound:.4g}")

    q = target / area
    Q = np.concatenate(([0.0], np.cumsum(0.5 * (q[1:] + q[:-1]) * np.diff(t))))
    remaining_target = np.clip(1.0 - Q, 1e-3, None)
    support = q > 1e-4 * q.max()

    # effective single-pole rate from a reference square read
    ref_rabi = 0.25 * rabi_cap
    ref = ControlPulse("square", peak_rabi=ref_rabi, t_start=float(t[0]), duration=float(t[-1] - t[0]))
    ref_out = np.abs(solve_read(S, ref, cfg, t).E_out) ** 2
    kappa0 = _effective_rate(ref_out, ref.rabi(t) ** 2, t)
    kappa0 = float(np.median(kappa0[np.isfinite(kappa0)]))

    power = np.where(support, q / (kappa0 * remaining_target), 0.0)
    power = np.minimum(power, rabi_cap**2)
    history = []
    best = None
    for it in range(1, max_iter + 1):
        pulse = ControlPulse("table", table_times=tuple(t), table_values=tuple(np.sqrt(power)))
        out = np.abs(solve_read(S, pulse, cfg, t).E_out) ** 2
        mismatch = normalized_mismatch(out, target, t)
        history.append(mismatch)
        if best is None or mismatch < best[1]:
            best = (pulse, mismatch, out, it)
        if mismatch < tol:
            break
        eta = np.trapezoid(out, t)
        kappa = _effective_rate(out, power, t)
        ok = np.isfinite(kappa) & support & (out > 1e-3 * out.max())
        if not np.any(ok):
            break
        kappa = np.interp(t, t[ok], kappa[ok])
        new = np.where(support, eta * q / (kappa * np.clip(eta * remaining_target, 1e-9, None)), 0.0)
        new = np.minimum(new, rabi_cap**2)
        power = power ** (1 - damping) * new ** damping if damping < 1 else new
    pulse, mismatch, out, it = best
    return ShapedReadout(pulse=pulse, achieved=out, mismatch=mismatch, iterations=it,
                         eta_r=float(np.trapezoid(out, t)) / stored, history=history)


def _effective_rate(out, power, t):
    """kappa(t) = I(t) / (|W|^2 (E_total - int_0^t I))."""
    total = np.trapezoid(out, t)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (out[1:] + out[:-1]) * np.diff(t))))
    remaining = total - cum
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = out / (power * remaining)
    kappa[(power <= 0) | (remaining <= 1e-6 * total)] = np.nan
    return kappa
