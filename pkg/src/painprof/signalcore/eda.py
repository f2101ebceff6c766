"""Skin conductance decomposition and window features.

The phasic driver is recovered by nonnegative least squares against a
Bateman impulse response.  Because the sampled Bateman kernel is the impulse
response of a second order recursive filter, the driver is a 3-tap linear
function of the phasic component.  The solver works on the phasic samples
directly, which turns every Newton system of a primal-dual interior point
method into a banded one (plus a small dense block for the tonic spline).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.interpolate import BSpline, make_lsq_spline
from scipy.linalg import cho_solve_banded, cholesky_banded, LinAlgError
from scipy.signal import lfilter, resample_poly

from painprof.errors import InputError, OutOfRangeError

log = logging.getLogger(__name__)

MIN_DURATION_S = 10.0


@dataclass(frozen=True)
class IrfParams:
    tau1: float = 0.75  # rise, s
    tau2: float = 2.0  # decay, s

    def __post_init__(self):
        if not (0 < self.tau1 < self.tau2):
            raise InputError(f"IRF needs 0 < tau1 < tau2, got {self.tau1}, {self.tau2}")

    def kernel(self, t):
        t = np.asarray(t, dtype=float)
        h = np.exp(-t / self.tau2) - np.exp(-t / self.tau1)
        return np.where(t >= 0, h, 0.0)

    def peak(self):
        tp = np.log(self.tau2 / self.tau1) * self.tau1 * self.tau2 / (self.tau2 - self.tau1)
        return float(self.kernel(tp))


@dataclass(frozen=True)
class DeconvConfig:
    target_fs: float = 32.0
    irf: IrfParams = field(default_factory=IrfParams)
    scr_threshold: float = 0.01  # µS, reconvolved amplitude
    tonic_knot_s: float = 10.0
    l1_weight: float = 1e-4
    chunk_s: float = 120.0
    lookahead_s: float = 40.0
    driver_floor: float = 1e-3  # µS/s; interior-point residue below this is zeroed
    max_iter: int = 200
    tol: float = 1e-10


@dataclass
class ScDecomposition:
    time: np.ndarray
    fs: float
    sc: np.ndarray
    tonic: np.ndarray
    phasic: np.ndarray
    driver: np.ndarray  # µS/s, >= 0
    scr_onsets: np.ndarray  # s
    scr_amplitudes: np.ndarray  # µS
    irf_params: IrfParams
    residual_rms: float

    @property
    def scrs(self):
        return [
            {"onset_time": float(t), "amplitude": float(a)}
            for t, a in zip(self.scr_onsets, self.scr_amplitudes)
        ]

    @property
    def span(self):
        return float(self.time[0]), float(self.time[-1] + 1.0 / self.fs)


# ---------------------------------------------------------------------------
# recursive-filter form of the sampled IRF


def _irf_filter(irf: IrfParams, fs: float):
    """Return (a, b, gain) with phasic[n] = (a+b) phasic[n-1] - ab phasic[n-2] + gain driver[n-1]."""
    dt = 1.0 / fs
    a = np.exp(-dt / irf.tau2)
    b = np.exp(-dt / irf.tau1)
    return a, b, dt * (a - b)


def convolve_driver(driver, fs, irf: IrfParams = IrfParams()):
    """Phasic SC produced by ``driver`` (µS/s): dt * sum_k d[k] h((n - k) dt)."""
    a, b, gain = _irf_filter(irf, fs)
    return lfilter([0.0, gain], [1.0, -(a + b), a * b], np.asarray(driver, dtype=float))


def _tonic_knots(t0, t1, knot_s, k=3):
    n_int = max(1, int(np.ceil((t1 - t0) / knot_s - 1e-9)))
    inner = np.linspace(t0, t1, n_int + 1)
    return np.r_[[t0] * k, inner, [t1] * k]


def _nnls_block(y, fs, irf, cfg: DeconvConfig):
    """Nonnegative driver for one block; y must start with zero phasic.

    Solves   min_{d >= 0, alpha}  0.5 ||y - B alpha - H d||^2 + l1 * sum(d)
    where H is the IRF convolution and B a cubic B-spline tonic basis.
    Returns the driver (length n, last sample 0) and the tonic fit.
    """
    n = y.size
    m = n - 1
    a, b, gain = _irf_filter(irf, fs)
    g0, g1, g2 = 1.0 / gain, -(a + b) / gain, a * b / gain
    t = np.arange(n) / fs

    knots = _tonic_knots(t[0], t[-1], cfg.tonic_knot_s)
    B = BSpline.design_matrix(t, knots, 3).toarray()
    B1 = B[1:]
    BtB = B.T @ B

    def G(v):
        out = g0 * v
        out[1:] += g1 * v[:-1]
        out[2:] += g2 * v[:-2]
        return out

    def Gt(w):
        out = g0 * w
        out[:-1] += g1 * w[1:]
        out[:-2] += g2 * w[2:]
        return out

    scale = max(1.0, float(np.abs(y).max()))
    v = np.zeros(m)  # phasic samples 1..n-1 (phasic[0] == 0)
    alpha = np.linalg.lstsq(B, y, rcond=None)[0]
    u = np.ones(m)  # driver slack
    z = np.ones(m)  # its multiplier
    lam = cfg.l1_weight

    def max_step(x, dx):
        neg = dx < 0
        return min(1.0, float(np.min(-x[neg] / dx[neg]))) if neg.any() else 1.0

    for it in range(cfg.max_iter):
        res = B @ alpha - y
        res[1:] += v
        r_dv = res[1:] + Gt(lam - z)
        r_da = B.T @ res
        r_p = G(v) - u
        mu = float(u @ z) / m
        if (
            mu < cfg.tol * scale
            and np.linalg.norm(r_p) <= 1e-8 * np.sqrt(m) * scale
            and np.linalg.norm(r_dv) <= 1e-8 * np.sqrt(m) * scale
        ):
            break

        # K = I + G^T diag(z/u) G, pentadiagonal, upper banded storage
        w = z / u
        wp = np.r_[w, 0.0, 0.0]
        ab = np.zeros((3, m))
        ab[2] = 1.0 + g0 * g0 * w + g1 * g1 * wp[1 : m + 1] + g2 * g2 * wp[2 : m + 2]
        ab[1, 1:] = g0 * g1 * w[1:] + g1 * g2 * wp[2:m + 1]
        ab[0, 2:] = g0 * g2 * w[2:]
        try:
            cf = cholesky_banded(ab)
        except LinAlgError:
            log.warning("banded factorization failed at iteration %d", it)
            break
        KB = cho_solve_banded((cf, False), B1)
        schur = BtB - B1.T @ KB

        def newton(r_c):
            f1 = -r_dv - Gt((r_c + z * r_p) / u)
            kf1 = cho_solve_banded((cf, False), f1)
            da = np.linalg.solve(schur, -r_da - B1.T @ kf1)
            dv = kf1 - KB @ da
            du = G(dv) + r_p
            dz = -(r_c + z * du) / u
            return dv, da, du, dz

        # Mehrotra predictor-corrector
        dv, da, du, dz = newton(u * z)
        ap, ad = max_step(u, du), max_step(z, dz)
        mu_aff = float((u + ap * du) @ (z + ad * dz)) / m
        sigma = (mu_aff / mu) ** 3
        dv, da, du, dz = newton(u * z + du * dz - sigma * mu)
        ap = min(1.0, 0.99 * max_step(u, du))
        ad = min(1.0, 0.99 * max_step(z, dz))
        v += ap * dv
        alpha += ap * da
        u += ap * du
        z += ad * dz
    else:
        log.warning("deconvolution stopped at max_iter=%d (mu=%.3g)", cfg.max_iter, mu)

    driver = np.zeros(n)
    # complementarity split: entries whose multiplier dominates sit on the bound
    driver[:m] = np.where(z > u, 0.0, np.maximum(G(v), 0.0))
    return driver


def _resample(sc, fs, target):
    if fs <= target:
        return sc, fs
    ratio = Fraction(target / fs).limit_denominator(1000)
    out = resample_poly(sc, ratio.numerator, ratio.denominator, padtype="line")
    return out, fs * ratio.numerator / ratio.denominator


def _extract_scrs(driver, fs, irf, threshold, t0):
    """Group contiguous nonzero driver runs into SCRs, keep those above threshold."""
    nz = driver > 0
    if not nz.any():
        return np.empty(0), np.empty(0)
    edges = np.diff(np.r_[0, nz.astype(np.int8), 0])
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    horizon = int(np.ceil(6.0 * irf.tau2 * fs))
    a, b, gain = _irf_filter(irf, fs)
    den = [1.0, -(a + b), a * b]
    onsets, amps = [], []
    for s, e in zip(starts, stops):
        seg = np.zeros(e - s + horizon)
        seg[: e - s] = driver[s:e]
        amp = float(lfilter([0.0, gain], den, seg).max())
        if amp >= threshold:
            onsets.append(t0 + s / fs)
            amps.append(amp)
    return np.asarray(onsets), np.asarray(amps)


def deconvolve_sc(sc, fs, irf_params: IrfParams | None = None, config: DeconvConfig | None = None,
                  t_start=0.0) -> ScDecomposition:
    """Split skin conductance into tonic level and nonnegative phasic driver.

    Parameters
    ----------
    sc : array
        Skin conductance in µS sampled at ``fs``.
    fs : float
        Sampling rate in Hz.  Signals above ``config.target_fs`` are
        resampled down before solving.
    irf_params : IrfParams, optional
        Overrides ``config.irf``.
    t_start : float
        Time stamp of the first sample.

    Returns
    -------
    ScDecomposition
        All series live on the (possibly resampled) grid.
    """
    cfg = config or DeconvConfig()
    irf = irf_params or cfg.irf
    if not fs > 0:
        raise InputError(f"sampling rate must be positive, got {fs}")
    sc = np.asarray(sc, dtype=float)
    if sc.ndim != 1:
        raise InputError("sc must be one-dimensional")
    if not np.all(np.isfinite(sc)):
        raise InputError("sc contains non-finite samples")
    if sc.size < MIN_DURATION_S * fs:
        raise InputError(f"need at least {MIN_DURATION_S:g} s of SC, got {sc.size / fs:.2f} s")

    y, fs_w = _resample(sc, fs, cfg.target_fs)
    n = y.size
    time = t_start + np.arange(n) / fs_w
    driver = np.zeros(n)

    if np.ptp(y) > 0:
        a, b, gain = _irf_filter(irf, fs_w)
        den = [1.0, -(a + b), a * b]
        carry = np.zeros(n)
        core = max(int(cfg.chunk_s * fs_w), 16)
        look = int(cfg.lookahead_s * fs_w)
        horizon = core + look + int(10 * irf.tau2 * fs_w)
        start = 0
        while start < n - 1:
            end_core = min(n, start + core)
            end = min(n, end_core + look)
            if end - end_core < look // 2:  # short tail: absorb into this block
                end_core = end = n
            if end - start < 3:
                break
            d_blk = _nnls_block(y[start:end] - carry[start:end], fs_w, irf, cfg)
            keep = d_blk[: end_core - start]
            driver[start:end_core] = keep
            # phasic that the committed drivers push into later blocks
            stop = min(n, start + horizon)
            seg = np.zeros(stop - start)
            seg[: keep.size] = keep
            carry[start:stop] += lfilter([0.0, gain], den, seg)
            start = end_core

        driver[driver < cfg.driver_floor] = 0.0

    phasic = convolve_driver(driver, fs_w, irf)
    tonic = _fit_tonic(time, y - phasic, cfg.tonic_knot_s)
    resid = y - tonic - phasic
    onsets, amps = _extract_scrs(driver, fs_w, irf, cfg.scr_threshold, t_start)
    return ScDecomposition(
        time=time,
        fs=fs_w,
        sc=y,
        tonic=tonic,
        phasic=phasic,
        driver=driver,
        scr_onsets=onsets,
        scr_amplitudes=amps,
        irf_params=irf,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def _fit_tonic(time, target, knot_s):
    if np.ptp(target) == 0:
        return np.full_like(target, target[0] if target.size else 0.0)
    knots = _tonic_knots(time[0], time[-1], knot_s)
    return make_lsq_spline(time, target, knots, k=3)(time)


def sc_window_features(decomp: ScDecomposition, t0, duration=6.0):
    """Six SC features over samples with time in [t0, t0 + duration).

    Order: SCR count, SCR amplitude sum (µS), driver mean, driver max,
    driver integral (trapezoidal, µS), tonic mean (µS).
    """
    lo, hi = decomp.span
    eps = 1e-9
    if t0 < lo - eps or t0 + duration > hi + eps:
        raise OutOfRangeError(f"window [{t0}, {t0 + duration}) outside [{lo}, {hi})")
    i0, i1 = np.searchsorted(decomp.time, [t0 - eps, t0 + duration - eps])
    if i1 <= i0:
        raise OutOfRangeError(f"window [{t0}, {t0 + duration}) holds no samples")
    drv = decomp.driver[i0:i1]
    in_win = (decomp.scr_onsets >= t0 - eps) & (decomp.scr_onsets < t0 + duration - eps)
    # closing segment reaches the sample at t0 + duration when it exists
    j1 = min(i1 + 1, decomp.driver.size)
    integral = float(np.trapezoid(decomp.driver[i0:j1], decomp.time[i0:j1]))
    return np.array(
        [
            float(in_win.sum()),
            float(decomp.scr_amplitudes[in_win].sum()),
            float(drv.mean()),
            float(drv.max()),
            integral,
            float(decomp.tonic[i0:i1].mean()),
        ]
    )


SC_FEATURE_NAMES = (
    "scr_count",
    "scr_amplitude_sum",
    "driver_mean",
    "driver_max",
    "driver_integral",
    "tonic_mean",
)
