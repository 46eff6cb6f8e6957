"""Galerkin time stepping for the truncated rotating hydrostatic model.

The state is a SpectralField of horizontal-velocity coefficients.  Its
drift splits into the per-mode linear part (diffusion plus rotation,
solved exactly in the complex-rate picture of `linear`) and the
projected advection term P B(V, V).  B is computed either by an exact
convolution over lattice sites (Direct) or on a dealiased collocation
grid (PseudoSpectralDealiased); the two implementations act as mutual
oracles.  All schemes take the per-step noise vectors as an argument,
so trajectories are reproducible and the applied increments can be
logged for the estimator validation identities.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Union

import numpy as np
from scipy import fft as sfft

from .linear import _phi1, strand_noise_chol
from .modes import (
    BASIS_TAG,
    ModeIndex,
    SpectralField,
    field_from_text,
    field_to_text,
    hydrostatic_leray,
    mode_table,
)
from .noise import NoiseSpec, noise_amplitude_array, noise_direction_array
from .params import ModelParams

__all__ = [
    "SolverConfig",
    "Trajectory",
    "BlowUpError",
    "vertical_velocity",
    "nonlinear_B",
    "step",
    "simulate_path",
    "trajectory_to_text",
    "trajectory_from_text",
]

TRAJECTORY_FORMAT_TAG = "pespec-trajectory v1"
SCHEMES = ("ExponentialEuler", "SemiImplicitEuler", "EulerMaruyama")
CONVOLUTIONS = ("auto", "Direct", "PseudoSpectralDealiased")

_SQRT2 = math.sqrt(2.0)


class BlowUpError(RuntimeError):
    """Raised when a trajectory leaves the representable range."""

    def __init__(self, message: str, step_index: Optional[int] = None,
                 time: Optional[float] = None):
        super().__init__(message)
        self.step_index = step_index
        self.time = time


@dataclass(frozen=True)
class SolverConfig:
    """Truncation, step size and scheme choices for one simulation.

    `scheme` picks the time discretization: ExponentialEuler treats the
    diffusion-rotation part exactly per mode, SemiImplicitEuler solves it
    implicitly, EulerMaruyama is fully explicit (kept because the
    estimator reconstruction identities are exact only for plain
    left-endpoint increments).  `convolution` selects the advection
    implementation; "auto" resolves to Direct for N <= 8 and the
    dealiased grid above.  `include_nonlinear` switches the advection
    term off entirely for linear-regime studies.
    """

    N: int
    dt: float
    scheme: str = "ExponentialEuler"
    convolution: str = "auto"
    store_every: int = 1
    include_nonlinear: bool = True

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("truncation N must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.convolution not in CONVOLUTIONS:
            raise ValueError(f"unknown convolution method {self.convolution!r}")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")

    def resolved_convolution(self) -> str:
        if self.convolution != "auto":
            return self.convolution
        return "Direct" if self.N <= 8 else "PseudoSpectralDealiased"


# ---------------------------------------------------------------------------
# vertical velocity and the advection term

def vertical_velocity(f: SpectralField) -> Dict[ModeIndex, complex]:
    """Sine-series coefficients of w = -int_0^z div_h u.

    Integrating the cos(k3 z) column of the divergence gives sin(k3 z)/k3,
    so each stored mode with k3 > 0 maps to -i (k' . f_k) / k3 on the
    matching sine element.  The horizontal average is divergence-free and
    contributes nothing; w is odd in z with zero vertical mean.
    """
    tab = f.table
    out: Dict[ModeIndex, complex] = {}
    for i, k in enumerate(tab.modes):
        if k.k3 == 0:
            continue
        div = k.k1 * f.coeffs[i, 0] + k.k2 * f.coeffs[i, 1]
        out[k] = complex(-1j * div / k.k3)
    return out


class _SiteLayout:
    """Stored modes unfolded onto the full exponential lattice.

    Each canonical stored mode owns one, two or four exponential sites
    e^{i k.x}: the cosine in z splits into (k', +-k3) at weight 1/sqrt(2)
    and the implicit reality partner adds (-k', +-k3) with conjugated
    values.  `rows`, `conj` and `scale` turn a stored coefficient array
    into per-site values in one fancy-indexing pass.
    """

    def __init__(self, N: int):
        tab = mode_table(N)
        sites: List[tuple] = []
        rows: List[int] = []
        conj: List[bool] = []
        scale: List[float] = []
        for i, k in enumerate(tab.modes):
            s = 1.0 / _SQRT2 if k.k3 > 0 else 1.0
            images = [((k.k1, k.k2, k.k3), False)]
            if k.k3 > 0:
                images.append(((k.k1, k.k2, -k.k3), False))
            if not k.is_self_paired:
                images.extend(
                    [((-k1, -k2, k3), True) for (k1, k2, k3), _ in list(images)]
                )
            for site, c in images:
                sites.append(site)
                rows.append(i)
                conj.append(c)
                scale.append(s)
        self.N = N
        self.sites = np.array(sites, dtype=int)
        self.rows = np.array(rows, dtype=int)
        self.conj = np.array(conj, dtype=bool)
        self.scale = np.array(scale, dtype=float)
        # canonical read positions for the inverse map
        self.read_plus = np.stack([tab.k1, tab.k2, tab.k3], axis=1)
        self.read_minus = np.stack([tab.k1, tab.k2, -tab.k3], axis=1)
        self.k3_positive = tab.k3 > 0
        self.self_paired = tab.self_paired


@lru_cache(maxsize=32)
def _site_layout(N: int) -> _SiteLayout:
    return _SiteLayout(int(N))


def _site_values(lay: _SiteLayout, f: SpectralField) -> np.ndarray:
    vals = f.coeffs[lay.rows] * lay.scale[:, None]
    vals[lay.conj] = np.conj(vals[lay.conj])
    return vals


def _fold_sites(lay: _SiteLayout, read) -> np.ndarray:
    """Collapse exponential coefficients back onto the stored basis.

    read(sites) must return the (m, 2) coefficients at the requested
    lattice positions.  For k3 > 0 the two z-images are averaged (they
    agree analytically; averaging symmetrizes roundoff) and rescaled by
    sqrt(2); self-paired rows are real analytically, so their residual
    imaginary part is dropped.
    """
    plus = read(lay.read_plus)
    out = np.array(plus)
    kp = lay.k3_positive
    minus = read(lay.read_minus[kp])
    out[kp] = (plus[kp] + minus) / _SQRT2
    sp = lay.self_paired
    out[sp] = out[sp].real
    return out


def _w_site_values(sites: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Exponential coefficients of w(f) from the per-site values of f."""
    m3 = sites[:, 2]
    div = sites[:, 0] * vals[:, 0] + sites[:, 1] * vals[:, 1]
    return np.where(m3 != 0, -div / np.where(m3 != 0, m3, 1), 0.0)


def _convolve_direct(f: SpectralField, g: SpectralField) -> np.ndarray:
    """B(f, g) by exact summation over exponential site pairs.

    For sites m + n = p the integrand contributes
    i [ (F_m . n') + w_m n3 ] G_n, accumulated on a dense (2N+1)^3 cube.
    Quadratic in the site count, so reserved for small N and oracle use.
    """
    N = f.N
    lay = _site_layout(N)
    fv = _site_values(lay, f)
    gv = _site_values(lay, g)
    wv = _w_site_values(lay.sites, fv)

    side = 2 * N + 1
    acc = np.zeros((side ** 3, 2), dtype=complex)
    gsites = lay.sites
    lin_base = (gsites[:, 0] + N) * side * side + (gsites[:, 1] + N) * side + (
        gsites[:, 2] + N
    )
    active = np.nonzero(np.abs(fv).sum(axis=1) + np.abs(wv) > 0.0)[0]
    Nsq = N * N
    for i in active:
        m = lay.sites[i]
        p = gsites + m
        keep = (p * p).sum(axis=1) <= Nsq
        keep &= np.any(p != 0, axis=1)
        coef = 1j * (fv[i, 0] * gsites[:, 0] + fv[i, 1] * gsites[:, 1]
                     + wv[i] * gsites[:, 2])
        contrib = coef[:, None] * gv
        lin = lin_base[keep] + (m[0] * side * side + m[1] * side + m[2])
        np.add.at(acc, lin, contrib[keep])

    def read(sites: np.ndarray) -> np.ndarray:
        lin = ((sites[:, 0] + N) * side * side + (sites[:, 1] + N) * side
               + (sites[:, 2] + N))
        return acc[lin]

    return _fold_sites(lay, read)


def _convolve_pseudospectral(f: SpectralField, g: SpectralField) -> np.ndarray:
    """B(f, g) on a zero-padded collocation grid.

    With per-axis resolution G >= 3N + 1 a product of two modes bounded
    by N can only alias onto wavenumbers of magnitude >= G - 2N > N, so
    every retained coefficient of the transform is exact up to roundoff.
    """
    N = f.N
    lay = _site_layout(N)
    G = sfft.next_fast_len(3 * N + 1)
    kline = np.fft.fftfreq(G, 1.0 / G)
    K1, K2, K3 = np.meshgrid(kline, kline, kline, indexing="ij", sparse=True)

    def cube(sites: np.ndarray, vals: np.ndarray) -> np.ndarray:
        c = np.zeros((G, G, G), dtype=complex)
        c[sites[:, 0] % G, sites[:, 1] % G, sites[:, 2] % G] = vals
        return c

    fv = _site_values(lay, f)
    gv = _site_values(lay, g)
    f1 = cube(lay.sites, fv[:, 0])
    f2 = cube(lay.sites, fv[:, 1])
    wc = cube(lay.sites, _w_site_values(lay.sites, fv))

    u1 = sfft.ifftn(f1, norm="forward").real
    u2 = sfft.ifftn(f2, norm="forward").real
    w = sfft.ifftn(wc, norm="forward").real

    b = []
    for comp in range(2):
        gc = cube(lay.sites, gv[:, comp])
        gx = sfft.ifftn(1j * K1 * gc, norm="forward").real
        gy = sfft.ifftn(1j * K2 * gc, norm="forward").real
        gz = sfft.ifftn(1j * K3 * gc, norm="forward").real
        b.append(sfft.fftn(u1 * gx + u2 * gy + w * gz, norm="forward"))

    def read(sites: np.ndarray) -> np.ndarray:
        ix, iy, iz = sites[:, 0] % G, sites[:, 1] % G, sites[:, 2] % G
        return np.stack([b[0][ix, iy, iz], b[1][ix, iy, iz]], axis=1)

    return _fold_sites(lay, read)


def nonlinear_B(f: SpectralField, g: SpectralField, method: str = "auto") -> SpectralField:
    """Projected advection term B(f, g) = f . grad_h g + w(f) dz g.

    Returns the coefficients of P_N B in the stored cosine basis with the
    zero mode discarded.  The output is generally not divergence-free in
    its horizontal average; the solver applies the hydrostatic Leray
    projection separately.  The horizontal average of `f` is assumed
    divergence-free (it then contributes nothing to w).
    """
    if f.N != g.N:
        raise ValueError(f"truncation mismatch: {f.N} vs {g.N}")
    if method == "auto":
        method = "Direct" if f.N <= 8 else "PseudoSpectralDealiased"
    if method == "Direct":
        coeffs = _convolve_direct(f, g)
    elif method == "PseudoSpectralDealiased":
        coeffs = _convolve_pseudospectral(f, g)
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    return SpectralField(f.N, coeffs)


# ---------------------------------------------------------------------------
# per-step linear factors and noise sampling

class _StepFactors:
    """Per-mode propagators and noise factors at fixed (N, dt, params).

    The complex rate z = lam + i f0 encodes the 2x2 matrix lam I + f0 J;
    multiplication in C corresponds to composition of such matrices, so
    decay and the nonlinear-term filter phi = (1 - e^{-z dt})/z apply to
    the complex coefficient pairs through `_apply_pair`.
    """

    def __init__(self, N: int, dt: float, params: ModelParams):
        tab = mode_table(N)
        spec = NoiseSpec(sigma0=params.sigma0, gamma=params.gamma)
        lam = params.nu_h * tab.kp_sq + params.nu_z * tab.k3_sq
        f0 = np.where(tab.k3 != 0, params.f0, 0.0)
        self.n = tab.n
        self.z = lam + 1j * f0
        self.decay = np.exp(-self.z * dt)
        self.phi = dt * np.array([_phi1(-zz * dt) for zz in self.z])
        self.lam_max = float(lam.max())
        self.amp = noise_amplitude_array(spec, N)
        self.dirs = noise_direction_array(spec, N)
        self.paired = ~tab.self_paired
        amp_strand = np.where(self.paired, self.amp / _SQRT2, self.amp)
        chol = np.array([
            strand_noise_chol(la, ff, aa, complex(d1, d2), dt)
            for la, ff, aa, (d1, d2) in zip(lam, f0, amp_strand, self.dirs)
        ])
        self.s11, self.s21, self.s22 = chol.T
        self.n_paired = int(self.paired.sum())


@lru_cache(maxsize=32)
def _step_factors(N: int, dt: float, params: ModelParams) -> _StepFactors:
    return _StepFactors(N, dt, params)


def _apply_pair(w: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Apply the matrix x I + y J (w = x + i y, per mode) to C^2 rows."""
    out = np.empty_like(c)
    out[:, 0] = w.real * c[:, 0] - w.imag * c[:, 1]
    out[:, 1] = w.imag * c[:, 0] + w.real * c[:, 1]
    return out


def _strand_noise(fac: _StepFactors, z: np.ndarray) -> np.ndarray:
    return fac.s11 * z[:, 0] + 1j * (fac.s21 * z[:, 0] + fac.s22 * z[:, 1])


def draw_increments(cfg: SolverConfig, params: ModelParams,
                    rng: np.random.Generator) -> np.ndarray:
    """Per-mode noise vectors for one step of the configured scheme.

    ExponentialEuler uses the exactly integrated Ornstein-Uhlenbeck
    noise (one filtered Gaussian per real strand, via the Cholesky
    factors of `linear`); the Euler schemes use plain Wiener increments
    amp c_k dW.  Self-paired modes stay real by construction.
    """
    fac = _step_factors(cfg.N, cfg.dt, params)
    if cfg.scheme == "ExponentialEuler":
        eta_x = _strand_noise(fac, rng.standard_normal((fac.n, 2)))
        eta_y = np.zeros(fac.n, dtype=complex)
        if fac.n_paired:
            zp = rng.standard_normal((fac.n_paired, 2))
            eta_y[fac.paired] = (
                fac.s11[fac.paired] * zp[:, 0]
                + 1j * (fac.s21[fac.paired] * zp[:, 0]
                        + fac.s22[fac.paired] * zp[:, 1])
            )
        out = np.empty((fac.n, 2), dtype=complex)
        out[:, 0] = eta_x.real + 1j * eta_y.real
        out[:, 1] = eta_x.imag + 1j * eta_y.imag
        return out
    z = rng.standard_normal((fac.n, 2))
    dw = np.where(
        fac.paired,
        math.sqrt(cfg.dt / 2.0) * (z[:, 0] + 1j * z[:, 1]),
        math.sqrt(cfg.dt) * (z[:, 0] + 0j),
    )
    return (fac.amp * dw)[:, None] * fac.dirs


# ---------------------------------------------------------------------------
# time stepping

def step(state: SpectralField, cfg: SolverConfig, params: ModelParams,
         increments) -> SpectralField:
    """Advance the state by one step, applying the given noise vectors.

    `increments` is the (n_modes, 2) complex array of per-mode noise for
    this step, in stored-mode order (see `draw_increments`); the caller
    owns the randomness so paths can be replayed and logged.
    """
    if state.N != cfg.N:
        raise ValueError(f"state truncation {state.N} != config N {cfg.N}")
    fac = _step_factors(cfg.N, cfg.dt, params)
    incr = np.asarray(increments, dtype=complex)
    if incr.shape != state.coeffs.shape:
        raise ValueError("increments must match the stored coefficient shape")
    c = state.coeffs
    b = None
    if cfg.include_nonlinear:
        bf = nonlinear_B(state, state, cfg.resolved_convolution())
        b = hydrostatic_leray(bf).coeffs
    dt = cfg.dt
    if cfg.scheme == "ExponentialEuler":
        new = _apply_pair(fac.decay, c)
        if b is not None:
            new -= _apply_pair(fac.phi, b)
        new += incr
    elif cfg.scheme == "SemiImplicitEuler":
        rhs = c + incr
        if b is not None:
            rhs = rhs - dt * b
        new = _apply_pair(1.0 / (1.0 + fac.z * dt), rhs)
    else:  # EulerMaruyama
        new = c - dt * _apply_pair(fac.z, c) + incr
        if b is not None:
            new -= dt * b
    if not np.all(np.isfinite(new.view(float))):
        raise BlowUpError("non-finite coefficients after a time step")
    return state.with_coeffs(new)


@dataclass(eq=False)
class Trajectory:
    """Sampled path of the spectral state with optional noise log.

    `times` and `states` hold every store_every-th step including the
    initial condition; `noise_log` (when kept) holds the applied noise
    vectors of every internal step, which the estimator module uses to
    reconstruct martingale terms exactly.
    """

    times: np.ndarray
    states: List[SpectralField]
    params: ModelParams
    config: SolverConfig
    seed: Optional[int] = None
    noise_log: Optional[List[np.ndarray]] = None

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if len(self.times) < 1:
            raise ValueError("trajectory needs at least one sample")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        Ns = {s.N for s in self.states}
        if len(Ns) > 1:
            raise ValueError("all states must share one truncation")

    @property
    def N(self) -> int:
        return self.states[0].N

    @property
    def n_samples(self) -> int:
        return len(self.states)

    def coefficient_stack(self) -> np.ndarray:
        """All stored coefficients as one (n_samples, n_modes, 2) array."""
        return np.stack([s.coeffs for s in self.states])

    def aggregated_noise(self) -> np.ndarray:
        """Per-sample noise sums, shape (n_samples - 1, n_modes, 2).

        Entry j collects the noise applied between stored samples j and
        j+1 (store_every internal steps).
        """
        if self.noise_log is None:
            raise ValueError("trajectory carries no noise log")
        se = self.config.store_every
        stack = np.stack(self.noise_log)
        if len(stack) != (self.n_samples - 1) * se:
            raise ValueError("noise log length inconsistent with samples")
        return stack.reshape(self.n_samples - 1, se, *stack.shape[1:]).sum(axis=1)


def simulate_path(params: ModelParams, V0: Optional[SpectralField],
                  cfg: SolverConfig, rng: Union[int, np.random.Generator],
                  log_noise: bool = True) -> Trajectory:
    """Integrate one sample path over [0, params.T].

    `rng` may be a seed (recorded in the trajectory for provenance) or a
    Generator.  dt must divide T into whole steps and store_every must
    divide the step count, so the final sample always lands on T.
    """
    if isinstance(rng, (int, np.integer)):
        seed: Optional[int] = int(rng)
        gen = np.random.default_rng(seed)
    else:
        seed = None
        gen = rng
    n_steps = int(round(params.T / cfg.dt))
    if n_steps < 1 or abs(n_steps * cfg.dt - params.T) > 1e-8 * max(1.0, params.T):
        raise ValueError("dt must divide the horizon T into whole steps")
    if n_steps % cfg.store_every != 0:
        raise ValueError("store_every must divide the number of steps")
    if V0 is None:
        V0 = SpectralField.zeros(cfg.N)
    if V0.N != cfg.N:
        raise ValueError(f"initial state truncation {V0.N} != config N {cfg.N}")
    if not V0.is_divergence_free():
        raise ValueError("initial state must have a divergence-free horizontal average")
    fac = _step_factors(cfg.N, cfg.dt, params)
    if cfg.scheme == "EulerMaruyama" and cfg.dt * fac.lam_max >= 2.0:
        raise ValueError(
            f"explicit Euler diffusion step unstable: dt*lambda_max = "
            f"{cfg.dt * fac.lam_max:.3g} >= 2"
        )
    times = [0.0]
    states = [V0]
    noise_log: List[np.ndarray] = []
    state = V0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            incr = draw_increments(cfg, params, gen)
            if log_noise:
                noise_log.append(incr)
            try:
                state = step(state, cfg, params, incr)
            except BlowUpError:
                raise BlowUpError(
                    f"trajectory blew up at step {i + 1} of {n_steps} "
                    f"(t = {(i + 1) * cfg.dt:.6g})",
                    step_index=i + 1,
                    time=(i + 1) * cfg.dt,
                ) from None
            if (i + 1) % cfg.store_every == 0:
                times.append((i + 1) * cfg.dt)
                states.append(state)
    return Trajectory(
        times=np.array(times),
        states=states,
        params=params,
        config=cfg,
        seed=seed,
        noise_log=noise_log if log_noise else None,
    )


# ---------------------------------------------------------------------------
# trajectory serialization

def _fmt(x: float) -> str:
    return repr(float(x))


def trajectory_to_text(traj: Trajectory, include_noise: bool = False) -> str:
    """Versioned text dump: header, one field block per sample, optional
    per-step noise rows.  repr() float formatting keeps round trips exact."""
    p, c = traj.params, traj.config
    buf = io.StringIO()
    buf.write(f"# {TRAJECTORY_FORMAT_TAG} basis={BASIS_TAG}\n")
    buf.write(
        f"# params nu_h={_fmt(p.nu_h)} nu_z={_fmt(p.nu_z)} f0={_fmt(p.f0)} "
        f"sigma0={_fmt(p.sigma0)} gamma={_fmt(p.gamma)} q={p.q} "
        f"alpha={_fmt(p.alpha)} N={p.N} T={_fmt(p.T)}\n"
    )
    buf.write(
        f"# config N={c.N} dt={_fmt(c.dt)} scheme={c.scheme} "
        f"convolution={c.convolution} store_every={c.store_every} "
        f"include_nonlinear={c.include_nonlinear}\n"
    )
    buf.write(f"# seed {'none' if traj.seed is None else traj.seed}\n")
    n_noise = len(traj.noise_log) if (include_noise and traj.noise_log) else 0
    buf.write(f"# samples {traj.n_samples} noise {n_noise}\n")
    for t, state in zip(traj.times, traj.states):
        buf.write(f"time {_fmt(t)}\n")
        buf.write(field_to_text(state))
    if n_noise:
        for j, incr in enumerate(traj.noise_log):
            buf.write(f"noise-step {j}\n")
            for u, v in incr:
                buf.write(
                    f"{_fmt(u.real)},{_fmt(u.imag)},{_fmt(v.real)},{_fmt(v.imag)}\n"
                )
    return buf.getvalue()


def _parse_kv(line: str, prefix: str) -> Dict[str, str]:
    body = line[len(prefix):].strip()
    return dict(part.split("=", 1) for part in body.split())


def trajectory_from_text(text: str) -> Trajectory:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {TRAJECTORY_FORMAT_TAG}"):
        raise ValueError("unrecognized trajectory header")
    pk = _parse_kv(lines[1], "# params")
    params = ModelParams(
        nu_h=float(pk["nu_h"]), nu_z=float(pk["nu_z"]), f0=float(pk["f0"]),
        sigma0=float(pk["sigma0"]), gamma=float(pk["gamma"]),
        q=Fraction(pk["q"]), alpha=float(pk["alpha"]), N=int(pk["N"]),
        T=float(pk["T"]),
    )
    ck = _parse_kv(lines[2], "# config")
    cfg = SolverConfig(
        N=int(ck["N"]), dt=float(ck["dt"]), scheme=ck["scheme"],
        convolution=ck["convolution"], store_every=int(ck["store_every"]),
        include_nonlinear=ck["include_nonlinear"] == "True",
    )
    seed_txt = lines[3].split()[-1]
    seed = None if seed_txt == "none" else int(seed_txt)
    counts = lines[4].split()
    n_samples, n_noise = int(counts[2]), int(counts[4])
    n_modes = mode_table(cfg.N).n

    pos = 5
    times: List[float] = []
    states: List[SpectralField] = []
    for _ in range(n_samples):
        if not lines[pos].startswith("time "):
            raise ValueError(f"expected a time marker at line {pos + 1}")
        times.append(float(lines[pos].split()[1]))
        block = "\n".join(lines[pos + 1: pos + 2 + n_modes])
        states.append(field_from_text(block))
        pos += 1 + 1 + n_modes
    noise_log: Optional[List[np.ndarray]] = None
    if n_noise:
        noise_log = []
        for j in range(n_noise):
            if lines[pos] != f"noise-step {j}":
                raise ValueError(f"expected noise-step {j} at line {pos + 1}")
            rows = np.array(
                [[float(x) for x in ln.split(",")]
                 for ln in lines[pos + 1: pos + 1 + n_modes]]
            )
            # assemble by part assignment: complex arithmetic would
            # normalize signed zeros and break byte-exact round trips
            incr = np.empty((n_modes, 2), dtype=complex)
            incr.real = rows[:, 0::2]
            incr.imag = rows[:, 1::2]
            noise_log.append(incr)
            pos += 1 + n_modes
    return Trajectory(
        times=np.array(times), states=states, params=params, config=cfg,
        seed=seed, noise_log=noise_log,
    )
