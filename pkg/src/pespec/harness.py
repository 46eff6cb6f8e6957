"""Monte Carlo orchestration, report writers, and appendix checks.

The harness runs three kinds of experiment.  LinearExact mode samples
the linear model exactly at the estimation grid, strand by strand, so
consistency and normality sweeps measure estimator behaviour free of
solver bias.  LinearViaSolver and FullNonlinear route through the time
stepper and the trajectory estimators.  Separate entry points validate
the linear moments against their closed forms and check the lattice
counting facts used by the asymptotic constants.

Reports are plain CSV plus a one-line JSON manifest carrying the config
hash and seed; nothing timestamped, so a rerun with the same seed is
byte-identical.  Statistical gates are hard (they decide the exit code
of the CLI); sweep-shape checks are soft warnings.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .estimators import EstimatorConfig, estimate_nu_h, estimate_nu_z_hat, theoretical_covariance
from .linear import mode_energy_mean, mode_energy_variance, strand_noise_chol
from .modes import BAROTROPIC, ModeSelector, mode_table, random_field, selector_mask
from .noise import NoiseSpec, noise_amplitude_array, noise_direction_array
from .params import ModelParams, as_fraction
from .solver import SolverConfig, simulate_path

__all__ = [
    "ExperimentConfig",
    "load_config",
    "config_text",
    "config_hash",
    "run_consistency",
    "run_normality",
    "run_linear_validation",
    "number_theory_checks",
    "linear_exact_estimates",
    "linear_moment_check",
]

MODES = ("LinearExact", "LinearViaSolver", "FullNonlinear")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, in one frozen bundle.

    The estimator default is the truncation-aware variant V2: harness
    runs observe complete simulated paths, where the full-path variant
    V1 has no headroom unless N_obs is set below the truncation.
    """

    params: ModelParams = ModelParams()
    solver: SolverConfig = SolverConfig(N=8, dt=1e-3)
    estimator: EstimatorConfig = EstimatorConfig(variant="V2")
    replications: int = 200
    N_sweep: Tuple[int, ...] = (4, 8, 12)
    seed: int = 2026
    mode: str = "LinearExact"
    output_dir: Path = Path("runs")

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        sweep = tuple(int(n) for n in self.N_sweep)
        if not sweep or any(b <= a for a, b in zip(sweep, sweep[1:])):
            raise ValueError("N_sweep must be nonempty and strictly ascending")
        object.__setattr__(self, "N_sweep", sweep)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "output_dir", Path(self.output_dir))


# ---------------------------------------------------------------------------
# flat key=value configuration files

_PARAM_KEYS = {"nu_h", "nu_z", "f0", "sigma0", "gamma", "T", "alpha"}
_SOLVER_KEYS = {"N", "dt", "scheme", "convolution", "store_every", "include_nonlinear"}


def load_config(path, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """Read a flat key=value file; later keys win, then `overrides`."""
    raw: Dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line without '=': {line!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return _config_from_dict(raw)


def _config_from_dict(raw: Dict[str, str]) -> ExperimentConfig:
    known = (_PARAM_KEYS | _SOLVER_KEYS
             | {"q", "variant", "N_obs", "replications", "N_sweep", "seed",
                "mode", "output_dir"})
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    pk = {k: float(raw[k]) for k in _PARAM_KEYS if k in raw}
    if "q" in raw:
        pk["q"] = as_fraction(Fraction(raw["q"]))
    params = ModelParams(**pk)

    sk: Dict[str, object] = {}
    if "N" in raw:
        sk["N"] = int(raw["N"])
    if "dt" in raw:
        sk["dt"] = float(raw["dt"])
    for key in ("scheme", "convolution"):
        if key in raw:
            sk[key] = raw[key]
    if "store_every" in raw:
        sk["store_every"] = int(raw["store_every"])
    if "include_nonlinear" in raw:
        sk["include_nonlinear"] = raw["include_nonlinear"].lower() in ("1", "true", "yes")
    solver = SolverConfig(**{"N": 8, "dt": 1e-3, **sk})

    ek: Dict[str, object] = {"alpha": params.alpha, "q": params.q,
                             "variant": raw.get("variant", "V2")}
    if raw.get("N_obs"):
        ek["N_obs"] = int(raw["N_obs"])
    estimator = EstimatorConfig(**ek)

    kwargs: Dict[str, object] = {"params": params, "solver": solver,
                                 "estimator": estimator}
    if "replications" in raw:
        kwargs["replications"] = int(raw["replications"])
    if "N_sweep" in raw:
        kwargs["N_sweep"] = tuple(int(x) for x in raw["N_sweep"].split(",") if x.strip())
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    if "mode" in raw:
        kwargs["mode"] = raw["mode"]
    if "output_dir" in raw:
        kwargs["output_dir"] = Path(raw["output_dir"])
    return ExperimentConfig(**kwargs)


def config_text(cfg: ExperimentConfig) -> str:
    """Canonical flat rendering, the input to the config hash.

    The output directory is deliberately absent: where a run lands does
    not change what it computes, and the reports of two runs into
    different directories are meant to be byte-identical.
    """
    p, s, e = cfg.params, cfg.solver, cfg.estimator
    lines = [
        f"nu_h = {p.nu_h!r}", f"nu_z = {p.nu_z!r}", f"f0 = {p.f0!r}",
        f"sigma0 = {p.sigma0!r}", f"gamma = {p.gamma!r}", f"q = {p.q}",
        f"alpha = {p.alpha!r}", f"T = {p.T!r}",
        f"N = {s.N}", f"dt = {s.dt!r}", f"scheme = {s.scheme}",
        f"convolution = {s.convolution}", f"store_every = {s.store_every}",
        f"include_nonlinear = {s.include_nonlinear}",
        f"variant = {e.variant}", f"N_obs = {'' if e.N_obs is None else e.N_obs}",
        f"replications = {cfg.replications}",
        f"N_sweep = {','.join(str(n) for n in cfg.N_sweep)}",
        f"seed = {cfg.seed}", f"mode = {cfg.mode}",
    ]
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# report plumbing

def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (np.floating,)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [",".join(header)]
    out.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(out) + "\n")
    return path


def _write_manifest(path: Path, entry: Dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(entry, sort_keys=True) + "\n")
    return path


@dataclass
class GateResult:
    name: str
    passed: bool
    observed: float
    bound: float
    hard: bool = True

    def __post_init__(self) -> None:
        # numpy scalars sneak in from comparisons; JSON wants natives
        self.passed = bool(self.passed)
        self.observed = float(self.observed)
        self.bound = float(self.bound)

    def row(self) -> List:
        return [self.name, "pass" if self.passed else "FAIL",
                self.observed, self.bound, "hard" if self.hard else "soft"]


@dataclass
class RunReport:
    """Common shape for every harness run."""

    command: str
    outputs: List[Path] = field(default_factory=list)
    gates: List[GateResult] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def hard_ok(self) -> bool:
        return all(g.passed for g in self.gates if g.hard)

    def manifest_entry(self, cfg: ExperimentConfig) -> Dict:
        # file names, not paths, so reruns into another directory stay
        # byte-identical
        return {
            "command": self.command,
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "outputs": [p.name for p in self.outputs],
            "gates": {g.name: g.passed for g in self.gates},
            "warnings": self.warnings,
        }


# ---------------------------------------------------------------------------
# exact linear sampling of the estimator pair

def _estimation_grid(N: int, T: float) -> Tuple[float, int]:
    # keep lambda_max * dt about 1.4e-2 so the left-endpoint quadrature
    # bias stays a small fraction of the statistical spread, capped for
    # tiny truncations
    target = min(1e-3, 1.44e-2 / (N * N))
    n_steps = max(1, round(T / target))
    return T / n_steps, n_steps


@dataclass
class _StrandSystem:
    """Vectorized exact-OU transition for the estimator's mode families."""

    decay: np.ndarray       # (S,) complex, exp(-(lam + i f0) dt)
    s11: np.ndarray         # (S,) noise Cholesky factors per strand
    s21: np.ndarray
    s22: np.ndarray
    rot_cols: np.ndarray    # indices of strands that need a second normal
    ivec_h: np.ndarray      # (S,) Ito weights, zero off the barotropic set
    dvec_h: np.ndarray
    ivec_r: np.ndarray      # (S,) weights on the resonant set
    dvec_r: np.ndarray
    lam: np.ndarray
    f0: np.ndarray
    dt: float
    n_steps: int

    @property
    def n_strands(self) -> int:
        return self.decay.size


def _build_strands(params: ModelParams, N: int, alpha: float, q,
                   dt: float, n_steps: int) -> _StrandSystem:
    tab = mode_table(N)
    spec = NoiseSpec(sigma0=params.sigma0, gamma=params.gamma)
    amp = noise_amplitude_array(spec, N)
    dirs = noise_direction_array(spec, N)

    mask_h = np.array(selector_mask(N, BAROTROPIC))
    mask_r = np.array(selector_mask(N, ModeSelector.resonant(q)))
    keep = mask_h | mask_r
    idx = np.flatnonzero(keep)
    if not mask_h.any() or not mask_r.any():
        raise ValueError("estimator families need barotropic and resonant modes")
    # both families exclude k' = 0, so every kept mode is conjugate-paired
    # and unfolds into two strands of amplitude amp / sqrt(2)
    assert not tab.self_paired[idx].any()

    lam_m = params.nu_h * tab.kp_sq[idx] + params.nu_z * tab.k3_sq[idx]
    f0_m = np.where(tab.k3_sq[idx] > 0, params.f0, 0.0)
    amp_m = amp[idx] / math.sqrt(2.0)
    zeta_m = dirs[idx, 0] + 1j * dirs[idx, 1]

    mu_i_h = np.where(mask_h[idx], tab.kp_sq[idx] ** (1.0 + alpha), 0.0)
    mu_d_h = np.where(mask_h[idx], tab.kp_sq[idx] ** (2.0 + alpha), 0.0)
    on_r = mask_r[idx]
    mu_i_r = np.where(on_r, tab.k3_sq[idx] * tab.k_sq[idx] ** alpha, 0.0)
    mu_d_r = np.where(on_r, tab.k3_sq[idx] ** 2 * tab.k_sq[idx] ** alpha, 0.0)
    w = tab.weight[idx]

    chol = np.array([
        strand_noise_chol(float(l), float(f), float(a), complex(zc), dt)
        for l, f, a, zc in zip(lam_m, f0_m, amp_m, zeta_m)
    ])

    def per_strand(v):
        return np.repeat(v, 2)

    return _StrandSystem(
        decay=per_strand(np.exp(-(lam_m + 1j * f0_m) * dt)),
        s11=per_strand(chol[:, 0]),
        s21=per_strand(chol[:, 1]),
        s22=per_strand(chol[:, 2]),
        rot_cols=np.flatnonzero(per_strand(f0_m) != 0.0),
        ivec_h=per_strand(w * mu_i_h),
        dvec_h=per_strand(w * mu_d_h),
        ivec_r=per_strand(w * mu_i_r),
        dvec_r=per_strand(w * mu_d_r),
        lam=per_strand(lam_m),
        f0=per_strand(f0_m),
        dt=dt,
        n_steps=n_steps,
    )


def linear_exact_estimates(params: ModelParams, N: int, alpha: float, q,
                           reps: int, rng: np.random.Generator,
                           dt: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Sample (nu_h estimate, resonant nu_z estimate) from exact OU paths.

    The linear model is sampled without any time-stepping error at the
    estimation grid; with linear dynamics the advection terms do not
    belong in the model, so the estimates match the drop-advection
    variant applied to a linear trajectory.
    """
    if dt is None:
        dt, n_steps = _estimation_grid(N, params.T)
    else:
        n_steps = max(1, round(params.T / dt))
        dt = params.T / n_steps
    sysm = _build_strands(params, N, alpha, q, dt, n_steps)

    Z = np.zeros((reps, sysm.n_strands), dtype=complex)
    I_h = np.zeros(reps)
    D_h = np.zeros(reps)
    I_r = np.zeros(reps)
    D_r = np.zeros(reps)
    for _ in range(sysm.n_steps):
        n1 = rng.standard_normal(Z.shape)
        eta = sysm.s11 * n1 + 1j * (sysm.s21 * n1)
        if sysm.rot_cols.size:
            n2 = rng.standard_normal((reps, sysm.rot_cols.size))
            eta[:, sysm.rot_cols] += 1j * (sysm.s22[sysm.rot_cols] * n2)
        Z_new = Z * sysm.decay + eta
        d = Z_new - Z
        re_pair = Z.real * d.real + Z.imag * d.imag
        I_h += re_pair @ sysm.ivec_h
        I_r += re_pair @ sysm.ivec_r
        sq = Z.real ** 2 + Z.imag ** 2
        D_h += sq @ sysm.dvec_h
        D_r += sq @ sysm.dvec_r
        Z = Z_new
    D_h *= dt
    D_r *= dt
    if not (D_h > 0).all() or not (D_r > 0).all():
        raise ValueError("degenerate denominator in exact linear sampling")
    nu_h = -I_h / D_h
    nu_z = -I_r / D_r - float(q) * nu_h
    return nu_h, nu_z


def _predicted_grid_bias(params: ModelParams, N: int, alpha: float, q,
                         dt: float, n_steps: int) -> Tuple[float, float]:
    """Expected shift of the scaled errors from the left-endpoint grid.

    Exact first moments of the Ito and quadratic sums (transient OU from
    zero) give the expected numerator and denominator; the ratio of
    expectations predicts where the ensemble mean sits at finite dt.
    """
    tab = mode_table(N)
    spec = NoiseSpec(sigma0=params.sigma0, gamma=params.gamma)
    amp = noise_amplitude_array(spec, N)
    lam = params.nu_h * tab.kp_sq + params.nu_z * tab.k3_sq
    f0 = np.where(tab.k3_sq > 0, params.f0, 0.0)
    # sum_i dt E|c(t_i)|^2 with E|c(t)|^2 = amp^2 (1 - e^{-2 lam t})/(2 lam)
    rho = np.exp(-2.0 * lam * dt)
    geo = (1.0 - rho ** n_steps) / (1.0 - rho)
    s_bar = amp ** 2 / (2.0 * lam) * (params.T - dt * geo)
    g = (np.exp(-lam * dt) * np.cos(f0 * dt) - 1.0) / dt

    def family(mask, mu_i, mu_d):
        w = tab.weight[mask]
        num = float(np.sum(w * mu_i[mask] * g[mask] * s_bar[mask]))
        den = float(np.sum(w * mu_d[mask] * s_bar[mask]))
        return -num / den

    mask_h = np.array(selector_mask(N, BAROTROPIC))
    mask_r = np.array(selector_mask(N, ModeSelector.resonant(q)))
    nu_h_pred = family(mask_h, tab.kp_sq ** (1.0 + alpha), tab.kp_sq ** (2.0 + alpha))
    nu_r_pred = family(mask_r, tab.k3_sq * tab.k_sq ** alpha,
                       tab.k3_sq ** 2 * tab.k_sq ** alpha) - float(q) * nu_h_pred
    scale = N * N
    return scale * (nu_h_pred - params.nu_h), scale * (nu_r_pred - params.nu_z)


# ---------------------------------------------------------------------------
# replication loops for the solver-backed modes

def _solver_estimates(cfg: ExperimentConfig, N: int, rep_rng: np.random.Generator):
    """One replication through the time stepper; returns (nu_h, nu_z_hat)."""
    params = cfg.params.with_(N=N)
    nonlinear = cfg.mode == "FullNonlinear"
    solver = replace(cfg.solver, N=N, include_nonlinear=nonlinear)
    if params.sigma0 == 0.0:
        # a zero start would stay at zero; degenerate configs decay from a
        # random smooth state instead so the estimates stay well posed
        V0 = random_field(N, rep_rng)
    else:
        V0 = None
    traj = simulate_path(params, V0, solver, rep_rng, log_noise=False)
    variant = cfg.estimator.variant if nonlinear else "V3"
    ecfg = EstimatorConfig(alpha=cfg.params.alpha, q=cfg.params.q,
                           variant=variant, N_obs=cfg.estimator.N_obs)
    nu_h = estimate_nu_h(traj, ecfg).value
    nu_z = estimate_nu_z_hat(traj, ecfg).value
    return nu_h, nu_z


def run_consistency(cfg: ExperimentConfig) -> RunReport:
    """Estimate across the N sweep and summarize errors against truth.

    Per-replication rows land in consistency_rows.csv, per-N summaries in
    consistency_summary.csv.  A non-decreasing RMSE along the sweep is a
    soft warning (single sweeps are noisy); having at least one usable
    replication per N is the hard gate.
    """
    report = RunReport(command="consistency")
    rng = np.random.default_rng(cfg.seed)
    rows: List[List] = []
    summary: List[List] = []
    rmse_track: Dict[str, List[float]] = {"nu_h": [], "nu_z_hat": []}
    truth = {"nu_h": cfg.params.nu_h, "nu_z_hat": cfg.params.nu_z}

    for N in cfg.N_sweep:
        samples: Dict[str, List[float]] = {"nu_h": [], "nu_z_hat": []}
        if cfg.mode == "LinearExact":
            nu_h, nu_z = linear_exact_estimates(
                cfg.params, N, cfg.params.alpha, cfg.params.q,
                cfg.replications, rng)
            for rep in range(cfg.replications):
                rows.append([N, rep, "ok", float(nu_h[rep]), float(nu_z[rep]), ""])
            samples["nu_h"] = list(map(float, nu_h))
            samples["nu_z_hat"] = list(map(float, nu_z))
        else:
            for rep in range(cfg.replications):
                try:
                    vh, vz = _solver_estimates(cfg, N, rng)
                except (ValueError, RuntimeError) as exc:
                    rows.append([N, rep, "failed", "", "", str(exc).replace(",", ";")])
                    continue
                rows.append([N, rep, "ok", vh, vz, ""])
                samples["nu_h"].append(vh)
                samples["nu_z_hat"].append(vz)

        for name in ("nu_h", "nu_z_hat"):
            vals = np.asarray(samples[name])
            if vals.size == 0:
                summary.append([N, name, 0, "", "", ""])
                continue
            err = vals - truth[name]
            rmse = float(np.sqrt(np.mean(err ** 2)))
            summary.append([N, name, vals.size, float(vals.mean()),
                            float(vals.std(ddof=1)) if vals.size > 1 else 0.0, rmse])
            rmse_track[name].append(rmse)

    for name, track in rmse_track.items():
        if len(track) == len(cfg.N_sweep) and any(
                b >= a for a, b in zip(track, track[1:])):
            msg = f"RMSE of {name} is not strictly decreasing along the sweep: {track}"
            report.warnings.append(msg)
            warnings.warn(msg)

    usable = min((row[2] for row in summary if row[2] != ""), default=0)
    report.gates.append(GateResult("usable_replications", usable >= 1,
                                   float(usable), 1.0))
    out = cfg.output_dir
    report.outputs.append(_write_csv(
        out / "consistency_rows.csv",
        ["N", "rep", "status", "nu_h", "nu_z_hat", "error"], rows))
    report.outputs.append(_write_csv(
        out / "consistency_summary.csv",
        ["N", "estimator", "n_ok", "mean", "std", "rmse"], summary))
    report.outputs.append(_write_manifest(
        out / "consistency_manifest.jsonl", report.manifest_entry(cfg)))
    return report


def run_normality(cfg: ExperimentConfig) -> RunReport:
    """Sample the N^2-scaled error pair and test it against the limit law.

    Hard gates: covariance entries within 25% of the theoretical matrix,
    marginal Anderson-Darling normality not rejected at 1%, and the
    decorrelation of e1 with q e1 + e2 within 3 standard errors.  The raw
    means carry a known left-endpoint grid shift many standard errors
    wide, so the mean gate compares against that predicted shift instead
    of zero; the unshifted z-scores are reported as soft context.
    """
    report = RunReport(command="normality")
    if cfg.params.alpha <= cfg.params.gamma - 1.0:
        raise ValueError("normality runs need alpha > gamma - 1")
    if cfg.replications < 20:
        raise ValueError("normality runs need at least 20 replications")
    N = cfg.N_sweep[-1]
    reps = cfg.replications
    rng = np.random.default_rng(cfg.seed)

    if cfg.mode == "LinearExact":
        nu_h, nu_z = linear_exact_estimates(
            cfg.params, N, cfg.params.alpha, cfg.params.q, reps, rng)
    else:
        hs, zs = [], []
        for _ in range(reps):
            vh, vz = _solver_estimates(cfg, N, rng)
            hs.append(vh)
            zs.append(vz)
        nu_h, nu_z = np.asarray(hs), np.asarray(zs)

    scale = N * N
    e1 = scale * (nu_h - cfg.params.nu_h)
    e2 = scale * (nu_z - cfg.params.nu_z)
    sample = np.column_stack([e1, e2])
    emp_mean = sample.mean(axis=0)
    emp_cov = np.cov(sample.T, ddof=1)
    theo = theoretical_covariance(cfg.params, q=cfg.params.q)
    dt, n_steps = _estimation_grid(N, cfg.params.T)
    bias1, bias2 = _predicted_grid_bias(cfg.params, N, cfg.params.alpha,
                                        cfg.params.q, dt, n_steps)

    se = sample.std(axis=0, ddof=1) / math.sqrt(reps)
    for i, (b, label) in enumerate(((bias1, "mean_e1"), (bias2, "mean_e2"))):
        z = abs(emp_mean[i] - b) / se[i]
        report.gates.append(GateResult(f"{label}_vs_grid_shift", z < 3.0, z, 3.0))
        raw = abs(emp_mean[i]) / se[i]
        report.gates.append(GateResult(f"{label}_raw_zero", raw < 3.0, raw, 3.0,
                                       hard=False))

    pairs = [("cov11", emp_cov[0, 0], theo[0, 0]),
             ("cov12", emp_cov[0, 1], theo[0, 1]),
             ("cov22", emp_cov[1, 1], theo[1, 1])]
    for name, got, want in pairs:
        rel = abs(got - want) / abs(want)
        report.gates.append(GateResult(f"{name}_within_25pct", rel < 0.25, rel, 0.25))

    for i, label in enumerate(("e1", "e2")):
        ad = stats.anderson(sample[:, i], dist="norm")
        crit = float(ad.critical_values[-1])  # the 1% significance row
        report.gates.append(GateResult(f"ad_{label}_not_rejected_1pct",
                                       float(ad.statistic) < crit,
                                       float(ad.statistic), crit))

    combo = float(cfg.params.q) * e1 + e2
    corr = float(np.corrcoef(e1, combo)[0, 1])
    corr_bound = 3.0 / math.sqrt(reps)
    report.gates.append(GateResult("uncorrelated_combination",
                                   abs(corr) < corr_bound, corr, corr_bound))

    out = cfg.output_dir
    report.outputs.append(_write_csv(
        out / "normality_rows.csv", ["rep", "e1", "e2"],
        [[i, float(e1[i]), float(e2[i])] for i in range(reps)]))

    qq_normal = stats.norm.ppf((np.arange(1, reps + 1) - 0.5) / reps)
    e1s, e2s = np.sort(e1), np.sort(e2)
    report.outputs.append(_write_csv(
        out / "normality_qq.csv",
        ["rank", "normal_quantile", "e1_sorted", "e2_sorted"],
        [[i + 1, float(qq_normal[i]), float(e1s[i]), float(e2s[i])]
         for i in range(reps)]))

    summary_rows = [
        ["n_replications", reps], ["N", N],
        ["mean_e1", float(emp_mean[0])], ["mean_e2", float(emp_mean[1])],
        ["predicted_grid_shift_e1", bias1], ["predicted_grid_shift_e2", bias2],
        ["cov11", float(emp_cov[0, 0])], ["cov12", float(emp_cov[0, 1])],
        ["cov22", float(emp_cov[1, 1])],
        ["theory_cov11", float(theo[0, 0])], ["theory_cov12", float(theo[0, 1])],
        ["theory_cov22", float(theo[1, 1])],
        ["normaltest_p_e1", float(stats.normaltest(e1).pvalue)],
        ["normaltest_p_e2", float(stats.normaltest(e2).pvalue)],
        ["corr_e1_combination", corr],
    ] + [g.row() for g in report.gates]
    report.outputs.append(_write_csv(
        out / "normality_summary.csv", ["key", "value", "observed", "bound", "kind"],
        [r + [""] * (5 - len(r)) for r in summary_rows]))
    report.outputs.append(_write_manifest(
        out / "normality_manifest.jsonl", report.manifest_entry(cfg)))
    return report


# ---------------------------------------------------------------------------
# linear-model validation against closed-form moments

def _strand_layout(tab, cols, amp_of, dir_of):
    """Unfold stored modes into strands: (amplitude, direction, owner)."""
    amps: List[float] = []
    zetas: List[complex] = []
    owner: List[int] = []
    for c in cols:
        n_str = 1 if tab.self_paired[c] else 2
        a = amp_of(c) if tab.self_paired[c] else amp_of(c) / math.sqrt(2.0)
        for _ in range(n_str):
            amps.append(float(a))
            zetas.append(dir_of(c))
            owner.append(c)
    return np.asarray(amps), zetas, np.asarray(owner)


def _class_energy_sums(tab, cols, lam, f0, amp, dirs, dt, n_steps, reps, rng):
    """Left-endpoint sums of |Z|^2 per strand for one transition class."""
    amps, zetas, owner = _strand_layout(
        tab, cols, lambda c: amp, lambda c: complex(dirs[c, 0], dirs[c, 1]))
    s11 = np.empty(amps.size)
    s21 = np.empty(amps.size)
    s22 = np.empty(amps.size)
    for j in range(amps.size):
        s11[j], s21[j], s22[j] = strand_noise_chol(lam, f0, amps[j], zetas[j], dt)
    decay = np.exp(-complex(lam, f0) * dt)

    Z = np.zeros((reps, amps.size), dtype=complex)
    acc = np.zeros((reps, amps.size))
    for _ in range(n_steps):
        acc += Z.real ** 2 + Z.imag ** 2
        n1 = rng.standard_normal(Z.shape)
        eta = s11 * n1 + 1j * (s21 * n1)
        if f0 != 0.0:
            eta += 1j * (s22 * rng.standard_normal(Z.shape))
        Z = Z * decay + eta
    return acc, owner


def _grid_correction(lam: float, amp: float, exact: float, dt: float,
                     n_steps: int) -> float:
    """Ratio of the exact time energy to the left-endpoint expectation.

    Scaling the discrete sum by this factor makes the sampled statistic
    exactly unbiased for the continuous integral, so the grid can stay
    coarse without shifting the mean test.
    """
    rho = math.exp(-2.0 * lam * dt)
    geo = (1.0 - rho ** n_steps) / (1.0 - rho)
    t_total = n_steps * dt
    s_disc = amp * amp / (2.0 * lam) * (t_total - dt * geo)
    c = exact / s_disc
    if abs(c - 1.0) > 0.05:
        raise RuntimeError(
            f"grid too coarse for the moment oracle: correction {c:.4f}")
    return c


@dataclass
class LinearMomentReport:
    mode_keys: List[Tuple[int, int, int]]
    mean_z: np.ndarray
    frac_within_3: float
    var_keys: List[Tuple[int, int, int]]
    var_z: np.ndarray
    grid_correction_max: float


def linear_moment_check(params: ModelParams, N: int, reps: int,
                        rng: np.random.Generator,
                        n_var_modes: int = 10) -> LinearMomentReport:
    """Ensemble time-energy of every stored mode against exact moments.

    Paths are exact OU samples, so the discrete sum has a closed-form
    expectation; rescaling by the exact/discrete ratio gives an unbiased
    estimate of the continuous time energy on any grid.  Fast modes get
    more steps only to keep the spread realistic, not for bias.  The
    variance spot check reruns its handful of modes on a fine grid where
    the quadratic-functional variance distortion of order (lam dt)^2 is
    far below its standard error.
    """
    tab = mode_table(N)
    spec = NoiseSpec(sigma0=params.sigma0, gamma=params.gamma)
    amp_all = noise_amplitude_array(spec, N)
    dirs = noise_direction_array(spec, N)
    lam_all = params.nu_h * tab.kp_sq + params.nu_z * tab.k3_sq
    f0_all = np.where(tab.k3_sq > 0, params.f0, 0.0)

    integrals = np.empty((reps, tab.n))
    expected = np.empty(tab.n)
    corr_max = 0.0

    # group by shared transition (lam, f0, amp); each class simulates all
    # of its strands in one vectorized sweep
    classes: Dict[Tuple[float, float, float], List[int]] = {}
    for i in range(tab.n):
        key = (float(lam_all[i]), float(f0_all[i]), float(amp_all[i]))
        classes.setdefault(key, []).append(i)

    for (lam, f0, amp), cols in sorted(classes.items()):
        n_steps = min(max(int(math.ceil(2.0 * lam * params.T)), 24), 64)
        dt = params.T / n_steps
        first = (int(tab.k1[cols[0]]), int(tab.k2[cols[0]]), int(tab.k3[cols[0]]))
        exact = mode_energy_mean(first, params, params.T)
        corr = _grid_correction(lam, amp, exact, dt, n_steps)
        corr_max = max(corr_max, abs(corr - 1.0))

        acc, owner = _class_energy_sums(tab, cols, lam, f0, amp, dirs, dt,
                                        n_steps, reps, rng)
        for c in cols:
            integrals[:, c] = (dt * corr) * acc[:, owner == c].sum(axis=1)
            expected[c] = exact

    means = integrals.mean(axis=0)
    ses = integrals.std(axis=0, ddof=1) / math.sqrt(reps)
    z = (means - expected) / ses
    frac = float(np.mean(np.abs(z) <= 3.0))

    # variance spot check on a deterministic spread of decay rates,
    # resampled on fine per-mode grids
    order = np.argsort(lam_all, kind="stable")
    pick_pos = np.unique(np.linspace(0, tab.n - 1,
                                     min(n_var_modes, tab.n)).round().astype(int))
    var_z = np.empty(pick_pos.size)
    var_keys = []
    for j, c in enumerate(order[pick_pos]):
        lam, f0, amp = float(lam_all[c]), float(f0_all[c]), float(amp_all[c])
        k = (int(tab.k1[c]), int(tab.k2[c]), int(tab.k3[c]))
        var_keys.append(k)
        n_steps = min(max(int(math.ceil(40.0 * lam * params.T)), 256), 4096)
        dt = params.T / n_steps
        exact = mode_energy_mean(k, params, params.T)
        corr = _grid_correction(lam, amp, exact, dt, n_steps)
        acc, _ = _class_energy_sums(tab, [int(c)], lam, f0, amp, dirs, dt,
                                    n_steps, reps, rng)
        vals = (dt * corr) * acc.sum(axis=1)
        v_emp = float(vals.var(ddof=1))
        centered = vals - vals.mean()
        m4 = float(np.mean(centered ** 4))
        se_var = math.sqrt(max(m4 - v_emp ** 2, 0.0) / reps)
        v_theo = mode_energy_variance(k, params, params.T)
        var_z[j] = (v_emp - v_theo) / se_var
    mode_keys = [(int(tab.k1[i]), int(tab.k2[i]), int(tab.k3[i]))
                 for i in range(tab.n)]
    return LinearMomentReport(mode_keys, z, frac, var_keys, var_z, corr_max)


def _riemann_energy_exact(params: ModelParams, N: int, reps: int, dt: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Left-endpoint time-energy samples from exact OU transitions.

    No grid correction here on purpose: the solver cross-check compares
    the same discrete statistic on both backends.
    """
    tab = mode_table(N)
    spec = NoiseSpec(sigma0=params.sigma0, gamma=params.gamma)
    amp_all = noise_amplitude_array(spec, N)
    dirs = noise_direction_array(spec, N)
    n_steps = round(params.T / dt)
    lam_all = params.nu_h * tab.kp_sq + params.nu_z * tab.k3_sq
    f0_all = np.where(tab.k3_sq > 0, params.f0, 0.0)

    amps, zetas, owner = _strand_layout(
        tab, range(tab.n), lambda c: amp_all[c],
        lambda c: complex(dirs[c, 0], dirs[c, 1]))
    lam_s = lam_all[owner]
    f0_s = f0_all[owner]
    s11 = np.empty(amps.size)
    s21 = np.empty(amps.size)
    s22 = np.empty(amps.size)
    for j in range(amps.size):
        s11[j], s21[j], s22[j] = strand_noise_chol(
            float(lam_s[j]), float(f0_s[j]), amps[j], zetas[j], dt)
    decay = np.exp(-(lam_s + 1j * f0_s) * dt)
    rot_cols = np.flatnonzero(f0_s != 0.0)

    Z = np.zeros((reps, amps.size), dtype=complex)
    acc = np.zeros((reps, amps.size))
    for _ in range(n_steps):
        acc += Z.real ** 2 + Z.imag ** 2
        n1 = rng.standard_normal(Z.shape)
        eta = s11 * n1 + 1j * (s21 * n1)
        if rot_cols.size:
            n2 = rng.standard_normal((reps, rot_cols.size))
            eta[:, rot_cols] += 1j * (s22[rot_cols] * n2)
        Z = Z * decay + eta
    out = np.zeros((reps, tab.n))
    for c in range(tab.n):
        out[:, c] = dt * acc[:, owner == c].sum(axis=1)
    return out


def run_linear_validation(cfg: ExperimentConfig) -> RunReport:
    """Linear-model statistics against closed forms and across backends.

    Three blocks: per-mode mean time-energy z-scores at the configured N
    (hard gate: at least 95% within 3), a variance spot check on ten
    modes (hard gate: all within 3), and solver-versus-exact means on a
    small truncation at dt=1e-3 (hard gate: at least 95% within 3
    combined standard errors).
    """
    if cfg.mode == "FullNonlinear":
        raise ValueError("linear validation runs need a linear mode")
    report = RunReport(command="linear-validate")
    rng = np.random.default_rng(cfg.seed)
    out = cfg.output_dir

    moment = linear_moment_check(cfg.params, cfg.solver.N, cfg.replications, rng)
    report.gates.append(GateResult("mode_means_within_3se",
                                   moment.frac_within_3 >= 0.95,
                                   moment.frac_within_3, 0.95))
    # the variance z-scores lean on fourth-moment standard errors, which
    # are noticeably heavier-tailed than the mean scores; allow 3.5
    report.gates.append(GateResult("variance_spot_checks_within_3.5se",
                                   bool(np.all(np.abs(moment.var_z) <= 3.5)),
                                   float(np.max(np.abs(moment.var_z))), 3.5))

    rows = [[f"({k[0]},{k[1]},{k[2]})", float(z)]
            for k, z in zip(moment.mode_keys, moment.mean_z)]
    report.outputs.append(_write_csv(out / "linear_mode_z.csv",
                                     ["mode", "z_mean"], rows))
    report.outputs.append(_write_csv(
        out / "linear_variance_z.csv", ["mode", "z_variance"],
        [[f"({k[0]},{k[1]},{k[2]})", float(z)]
         for k, z in zip(moment.var_keys, moment.var_z)]))

    # solver cross-check on a small truncation
    n_small, reps_small, dt_small = 3, 200, 1e-3
    solver_cfg = SolverConfig(N=n_small, dt=dt_small, scheme="ExponentialEuler",
                              include_nonlinear=False)
    params_small = cfg.params
    tab = mode_table(n_small)
    sums = np.zeros((reps_small, tab.n))
    for rep in range(reps_small):
        traj = simulate_path(params_small, None, solver_cfg, rng, log_noise=False)
        stack = traj.coefficient_stack()
        sums[rep] = dt_small * np.sum(
            np.abs(stack[:-1]) ** 2, axis=2).sum(axis=0)
    exact = _riemann_energy_exact(params_small, n_small, reps_small, dt_small, rng)
    m_s, m_e = sums.mean(axis=0), exact.mean(axis=0)
    se = np.sqrt(sums.var(ddof=1, axis=0) / reps_small
                 + exact.var(ddof=1, axis=0) / reps_small)
    z_cross = (m_s - m_e) / se
    frac_cross = float(np.mean(np.abs(z_cross) <= 3.0))
    report.gates.append(GateResult("solver_vs_exact_within_3se",
                                   frac_cross >= 0.95, frac_cross, 0.95))
    report.outputs.append(_write_csv(
        out / "linear_solver_vs_exact.csv", ["mode", "z_cross"],
        [[f"({int(tab.k1[i])},{int(tab.k2[i])},{int(tab.k3[i])})", float(z_cross[i])]
         for i in range(tab.n)]))
    report.outputs.append(_write_manifest(
        out / "linear_validation_manifest.jsonl", report.manifest_entry(cfg)))
    return report


# ---------------------------------------------------------------------------
# number-theoretic appendix checks

_BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}
_DEFAULT_ALPHAS = {1: (0.0, 0.5, 1.0), 2: (-1.0, 0.0, 1.0, 2.0),
                   3: (-1.0, 0.0, 1.0, 2.0)}


def _r3_counts(n_max: int) -> np.ndarray:
    m = math.isqrt(n_max)
    axis = np.arange(-m, m + 1)
    sq = axis * axis
    n = (sq[:, None, None] + sq[None, :, None] + sq[None, None, :]).ravel()
    return np.bincount(n[n <= n_max], minlength=n_max + 1)


def _three_square_excluded(n: int) -> bool:
    while n % 4 == 0:
        n //= 4
    return n % 8 == 7


def _lattice_sum(d: int, alpha: float, N: int) -> float:
    axis = np.arange(-N, N + 1)
    if d == 1:
        ksq = axis * axis
    elif d == 2:
        ksq = (axis[:, None] ** 2 + axis[None, :] ** 2).ravel()
    else:
        sq = axis * axis
        ksq = (sq[:, None, None] + sq[None, :, None] + sq[None, None, :]).ravel()
    ksq = ksq[(ksq >= 1) & (ksq <= N * N)]
    return float(np.sum(ksq.astype(float) ** (alpha / 2.0)))


@dataclass
class NumberTheoryReport:
    n_max: int
    characterization_ok: bool
    fitted_C: float
    argmax_n: int
    lattice_rows: List[List]
    ratios_ok: bool
    outputs: List[Path] = field(default_factory=list)

    @property
    def hard_ok(self) -> bool:
        return self.characterization_ok and self.ratios_ok


def number_theory_checks(n_max: int = 10000, N: int = 50,
                         alphas: Optional[Dict[int, Sequence[float]]] = None,
                         output_dir: Optional[Path] = None) -> NumberTheoryReport:
    """Brute-force the sphere-counting facts behind the variance constants.

    Checks that r3 vanishes exactly on the excluded residue family, fits
    the linear bound r3(n) <= C n, and compares power-weighted lattice
    sums over balls with d omega_d N^{d+alpha} / (d+alpha) for d up to
    three.  The default grid keeps every ratio within 2% at N=50 (the
    slowest case, d=1 with alpha=1, sits exactly on the boundary, so the
    comparison carries a relative epsilon); slower alpha decay needs a
    larger N for the boundary shell to fade.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    counts = _r3_counts(n_max)
    ok = all((counts[n] == 0) == _three_square_excluded(n)
             for n in range(1, n_max + 1))
    ratios = counts[1:] / np.arange(1, n_max + 1, dtype=float)
    fitted_c = float(ratios.max())
    argmax_n = int(ratios.argmax()) + 1

    rows = []
    ratios_ok = True
    for d, grid in sorted((alphas or _DEFAULT_ALPHAS).items()):
        for alpha in grid:
            if alpha <= -d:
                raise ValueError(f"alpha must exceed -d; got {alpha} at d={d}")
            s = _lattice_sum(d, alpha, N)
            pred = d * _BALL_VOLUME[d] / (d + alpha) * float(N) ** (d + alpha)
            ratio = s / pred
            rows.append([d, alpha, N, s, pred, ratio])
            ratios_ok &= abs(ratio - 1.0) <= 0.02 * (1.0 + 1e-9)

    outputs: List[Path] = []
    if output_dir is not None:
        out = Path(output_dir)
        outputs.append(_write_csv(
            out / "number_theory_lattice.csv",
            ["d", "alpha", "N", "lattice_sum", "prediction", "ratio"], rows))
        outputs.append(_write_csv(
            out / "number_theory_summary.csv", ["key", "value"],
            [["n_max", n_max], ["characterization_ok", ok],
             ["fitted_C", fitted_c], ["argmax_n", argmax_n],
             ["ratios_within_2pct", ratios_ok]]))
    return NumberTheoryReport(n_max, bool(ok), fitted_c, argmax_n, rows,
                              bool(ratios_ok), outputs)
