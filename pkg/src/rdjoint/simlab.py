"""Synthetic designs and Monte Carlo coverage experiments.

Random numbers come from the Philox counter-based generator keyed by
``(seed, replication)``, so every replication can be regenerated on its own
and results do not depend on how replications are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import ndtr

from .band import BandRequest, uniform_band
from .bandwidth import rule_of_thumb_bandwidths
from .data import FitSpec, Sample
from .errors import DomainError, RDError
from .fuzzy import assemble_omega_fuzzy, estimate_fuzzy
from .inference import confidence_region, normal_quantile, rbc_marginal_interval, wald_statistic
from .sharp import assemble_omega, estimate_sharp, nn_variance

TARGETS = ("region", "band", "marginal")
_U53 = 2.0**-53


def _coef(values):
    arr = np.trim_zeros(np.asarray(values, dtype=float), "b")
    return arr if arr.size else np.zeros(1)


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """Piecewise-polynomial design.

    ``mu_left``/``mu_right`` hold polynomial coefficients in increasing order
    for the untreated and treated conditional means. ``x_dist`` is
    ``("uniform", lo, hi)`` or ``("truncnorm", mean, sd, lo, hi)``. With
    ``fuzzy = (pi_left, pi_right)`` the treatment is Bernoulli with those
    polynomial probabilities and ``Y = mu_left + T (mu_right - mu_left) + noise``;
    otherwise the design is sharp.
    """

    mu_left: tuple
    mu_right: tuple
    noise_sd_left: float = 0.5
    noise_sd_right: float = 0.5
    x_dist: tuple = ("uniform", -1.0, 1.0)
    fuzzy: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mu_left", tuple(float(c) for c in self.mu_left))
        object.__setattr__(self, "mu_right", tuple(float(c) for c in self.mu_right))
        if not (self.noise_sd_left >= 0 and self.noise_sd_right >= 0):
            raise DomainError("noise standard deviations must be nonnegative", code="bad_dgp")
        kind = self.x_dist[0]
        if kind == "uniform" and len(self.x_dist) == 3:
            lo, hi = self.x_dist[1], self.x_dist[2]
        elif kind == "truncnorm" and len(self.x_dist) == 5:
            if not self.x_dist[2] > 0:
                raise DomainError("truncated normal needs sd > 0", code="bad_dgp")
            lo, hi = self.x_dist[3], self.x_dist[4]
        else:
            raise DomainError(f"unknown running-variable distribution {self.x_dist!r}",
                              code="bad_dgp")
        if not (lo < 0.0 < hi):
            raise DomainError("running-variable support must straddle the cutoff 0",
                              code="bad_dgp")
        if int(self.seed) != self.seed or self.seed < 0:
            raise DomainError("seed must be a nonnegative integer", code="bad_dgp")
        if self.fuzzy is not None:
            pl, pr = (tuple(float(c) for c in part) for part in self.fuzzy)
            object.__setattr__(self, "fuzzy", (pl, pr))
            for coef, a, b in ((pl, lo, 0.0), (pr, 0.0, hi)):
                lo_val, hi_val = _poly_range(coef, a, b)
                if lo_val < 0.0 or hi_val > 1.0:
                    raise DomainError("first-stage probabilities leave [0, 1] on the support",
                                      code="bad_dgp")

    @property
    def support(self) -> tuple[float, float]:
        return (self.x_dist[1], self.x_dist[2]) if self.x_dist[0] == "uniform" else \
            (self.x_dist[3], self.x_dist[4])

    def mean_functions(self):
        """Conditional means ``(E[Y|X], E[T|X])`` per side as coefficient arrays."""
        ml, mr = _coef(self.mu_left), _coef(self.mu_right)
        if self.fuzzy is None:
            return {"left": (ml, np.zeros(1)), "right": (mr, np.ones(1))}
        diff = P.polysub(mr, ml)
        out = {}
        for side, pi in zip(("left", "right"), self.fuzzy):
            out[side] = (P.polyadd(ml, P.polymul(_coef(pi), diff)), _coef(pi))
        return out

    def effect_polynomial(self) -> np.ndarray:
        return _coef(P.polysub(_coef(self.mu_right), _coef(self.mu_left)))

    def truth(self) -> tuple[float, float]:
        """True ``(tau, tau')`` at the cutoff (ratios in the fuzzy case)."""
        means = self.mean_functions()

        def jump(k, j):
            r = P.polyder(means["right"][k], j) if j else means["right"][k]
            l_ = P.polyder(means["left"][k], j) if j else means["left"][k]
            return float(P.polyval(0.0, r) - P.polyval(0.0, l_))

        if self.fuzzy is None:
            return jump(0, 0), jump(0, 1)
        return jump(0, 0) / jump(1, 0), jump(0, 1) / jump(1, 1)


def _poly_range(coef, a, b):
    coef = _coef(coef)
    pts = [a, b]
    if coef.size > 2:
        for r in np.roots(P.polyder(coef)[::-1]):
            if abs(r.imag) < 1e-12 and a <= r.real <= b:
                pts.append(r.real)
    vals = P.polyval(np.array(pts), coef)
    return float(vals.min()), float(vals.max())


def _uniforms(bitgen, n):
    raw = bitgen.random_raw(n)
    return ((raw >> np.uint64(11)).astype(float) + 0.5) * _U53


def replication_stream(seed: int, seed_offset: int):
    """Philox bit generator keyed by ``(seed, seed_offset)``, counter at zero."""
    return np.random.Philox(key=np.array([seed, seed_offset], dtype=np.uint64))


def generate_dgp(dgp: DgpSpec, n: int, seed_offset: int = 0) -> Sample:
    """Draw ``n`` observations; identical arguments give identical samples."""
    if n < 1:
        raise DomainError("n must be >= 1")
    bitgen = replication_stream(dgp.seed, seed_offset)
    u_x = _uniforms(bitgen, n)
    u_e = _uniforms(bitgen, n)
    if dgp.x_dist[0] == "uniform":
        lo, hi = dgp.x_dist[1], dgp.x_dist[2]
        x = lo + (hi - lo) * u_x
    else:
        mean, sd, lo, hi = dgp.x_dist[1:]
        cdf_lo, cdf_hi = ndtr((lo - mean) / sd), ndtr((hi - mean) / sd)
        x = mean + sd * normal_quantile(cdf_lo + u_x * (cdf_hi - cdf_lo))
        x = np.clip(x, lo, hi)
    eps = normal_quantile(u_e)
    right = x >= 0.0
    sd = np.where(right, dgp.noise_sd_right, dgp.noise_sd_left)
    mu_l = P.polyval(x, _coef(dgp.mu_left))
    mu_r = P.polyval(x, _coef(dgp.mu_right))
    if dgp.fuzzy is None:
        y = np.where(right, mu_r, mu_l) + sd * eps
        return Sample(running=x, outcome=y, cutoff=0.0)
    u_t = _uniforms(bitgen, n)
    prob = np.where(right, P.polyval(x, _coef(dgp.fuzzy[1])), P.polyval(x, _coef(dgp.fuzzy[0])))
    t = (u_t < prob).astype(float)
    y = mu_l + t * (mu_r - mu_l) + sd * eps
    return Sample(running=x, outcome=y, cutoff=0.0, treatment=t)


BENCHMARK_DGP = DgpSpec(
    mu_left=(0.0, 0.5, 0.25, -0.1),
    mu_right=(1.0, 0.8, 0.45, 0.05),
    noise_sd_left=0.5,
    noise_sd_right=0.5,
    x_dist=("uniform", -1.0, 1.0),
    seed=20240601,
)

LINEAR_EFFECT_DGP = DgpSpec(
    mu_left=(0.0, 0.5, 0.25, -0.1),
    mu_right=(1.0, 0.8, 0.25, -0.1),
    noise_sd_left=0.5,
    noise_sd_right=0.5,
    x_dist=("uniform", -1.0, 1.0),
    seed=20240602,
)


@dataclass
class CoverageReport:
    reps: int
    valid_reps: int = 0
    hits_region: int = 0
    hits_band: int = 0
    hits_envelope: int = 0
    hits_marginal: int = 0
    mean_region_area: float = 0.0
    mean_band_width: float = 0.0
    mean_h: float = 0.0
    mean_b: float = 0.0
    nesting_violations: int = 0
    failures: dict = field(default_factory=dict)
    targets: tuple = TARGETS
    truth: tuple = (0.0, 0.0)

    def rate(self, hits: int) -> float:
        return hits / self.valid_reps if self.valid_reps else 0.0

    def se(self, hits: int) -> float:
        if not self.valid_reps:
            return 0.0
        r = self.rate(hits)
        return math.sqrt(r * (1.0 - r) / self.valid_reps)

    @property
    def coverage_region(self) -> float:
        return self.rate(self.hits_region)

    @property
    def coverage_band(self) -> float:
        return self.rate(self.hits_band)

    @property
    def coverage_envelope(self) -> float:
        return self.rate(self.hits_envelope)

    @property
    def coverage_marginal(self) -> float:
        return self.rate(self.hits_marginal)

    def to_dict(self) -> dict:
        out = {
            "reps": self.reps,
            "valid_reps": self.valid_reps,
            "targets": list(self.targets),
            "truth": {"tau": self.truth[0], "tau_prime": self.truth[1]},
            "hits": {
                "region": self.hits_region, "band": self.hits_band,
                "envelope": self.hits_envelope, "marginal": self.hits_marginal,
            },
            "coverage": {},
            "mean_region_area": self.mean_region_area,
            "mean_band_width": self.mean_band_width,
            "mean_h": self.mean_h,
            "mean_b": self.mean_b,
            "nesting_violations": self.nesting_violations,
            "failures": dict(sorted(self.failures.items())),
        }
        for name, hits in (("region", self.hits_region), ("band", self.hits_band),
                           ("envelope", self.hits_envelope), ("marginal", self.hits_marginal)):
            out["coverage"][name] = {"rate": self.rate(hits), "se": self.se(hits)}
        return out


@dataclass(frozen=True)
class _Plan:
    dgp: DgpSpec
    spec: FitSpec
    n: int
    targets: tuple
    auto_bandwidth: bool
    grid_size: int
    truth: tuple
    effect: np.ndarray = field(compare=False, hash=False, default=None)


def _replicate(plan: _Plan, rep: int) -> dict:
    sample = generate_dgp(plan.dgp, plan.n, rep)
    spec = plan.spec
    fuzzy = plan.dgp.fuzzy is not None
    try:
        if plan.auto_bandwidth:
            h, b = rule_of_thumb_bandwidths(sample, spec.p, spec.kernel, spec.q)
            spec = replace(spec, h=h, b=b)
        if fuzzy:
            variances = nn_variance(sample, spec, include_treatment=True)
            est = estimate_fuzzy(sample, spec, variances)
            omega = assemble_omega_fuzzy(est, variances, spec)
        else:
            variances = nn_variance(sample, spec)
            est = estimate_sharp(sample, spec)
            omega = assemble_omega(est, variances, spec)
        center = est.center
        region = confidence_region(center, omega.omega_h, spec.alpha)
    except RDError as exc:
        return {"error": exc.code}

    tau0, tau1 = plan.truth
    out = {"error": None, "h": spec.h, "b": spec.b}
    out["region"] = wald_statistic(region, tau0, tau1) <= region.chi2_crit
    out["area"] = math.pi * region.chi2_crit * math.sqrt(np.linalg.det(omega.omega_h))
    lo, hi = rbc_marginal_interval(center[0], omega.omega_h[0, 0], spec.alpha)
    out["marginal"] = lo <= tau0 <= hi
    if "band" in plan.targets:
        request = BandRequest(spec.delta_lo, spec.delta_hi, plan.grid_size, spec.alpha, "uniform")
        band = uniform_band(center, omega, request)
        envelope = uniform_band(center, omega, replace(request, variant="envelope"))
        truth_line = P.polyval(band.xs, plan.effect)
        out["band"] = band.covers(truth_line)
        out["envelope"] = envelope.covers(truth_line)
        out["width"] = float(np.mean(band.hi - band.lo))
        at0 = int(np.searchsorted(band.xs, 0.0))
        out["nested"] = bool(
            band.lo[at0] <= lo + 1e-12 and hi <= band.hi[at0] + 1e-12
            and envelope.lo[at0] <= band.lo[at0] + 1e-12
            and band.hi[at0] <= envelope.hi[at0] + 1e-12
        )
    return out


def _run_chunk(plan, reps):
    return [_replicate(plan, rep) for rep in reps]


def coverage_experiment(dgp: DgpSpec, spec: FitSpec, n: int, reps: int,
                        targets=("region", "marginal"), auto_bandwidth: bool = False,
                        grid_size: int = 101, jobs: int = 1) -> CoverageReport:
    """Run ``reps`` replications and count how often each target covers the truth.

    A band target requires the effect ``mu_right - mu_left`` to be linear, so the
    truth on ``[-delta_lo, delta_hi]`` is known exactly. Replications that raise
    an estimation or inference error are tallied under ``failures`` and excluded
    from the coverage denominators. With ``auto_bandwidth`` the plug-in
    bandwidths are recomputed in each replication and ``spec.h``/``spec.b`` are
    ignored.
    """
    targets = tuple(targets)
    for t in targets:
        if t not in TARGETS:
            raise DomainError(f"unknown target {t!r}", code="bad_config")
    effect = dgp.effect_polynomial()
    truth = dgp.truth()
    if dgp.fuzzy is not None:
        effect = np.array(truth)
    if "band" in targets and effect.size > 2:
        raise DomainError("band coverage needs a linear treatment effect", code="bad_dgp")
    report = CoverageReport(reps=int(reps), targets=targets, truth=truth)
    if reps <= 0:
        return report
    plan = _Plan(dgp=dgp, spec=spec, n=int(n), targets=targets, auto_bandwidth=auto_bandwidth,
                 grid_size=int(grid_size), truth=truth, effect=effect)

    if jobs <= 1:
        results = _run_chunk(plan, range(reps))
    else:
        size = max(1, math.ceil(reps / (4 * jobs)))
        chunks = [range(s, min(s + size, reps)) for s in range(0, reps, size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for part in pool.map(_run_chunk, [plan] * len(chunks), chunks)
                       for r in part]

    ok = [r for r in results if r["error"] is None]
    for r in results:
        if r["error"] is not None:
            report.failures[r["error"]] = report.failures.get(r["error"], 0) + 1
    report.valid_reps = len(ok)
    if not ok:
        return report
    report.hits_region = sum(r["region"] for r in ok) if "region" in targets else 0
    report.hits_marginal = sum(r["marginal"] for r in ok) if "marginal" in targets else 0
    report.mean_region_area = math.fsum(r["area"] for r in ok) / len(ok)
    report.mean_h = math.fsum(r["h"] for r in ok) / len(ok)
    report.mean_b = math.fsum(r["b"] for r in ok) / len(ok)
    if "band" in targets:
        report.hits_band = sum(r["band"] for r in ok)
        report.hits_envelope = sum(r["envelope"] for r in ok)
        report.mean_band_width = math.fsum(r["width"] for r in ok) / len(ok)
        report.nesting_violations = sum(not r["nested"] for r in ok)
    return report


_FLOAT_KEYS = {"noise_sd_left", "noise_sd_right", "noise_sd", "h", "b", "alpha",
               "delta_lo", "delta_hi"}
_INT_KEYS = {"seed", "n", "reps", "p", "q", "nn_neighbors", "grid"}
_LIST_KEYS = {"mu_left", "mu_right", "first_stage_left", "first_stage_right"}
_STR_KEYS = {"x_dist", "kernel", "targets"}


def _parse_number_list(text, key):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise DomainError(f"config key {key!r}: expected numbers, got {text!r}",
                          code="bad_config") from None


def _parse_x_dist(text):
    text = text.strip()
    try:
        name, rest = text.split("(", 1)
        args = tuple(float(v) for v in rest.rstrip(")").split(","))
    except ValueError:
        raise DomainError(f"cannot parse x_dist {text!r}", code="bad_config") from None
    return (name.strip(),) + args


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    dgp: DgpSpec
    spec: FitSpec
    n: int
    reps: int
    targets: tuple
    auto_bandwidth: bool
    grid_size: int

    def run(self, jobs: int = 1) -> CoverageReport:
        return coverage_experiment(self.dgp, self.spec, self.n, self.reps, self.targets,
                                   auto_bandwidth=self.auto_bandwidth,
                                   grid_size=self.grid_size, jobs=jobs)


def parse_config(text: str) -> SimulationConfig:
    """Parse a ``key = value`` experiment file (``#`` starts a comment).

    Omitting ``h`` selects plug-in bandwidths in every replication.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"line {lineno}: expected 'key = value'", code="bad_config")
        key, val = (part.strip() for part in line.split("=", 1))
        try:
            if key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _INT_KEYS:
                values[key] = int(val)
            elif key in _LIST_KEYS:
                values[key] = _parse_number_list(val, key)
            elif key in _STR_KEYS:
                values[key] = val
            else:
                raise DomainError(f"line {lineno}: unknown key {key!r}", code="bad_config")
        except ValueError as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"line {lineno}: bad value for {key!r}: {val!r}",
                              code="bad_config") from None

    for required in ("mu_left", "mu_right", "n", "reps"):
        if required not in values:
            raise DomainError(f"config is missing {required!r}", code="bad_config")
    sd = values.get("noise_sd", 0.5)
    fuzzy = None
    if "first_stage_left" in values or "first_stage_right" in values:
        if not ("first_stage_left" in values and "first_stage_right" in values):
            raise DomainError("fuzzy designs need both first_stage_left and first_stage_right",
                              code="bad_dgp")
        fuzzy = (values["first_stage_left"], values["first_stage_right"])
    dgp = DgpSpec(
        mu_left=values["mu_left"], mu_right=values["mu_right"],
        noise_sd_left=values.get("noise_sd_left", sd),
        noise_sd_right=values.get("noise_sd_right", sd),
        x_dist=_parse_x_dist(values.get("x_dist", "uniform(-1, 1)")),
        fuzzy=fuzzy, seed=values.get("seed", 0),
    )
    if not (dgp.noise_sd_left > 0 and dgp.noise_sd_right > 0):
        raise DomainError("noise standard deviations must be positive", code="bad_dgp")
    auto = "h" not in values
    p = values.get("p", 1)
    h = values.get("h", 1.0)
    spec = FitSpec(
        h=h, b=values.get("b", h), p=p, q=values.get("q"),
        kernel=values.get("kernel", "triangular"), alpha=values.get("alpha", 0.05),
        delta_lo=values.get("delta_lo", 0.0), delta_hi=values.get("delta_hi", 0.0),
        nn_neighbors=values.get("nn_neighbors", 3),
    )
    targets = tuple(t.strip() for t in values.get("targets", "region, marginal").split(",")
                    if t.strip())
    for t in targets:
        if t not in TARGETS:
            raise DomainError(f"unknown target {t!r}; expected one of {TARGETS}",
                              code="bad_config")
    if values["n"] < 1 or values["reps"] < 0:
        raise DomainError("n must be >= 1 and reps >= 0", code="bad_config")
    return SimulationConfig(dgp=dgp, spec=spec, n=values["n"], reps=values["reps"],
                            targets=targets, auto_bandwidth=auto,
                            grid_size=values.get("grid", 101))
