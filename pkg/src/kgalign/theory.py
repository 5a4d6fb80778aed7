"""Monte Carlo checks of the RSM/ASM theory on a perfectly uniform encoder.

The uniform encoder is a direct sampler on the unit sphere. Every check is
seeded and returns a report instead of raising; sampled expectations are only
ever compared one-sidedly with a slack of three standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

SLACK_SE = 3.0
SANDWICH_TOL = 1e-9


@dataclass
class OracleConfig:
    dim: int = 16
    tau: float = 1.0
    lam: int = 1
    sample_counts: tuple = (16, 64, 256, 1024)
    trials: int = 2000
    seed: int = 0
    m_ref: int = 10**6
    n_pointwise: int = 10**5

    def problems(self) -> list[str]:
        out = []
        if self.dim < 2:
            out.append(f"dim must be >= 2, got {self.dim}")
        if not self.tau > 0:
            out.append(f"tau must be positive, got {self.tau}")
        if int(self.lam) != self.lam or self.lam < 1:
            out.append(f"lam must be an integer >= 1, got {self.lam}")
        ms = list(self.sample_counts)
        if not ms or any(m < 1 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            out.append(f"sample_counts must be strictly ascending positive integers, got {ms}")
        if self.trials < 30:
            out.append(f"trials must be >= 30, got {self.trials}")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))
        return self


@dataclass
class Row:
    M: int
    estimate: float
    bound: float
    std_err: float
    passed: bool


@dataclass
class OracleReport:
    name: str
    rows: list[Row] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    info: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows) and all(self.checks.values())


def sample_sphere(dim: int, count: int, seed=None) -> np.ndarray:
    """i.i.d. uniform points on S^{dim-1}; ``seed`` may be an int or a Generator."""
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _lse(head: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """log(exp(head) + sum exp(logits)) row-wise; head (T,), logits (T, M)."""
    m = np.maximum(head, logits.max(axis=1) if logits.shape[1] else head)
    return m + np.log(np.exp(head - m) + np.exp(logits - m[:, None]).sum(axis=1))


def sandwich_terms(fx, fy, negs, tau: float, lam: int = 1):
    """Per-instance (rsm, asm, upper) for anchors (T,d), positives (T,d), negatives (T,M,d)."""
    fx, fy, negs = (np.asarray(a, dtype=np.float64) for a in (fx, fy, negs))
    pos = np.einsum("td,td->t", fx, fy)
    neg = np.einsum("tmd,td->tm", negs, fx) / tau
    rsm = _lse(np.full(len(fx), np.log(lam) + 1.0 / tau), neg) - 1.0 / tau
    asm = _lse(np.log(lam) + pos / tau, neg) - pos / tau
    upper = rsm + (1.0 - pos) / tau
    return rsm, asm, upper


def check_sandwich(cfg: OracleConfig, chunk: int = 2000) -> OracleReport:
    """rsm <= asm <= rsm + (1 - fx.fy)/tau per sample, and in expectation with the min positive dot."""
    cfg.validate()
    rep = OracleReport("sandwich")
    worst_all = 0.0
    for M, rng in zip(cfg.sample_counts, _rngs(cfg.seed, len(cfg.sample_counts))):
        worst = 0.0
        sums = np.zeros(2)
        min_pos = 1.0
        done = 0
        while done < cfg.trials:
            t = min(chunk, cfg.trials - done)
            fx = sample_sphere(cfg.dim, t, rng)
            # positives range from near-copies to unrelated points
            mix = rng.uniform(0.0, 3.0, size=(t, 1))
            fy = fx + mix * rng.standard_normal((t, cfg.dim))
            fy /= np.linalg.norm(fy, axis=1, keepdims=True)
            negs = sample_sphere(cfg.dim, t * M, rng).reshape(t, M, cfg.dim)
            rsm, asm, upper = sandwich_terms(fx, fy, negs, cfg.tau, cfg.lam)
            worst = max(worst, float(np.max(rsm - asm)), float(np.max(asm - upper)))
            sums += [rsm.sum(), asm.sum()]
            min_pos = min(min_pos, float(np.einsum("td,td->t", fx, fy).min()))
            done += t
        mean_rsm, mean_asm = sums / cfg.trials
        expect_gap = max(mean_rsm - mean_asm, mean_asm - (mean_rsm + (1.0 - min_pos) / cfg.tau))
        worst = max(worst, expect_gap)
        worst_all = max(worst_all, worst)
        rep.rows.append(Row(M, worst, SANDWICH_TOL, 0.0, bool(worst <= SANDWICH_TOL)))
    rep.info["max_violation"] = worst_all
    return rep


def bound_value(M: int, lam: float, tau: float) -> float:
    """Deviation bound of the noisy ASM from its large-M limit."""
    a = 1.0 / tau
    return float(lam / M * np.exp(2 * a) + 1.25 * M ** (-2.0 / 3.0) * np.exp(a) * (np.exp(a) - np.exp(-a)))


def reference_log_mgf(dim: int, tau: float, n: int, seed, chunk: int = 100_000):
    """log E[exp(u.v / tau)] for independent uniform u, v from n sampled dot products.

    Returns (estimate, standard error by the delta method).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s1 = s2 = 0.0
    shift = 1.0 / tau  # keeps exp() bounded by 1
    done = 0
    while done < n:
        c = min(chunk, n - done)
        dots = np.einsum("id,id->i", sample_sphere(dim, c, rng), sample_sphere(dim, c, rng))
        w = np.exp(dots / tau - shift)
        s1 += w.sum()
        s2 += (w * w).sum()
        done += c
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0)
    return float(np.log(mean) + shift), float(np.sqrt(var / n) / mean)


def quadrature_log_mgf(dim: int, tau: float) -> float:
    """Same quantity by integrating against the dot-product density (1 - t^2)^((dim-3)/2)."""
    a = (dim - 3) / 2.0
    shift = 1.0 / tau
    num, _ = integrate.quad(lambda t: np.exp(t / tau - shift), -1.0, 1.0, weight="alg", wvar=(a, a))
    den, _ = integrate.quad(lambda t: 1.0, -1.0, 1.0, weight="alg", wvar=(a, a))
    return float(np.log(num / den) + shift)


def check_asm_concentration(cfg: OracleConfig, chunk_elems: int = 4_000_000) -> OracleReport:
    """|E[L_ASM|lam - log M] - limit| against the analytic bound, positive pair y = x."""
    cfg.validate()
    rep = OracleReport("asm_concentration")
    rngs = _rngs(cfg.seed, len(cfg.sample_counts) + 1)
    log_mgf, ref_se = reference_log_mgf(cfg.dim, cfg.tau, cfg.m_ref, rngs[0])
    quad = quadrature_log_mgf(cfg.dim, cfg.tau)
    # uniform encoder with y = x, so E[fx.fy] = 1
    limit = -1.0 / cfg.tau + log_mgf
    rep.info.update(limit=limit, reference_se=ref_se, quadrature_limit=-1.0 / cfg.tau + quad)
    rep.checks["reference_matches_quadrature"] = abs(log_mgf - quad) <= SLACK_SE * ref_se + 1e-12
    for M, rng in zip(cfg.sample_counts, rngs[1:]):
        vals = []
        per = max(1, chunk_elems // (M * cfg.dim))
        done = 0
        while done < cfg.trials:
            t = min(per, cfg.trials - done)
            fx = sample_sphere(cfg.dim, t, rng)
            negs = sample_sphere(cfg.dim, t * M, rng).reshape(t, M, cfg.dim)
            pos = np.einsum("td,td->t", fx, fx) / cfg.tau
            neg = np.einsum("tmd,td->tm", negs, fx) / cfg.tau
            vals.append(_lse(np.log(cfg.lam) + pos, neg) - pos - np.log(M))
            done += t
        vals = np.concatenate(vals)
        se = float(np.hypot(vals.std(ddof=1) / np.sqrt(len(vals)), ref_se))
        dev = abs(float(vals.mean()) - limit)
        bound = bound_value(M, cfg.lam, cfg.tau)
        rep.rows.append(Row(M, dev, bound, se, bool(dev <= bound + SLACK_SE * se)))
    devs = [r.estimate for r in rep.rows]
    rep.checks["decreasing"] = all(b < a for a, b in zip(devs, devs[1:]))
    return rep


def log_ratio(fx, negs_x, negs_y, tau: float, lam: int = 1) -> np.ndarray:
    """log S per instance: the RSM partition sum with x-negatives over the one with y-negatives."""
    head = np.full(len(fx), np.log(lam) + 1.0 / tau)
    lx = _lse(head, np.einsum("tmd,td->tm", negs_x, fx) / tau)
    ly = _lse(head, np.einsum("tmd,td->tm", negs_y, fx) / tau)
    return lx - ly


def _log_ratios(cfg: OracleConfig, M: int, n: int, rng, chunk_elems: int) -> np.ndarray:
    out = []
    per = max(1, chunk_elems // (2 * M * cfg.dim))
    done = 0
    while done < n:
        t = min(per, n - done)
        fx = sample_sphere(cfg.dim, t, rng)
        nx = sample_sphere(cfg.dim, t * M, rng).reshape(t, M, cfg.dim)
        ny = sample_sphere(cfg.dim, t * M, rng).reshape(t, M, cfg.dim)
        out.append(log_ratio(fx, nx, ny, cfg.tau, cfg.lam))
        done += t
    return np.concatenate(out)


def check_negative_source_gap(cfg: OracleConfig, chunk_elems: int = 4_000_000) -> OracleReport:
    """RSM with negatives from p_x versus p_y, both uniform on the sphere.

    The per-M gap is the paired E|log S|, which must shrink as M grows; at the
    largest M the signed mean of log S must sit within 3 standard errors of 0.
    Every sampled |log S| must stay below 2/tau.
    """
    cfg.validate()
    rep = OracleReport("negative_source_gap")
    cap = 2.0 / cfg.tau
    rngs = _rngs(cfg.seed, len(cfg.sample_counts) + 1)
    max_abs = 0.0
    last = None
    for M, rng in zip(cfg.sample_counts, rngs[1:]):
        s = _log_ratios(cfg, M, cfg.trials, rng, chunk_elems)
        a = np.abs(s)
        max_abs = max(max_abs, float(a.max()))
        rep.rows.append(Row(M, float(a.mean()), cap, float(a.std(ddof=1) / np.sqrt(len(a))), bool(a.max() < cap)))
        last = s
    pw = np.abs(_log_ratios(cfg, cfg.sample_counts[0], cfg.n_pointwise, rngs[0], chunk_elems))
    max_abs = max(max_abs, float(pw.max()))
    gaps = [r.estimate for r in rep.rows]
    signed_se = float(last.std(ddof=1) / np.sqrt(len(last)))
    rep.info.update(max_abs_log_s=max_abs, final_signed_gap=float(last.mean()), final_signed_se=signed_se,
                    n_pointwise=float(len(pw)))
    rep.checks["decreasing"] = all(b < a for a, b in zip(gaps, gaps[1:]))
    rep.checks["final_within_noise"] = abs(float(last.mean())) <= SLACK_SE * signed_se
    rep.checks["pointwise_bound"] = bool(max_abs < cap)
    return rep


def write_report(path: str | Path, rep: OracleReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("M\testimate\tbound\tstd_err\tpass\n")
        for r in rep.rows:
            fh.write(f"{r.M}\t{r.estimate!r}\t{r.bound!r}\t{r.std_err!r}\t{int(r.passed)}\n")
        for name, ok in rep.checks.items():
            fh.write(f"# {name}\t{int(ok)}\n")
        for name, v in rep.info.items():
            fh.write(f"# {name}\t{v!r}\n")
