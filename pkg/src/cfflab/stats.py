"""Seed-variance audit: variance tests, mean tests, normality, bootstrap."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
from scipy import special

__all__ = [
    "SeedGroup",
    "FactorialTable",
    "TestResult",
    "AuditReport",
    "sample_variance",
    "f_cdf",
    "f_sf",
    "t_cdf",
    "f_test_two_sided",
    "welch_t_test",
    "levene_oneway",
    "levene_two_way",
    "shapiro_wilk",
    "bootstrap_vr_ci",
    "read_manifest",
    "write_manifest",
    "group_rows",
    "load_fixture",
    "FIXTURES",
    "audit",
]

Center = Literal["mean", "median"]


@dataclass(frozen=True)
class SeedGroup:
    label: str
    values: tuple[float, ...]

    def __init__(self, label: str, values: Iterable[float]):
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "values", tuple(float(v) for v in values))

    @property
    def n(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass
class FactorialTable:
    """2x2 cells keyed by ``(margin_type, stability_mode)``."""

    cells: dict[tuple[str, str], SeedGroup]

    @property
    def levels(self) -> tuple[list[str], list[str]]:
        a = sorted({k[0] for k in self.cells})
        b = sorted({k[1] for k in self.cells})
        return a, b

    @property
    def balanced(self) -> bool:
        a, b = self.levels
        complete = all((i, j) in self.cells for i in a for j in b)
        return complete and len({g.n for g in self.cells.values()}) == 1

    @classmethod
    def from_groups(cls, groups: Mapping[str, Sequence[float]]) -> FactorialTable:
        cells = {}
        for label, vals in groups.items():
            a, sep, b = label.partition("_")
            if not sep:
                raise ValueError(f"cell label {label!r} is not of the form <margin>_<mode>")
            cells[(a, b)] = SeedGroup(label, vals)
        return cls(cells)


@dataclass
class TestResult:
    statistic: float
    dof: float | tuple[float, float]
    p_value: float
    method: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.dof, tuple):
            d["dof"] = list(self.dof)
        return d


def _arr(values) -> np.ndarray:
    if isinstance(values, SeedGroup):
        return values.array()
    return np.asarray(values, dtype=np.float64)


def sample_variance(values) -> float:
    x = _arr(values)
    if x.size < 2:
        raise ValueError("sample variance needs at least two values")
    return float(np.sum((x - x.mean()) ** 2) / (x.size - 1))


# ---------------------------------------------------------------------------
# distribution functions (regularized incomplete beta)


def f_cdf(x: float, d1: float, d2: float) -> float:
    if x <= 0:
        return 0.0
    return float(special.betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))


def f_sf(x: float, d1: float, d2: float) -> float:
    if x <= 0:
        return 1.0
    return float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return 1.0 - tail if t > 0 else tail


def _t_ppf(q: float, df: float) -> float:
    return float(special.stdtrit(df, q))


# ---------------------------------------------------------------------------
# two-group tests


def f_test_two_sided(group1, group2) -> TestResult:
    """Variance-ratio F test; p doubles the smaller tail, capped at 1."""
    a, b = _arr(group1), _arr(group2)
    v1, v2 = sample_variance(a), sample_variance(b)
    if v2 == 0:
        raise ZeroDivisionError("second group has zero variance")
    F = v1 / v2
    d1, d2 = a.size - 1, b.size - 1
    p = min(1.0, 2.0 * min(f_cdf(F, d1, d2), f_sf(F, d1, d2)))
    return TestResult(F, (float(d1), float(d2)), p, "f-test-two-sided")


def welch_t_test(group1, group2, confidence: float = 0.95) -> TestResult:
    """Unequal-variance t test. ``extra`` holds the mean difference and its CI."""
    a, b = _arr(group1), _arr(group2)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two values")
    diff = float(a.mean() - b.mean())
    qa, qb = sample_variance(a) / a.size, sample_variance(b) / b.size
    se2 = qa + qb
    if se2 == 0:
        p = 1.0 if diff == 0 else 0.0
        return TestResult(0.0 if diff == 0 else math.copysign(math.inf, diff), math.nan, p, "welch-t",
                          {"mean_diff": diff, "ci": [diff, diff], "confidence": confidence})
    se = math.sqrt(se2)
    t = diff / se
    df = se2**2 / (qa**2 / (a.size - 1) + qb**2 / (b.size - 1))
    p = min(1.0, 2.0 * t_cdf(-abs(t), df))
    half = _t_ppf(0.5 + confidence / 2.0, df) * se
    return TestResult(t, df, p, "welch-t",
                      {"mean_diff": diff, "ci": [diff - half, diff + half], "confidence": confidence})


# ---------------------------------------------------------------------------
# Levene / Brown-Forsythe


def _center(x: np.ndarray, center: Center) -> float:
    if center == "mean":
        return float(x.mean())
    if center == "median":
        return float(np.median(x))
    raise ValueError(f"center must be 'mean' or 'median', not {center!r}")


def _oneway_anova(groups: Sequence[np.ndarray]) -> tuple[float, int, int, float]:
    k = len(groups)
    n = sum(g.size for g in groups)
    grand = np.concatenate(groups).mean()
    ssb = sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    ssw = sum(float(np.sum((g - g.mean()) ** 2)) for g in groups)
    df1, df2 = k - 1, n - k
    if ssw == 0:
        return (0.0, df1, df2, 1.0) if ssb == 0 else (math.inf, df1, df2, 0.0)
    F = (ssb / df1) / (ssw / df2)
    return float(F), df1, df2, f_sf(F, df1, df2)


def levene_oneway(groups: Sequence, center: Center = "mean") -> TestResult:
    """Levene (mean) or Brown-Forsythe (median) test across ``groups``."""
    arrs = [_arr(g) for g in groups]
    if len(arrs) < 2 or any(a.size < 2 for a in arrs):
        raise ValueError("need at least two groups of size >= 2")
    dev = [np.abs(a - _center(a, center)) for a in arrs]
    F, df1, df2, p = _oneway_anova(dev)
    name = "levene" if center == "mean" else "brown-forsythe"
    return TestResult(F, (float(df1), float(df2)), p, name)


def levene_two_way(table: FactorialTable, center: Center = "mean",
                   method: Literal["pooled", "anova"] = "pooled") -> dict[str, TestResult]:
    """Variance-homogeneity tests for the two factors of a balanced 2x2 table.

    ``method="pooled"`` tests each factor by pooling the cells at each of its
    levels and running a one-way test on the pooled groups; the third entry
    is the one-way test across all four cells. ``method="anova"`` runs a
    balanced two-way ANOVA with interaction on absolute deviations from the
    cell centers.

    Keys: ``"margin_type"``, ``"stability_mode"``, ``"interaction"``.
    """
    if not table.balanced:
        raise ValueError("two-way variance tests need a complete, balanced table")
    a_levels, b_levels = table.levels
    cells = {k: g.array() for k, g in table.cells.items()}
    if any(v.size < 2 for v in cells.values()):
        raise ValueError("every cell needs at least two values")
    tag = "levene" if center == "mean" else "brown-forsythe"

    if method == "pooled":
        by_a = [np.concatenate([cells[(a, b)] for b in b_levels]) for a in a_levels]
        by_b = [np.concatenate([cells[(a, b)] for a in a_levels]) for b in b_levels]
        every = [cells[(a, b)] for a in a_levels for b in b_levels]
        out = {}
        for key, groups in (("margin_type", by_a), ("stability_mode", by_b), ("interaction", every)):
            r = levene_oneway(groups, center)
            r.method = f"{tag}-pooled[{key}]" if key != "interaction" else f"{tag}-cells"
            out[key] = r
        return out
    if method != "anova":
        raise ValueError(f"unknown method {method!r}")

    z = {k: np.abs(v - _center(v, center)) for k, v in cells.items()}
    n = next(iter(z.values())).size
    na, nb = len(a_levels), len(b_levels)
    grand = np.concatenate(list(z.values())).mean()
    ma = {a: np.concatenate([z[(a, b)] for b in b_levels]).mean() for a in a_levels}
    mb = {b: np.concatenate([z[(a, b)] for a in a_levels]).mean() for b in b_levels}
    ss_a = n * nb * sum((ma[a] - grand) ** 2 for a in a_levels)
    ss_b = n * na * sum((mb[b] - grand) ** 2 for b in b_levels)
    ss_ab = n * sum((z[(a, b)].mean() - ma[a] - mb[b] + grand) ** 2 for a in a_levels for b in b_levels)
    ss_e = sum(float(np.sum((v - v.mean()) ** 2)) for v in z.values())
    df_a, df_b = na - 1, nb - 1
    df_ab, df_e = df_a * df_b, na * nb * (n - 1)
    out = {}
    for key, ss, df in (("margin_type", ss_a, df_a), ("stability_mode", ss_b, df_b),
                        ("interaction", ss_ab, df_ab)):
        if ss_e == 0:
            F, p = (0.0, 1.0) if ss == 0 else (math.inf, 0.0)
        else:
            F = (ss / df) / (ss_e / df_e)
            p = f_sf(F, df, df_e)
        out[key] = TestResult(float(F), (float(df), float(df_e)), p, f"{tag}-anova[{key}]")
    return out


# ---------------------------------------------------------------------------
# Shapiro-Wilk, Royston (1995) AS R94

_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(coef: Sequence[float], x: float) -> float:
    # ascending coefficients
    result = 0.0
    for c in reversed(coef):
        result = result * x + c
    return result


def _swilk_coefficients(n: int) -> np.ndarray:
    """Half vector of Royston's approximate coefficients (lower half, positive)."""
    nn2 = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    an25 = n + 0.25
    m = special.ndtri((np.arange(1, nn2 + 1) - 0.375) / an25)
    summ2 = 2.0 * float(np.sum(m * m))
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a1 = _poly(_C1, rsn) - m[0] / ssumm2
    a = -m / ssumm2  # placeholder, rescaled below
    if n > 5:
        i1 = 2
        a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
        fac = math.sqrt((summ2 - 2.0 * m[0] ** 2 - 2.0 * m[1] ** 2) / (1.0 - 2.0 * a1**2 - 2.0 * a2**2))
        a[1] = a2
    else:
        i1 = 1
        fac = math.sqrt((summ2 - 2.0 * m[0] ** 2) / (1.0 - 2.0 * a1**2))
    a[0] = a1
    a[i1:] = -m[i1:] / fac
    return a


def shapiro_wilk(values) -> TestResult:
    """Shapiro-Wilk W with Royston's p-value approximation (3 <= n <= 5000)."""
    x = np.sort(_arr(values))
    n = x.size
    if n < 3:
        raise ValueError("Shapiro-Wilk needs at least 3 values")
    if n > 5000:
        raise ValueError("Shapiro-Wilk approximation is valid only up to n = 5000")
    rng_ = x[-1] - x[0]
    if rng_ < 1e-19:
        raise ValueError("Shapiro-Wilk is undefined for constant input")

    half = _swilk_coefficients(n)
    coef = np.zeros(n)
    nn2 = n // 2
    coef[:nn2] = -half
    coef[n - nn2:] = half[::-1]

    xs = x / rng_
    asa = coef - coef.mean()
    xsx = xs - xs.mean()
    ssa = float(np.sum(asa * asa))
    ssx = float(np.sum(xsx * xsx))
    sax = float(np.sum(asa * xsx))
    ssassx = math.sqrt(ssa * ssx)
    w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx)
    w = 1.0 - w1

    if n == 3:
        pi6, stqr = 6.0 / math.pi, math.pi / 3.0
        p = max(0.0, pi6 * (math.asin(math.sqrt(w)) - stqr))
        return TestResult(w, float(n), min(p, 1.0), "shapiro-wilk")

    y = math.log(w1)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return TestResult(w, float(n), 1e-99, "shapiro-wilk")
        y = -math.log(gamma - y)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu = _poly(_C5, ln)
        sigma = math.exp(_poly(_C6, ln))
    p = float(special.ndtr(-(y - mu) / sigma))
    return TestResult(w, float(n), p, "shapiro-wilk")


# ---------------------------------------------------------------------------
# bootstrap


def bootstrap_vr_ci(group1, group2, resamples: int = 10_000, seed: int = 0,
                    confidence: float = 0.95) -> tuple[float, float, int]:
    """Percentile bootstrap CI for ``var(group1) / var(group2)``.

    Each resample redraws both groups with replacement. Resamples whose
    denominator variance is zero are redrawn; the redraw count is returned as
    the third element. Percentiles use linear interpolation between order
    statistics.
    """
    if resamples < 1000:
        raise ValueError("use at least 1000 resamples")
    a, b = _arr(group1), _arr(group2)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two values")
    if np.ptp(b) == 0:
        raise ZeroDivisionError("second group is constant; every resample has zero variance")
    rng = np.random.default_rng(seed)
    ratios = np.empty(resamples)
    todo = np.arange(resamples)
    redraws = -resamples
    while todo.size:
        redraws += todo.size
        ra = a[rng.integers(0, a.size, size=(todo.size, a.size))]
        rb = b[rng.integers(0, b.size, size=(todo.size, b.size))]
        va = ra.var(axis=1, ddof=1)
        vb = rb.var(axis=1, ddof=1)
        ok = vb > 0
        ratios[todo[ok]] = va[ok] / vb[ok]
        todo = todo[~ok]
    tail = 100.0 * (1.0 - confidence) / 2.0
    lo, hi = np.percentile(ratios, [tail, 100.0 - tail], method="linear")
    return float(lo), float(hi), int(redraws)


# ---------------------------------------------------------------------------
# manifests and fixtures

MANIFEST_FIELDS = ("condition", "seed", "test_accuracy", "status")

FIXTURES = {
    "cifar10_standard": "cifar10_standard.csv",
    "cifar10_low": "cifar10_low.csv",
    "cifar100_standard": "cifar100_standard.csv",
    "svhn_easy": "svhn_easy.csv",
    "svhn_medium": "svhn_medium.csv",
    "svhn_hard": "svhn_hard.csv",
    "fmnist": "fmnist.csv",
}


def read_manifest(source) -> list[dict]:
    """Parse a ``condition,seed,test_accuracy,status`` CSV (path or text stream)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as f:
            text = f.read()
    reader = csv.DictReader(io.StringIO(text))
    missing = {"condition", "seed", "test_accuracy"} - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"manifest lacks columns: {sorted(missing)}")
    rows = []
    for line, row in enumerate(reader, start=2):
        status = (row.get("status") or "ok").strip()
        acc = row["test_accuracy"].strip()
        rows.append({
            "condition": row["condition"].strip(),
            "seed": int(row["seed"]),
            "test_accuracy": float(acc) if acc and status == "ok" else math.nan,
            "status": status,
        })
    return rows


def write_manifest(rows: Iterable[Mapping], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            acc = r.get("test_accuracy")
            w.writerow({
                "condition": r["condition"],
                "seed": r["seed"],
                "test_accuracy": "" if acc is None or (isinstance(acc, float) and math.isnan(acc)) else repr(float(acc)),
                "status": r.get("status", "ok"),
            })


def load_fixture(name: str) -> list[dict]:
    """Per-seed accuracy tables bundled with the package."""
    try:
        fname = FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    text = resources.files("cfflab").joinpath("data", fname).read_text()
    return read_manifest(io.StringIO(text))


def group_rows(rows: Iterable[Mapping], by: Literal["condition", "margin", "stability"] = "condition"
               ) -> dict[str, list[float]]:
    """Collect successful accuracies by condition, margin type or stability mode."""
    groups: dict[str, list[float]] = {}
    for r in sorted(rows, key=lambda r: (r["condition"], r["seed"])):
        if r.get("status", "ok") != "ok":
            continue
        label = r["condition"]
        if by == "margin":
            label = label.partition("_")[0]
        elif by == "stability":
            label = label.partition("_")[2] or label
        elif by != "condition":
            raise ValueError(f"unknown grouping {by!r}")
        groups.setdefault(label, []).append(float(r["test_accuracy"]))
    return groups


# ---------------------------------------------------------------------------
# audit report


@dataclass
class AuditReport:
    groups: list[dict]
    cells: list[dict] = field(default_factory=list)
    comparison: dict | None = None
    factorial: dict | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)

    def to_text(self) -> str:
        lines = []
        if self.cells:
            lines.append("Per-cell test accuracy")
            lines.append(_stats_table(self.cells))
            lines.append("")
        lines.append("Grouped test accuracy")
        lines.append(_stats_table(self.groups))
        if self.factorial:
            lines.append("")
            lines.append("Factorial variance tests (p-values)")
            lines.append(f"{'Test':<16}{'Margin type':>14}{'Stability':>12}{'Interaction':>13}")
            for name, res in self.factorial.items():
                lines.append(f"{name:<16}{res['margin_type']['p_value']:>14.3f}"
                             f"{res['stability_mode']['p_value']:>12.3f}{res['interaction']['p_value']:>13.3f}")
        if self.comparison:
            c = self.comparison
            lines.append("")
            lines.append(f"Comparison {c['numerator']} / {c['denominator']}")
            f = c["f_test"]
            lines.append(f"  VR = {c['variance_ratio']:.2f}   F({f['dof'][0]:.0f}, {f['dof'][1]:.0f}) = "
                         f"{f['statistic']:.2f}, p = {f['p_value']:.3f}")
            w = c["welch"]
            lines.append(f"  Welch t({w['dof']:.1f}) = {w['statistic']:.2f}, p = {w['p_value']:.2f}, "
                         f"95% CI [{w['extra']['ci'][0]:.2f}, {w['extra']['ci'][1]:.2f}]")
            lines.append(f"  Levene p = {c['levene']['p_value']:.3f}   "
                         f"Brown-Forsythe p = {c['brown_forsythe']['p_value']:.3f}")
            lo, hi = c["bootstrap_ci"]
            lines.append(f"  Bootstrap 95% CI for VR: [{lo:.2f}, {hi:.2f}] "
                         f"({c['bootstrap_resamples']} resamples, {c['bootstrap_redraws']} redraws)")
            for label, sw in c["shapiro_wilk"].items():
                if sw is None:
                    lines.append(f"  Shapiro-Wilk {label}: n/a")
                else:
                    lines.append(f"  Shapiro-Wilk {label}: W = {sw['statistic']:.4f}, p = {sw['p_value']:.4f}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(type(obj))


def _stats_table(entries: list[dict]) -> str:
    out = [f"{'Condition':<20}{'n':>4}{'Mean (%)':>11}{'Std (%)':>10}{'Var':>10}"]
    for e in entries:
        std = "" if e["std"] is None else f"{e['std']:.3f}"
        var = "" if e["var"] is None else f"{e['var']:.4f}"
        out.append(f"{e['label']:<20}{e['n']:>4}{e['mean']:>11.2f}{std:>10}{var:>10}")
    return "\n".join(out)


def _describe(label: str, vals: Sequence[float]) -> dict:
    x = np.asarray(vals, dtype=np.float64)
    var = sample_variance(x) if x.size >= 2 else None
    return {"label": label, "n": int(x.size), "mean": float(x.mean()),
            "std": None if var is None else math.sqrt(var), "var": var}


def _order_pair(labels: list[str]) -> tuple[str, str]:
    if "clamp" in labels and "subtract" in labels:
        return "clamp", "subtract"
    return labels[0], labels[1]


def audit(rows: Sequence[Mapping], group_by: str = "margin", resamples: int = 10_000,
          seed: int = 0, min_seeds: int = 2) -> AuditReport:
    """Full variance audit of a manifest.

    Per-group summaries always; the two-group comparison when grouping yields
    exactly two groups; the factorial Levene/Brown-Forsythe table when the
    conditions form a balanced 2x2 design.
    """
    groups = group_rows(rows, group_by)
    if not groups:
        raise ValueError("manifest has no successful runs")
    for label, vals in groups.items():
        if len(vals) < min_seeds:
            raise ValueError(f"group {label!r} has {len(vals)} seed(s); need at least {min_seeds}")

    report = AuditReport(groups=[_describe(k, v) for k, v in groups.items()])
    cells = group_rows(rows, "condition")
    if group_by != "condition":
        report.cells = [_describe(k, v) for k, v in cells.items()]

    flat: list[str] = []
    failed = [r for r in rows if r.get("status", "ok") != "ok"]
    if failed:
        report.notes.append(f"{len(failed)} failed run(s) excluded")

    if len(groups) == 2:
        num, den = _order_pair(list(groups))
        a, b = groups[num], groups[den]
        flat = [lab for lab, vals in ((num, a), (den, b)) if sample_variance(vals) == 0.0]
        if flat:
            report.notes.append(f"comparison skipped: zero seed variance in {', '.join(flat)}")
    if len(groups) == 2 and not flat:
        ft = f_test_two_sided(a, b)
        wt = welch_t_test(a, b)
        shapiro = {}
        for lab, vals in ((num, a), (den, b)):
            try:
                shapiro[lab] = shapiro_wilk(vals).to_dict() if len(vals) >= 3 else None
            except ValueError:
                shapiro[lab] = None
        lo, hi, redraws = bootstrap_vr_ci(a, b, resamples, seed)
        report.comparison = {
            "numerator": num,
            "denominator": den,
            "variance_ratio": ft.statistic,
            "f_test": ft.to_dict(),
            "welch": wt.to_dict(),
            "levene": levene_oneway([a, b], "mean").to_dict(),
            "brown_forsythe": levene_oneway([a, b], "median").to_dict(),
            "shapiro_wilk": shapiro,
            "bootstrap_ci": [lo, hi],
            "bootstrap_resamples": resamples,
            "bootstrap_redraws": redraws,
        }
        report.notes.append(
            f"Welch-Satterthwaite dof = {wt.dof:.2f}, computed from the per-seed values"
        )

    try:
        table = FactorialTable.from_groups(cells)
    except ValueError:
        table = None
    if table is not None and len(table.cells) == 4 and all(len(v) == 2 for v in table.levels):
        if table.balanced:
            report.factorial = {
                name: {k: r.to_dict() for k, r in levene_two_way(table, center).items()}
                for name, center in (("Levene", "mean"), ("Brown-Forsythe", "median"))
            }
        else:
            report.notes.append("factorial table is unbalanced; two-way variance tests skipped")
    return report
