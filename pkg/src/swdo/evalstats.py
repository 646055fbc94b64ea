"""Classification metrics, the two-sample t-test, and the bundled fold tables.

Melanoma is the positive class. A probability exactly at the threshold is
predicted positive.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

FIXTURES = {
    "isic2016": "isic2016.csv",  # published per-fold accuracies, verbatim
    # the same table with four cells corrected to the values its pairwise tests were computed from
    "isic2016-reconciled": "isic2016_reconciled.csv",
    "isic2017": "isic2017.csv",  # per-fold accuracies, the ISIC-2017 fold table, verbatim
}

# (model, fold index, printed value, reconciled value); each row's correction is
# pinned by its tests against three unaffected rows and confirmed by the
# remaining cross cell.
RECONCILED_CELLS = (
    ("Inception+Wavelet+Fox", 2, 0.9703, 0.9700),
    ("Inception+Wavelet+MGTO", 2, 0.9776, 0.9767),
    ("DenseNet+Wavelet+IGWO", 1, 0.9782, 0.9743),
    ("DenseNet+Wavelet+Fox", 2, 0.9723, 0.9742),
)
EXPECTED_TTEST = "isic2016_ttest_expected.csv"  # printed pairwise tests for the ISIC-2016 folds

# sha256 of the shipped fixture files, checked by ``verify_fixture``
FIXTURE_SHA256 = {
    "isic2016.csv": "241a8b5b7c4aeb381209b8e6c6a7c2f1da1acd531bf2a4ad6e0fbe50bfc4e10e",
    "isic2016_reconciled.csv": "e8219f9c92c9ef8e8fae200b060eecb749f2499682416add825de0ff0c8ba4f6",
    "isic2017.csv": "4dad58329f5dead15a2d53b347cdd56c380afb80755a9f1e4a1243427a85343b",
    "isic2016_ttest_expected.csv": "3053fd2e6d57784dbb901a928b28e3e3ab94a5247a94c89579b2593f1a0419b3",
}


class FixtureError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v}")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Metric:
    """A metric value; ``degenerate`` marks a zero denominator reported as 0.0."""
    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


def confusion(probs, labels, threshold: float = 0.5) -> ConfusionCounts:
    probs = np.asarray(probs, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if probs.size != labels.size:
        raise ValueError(f"{probs.size} probabilities but {labels.size} labels")
    if probs.size == 0:
        raise ValueError("confusion counts need at least one sample")
    pred = probs >= threshold
    truth = labels.astype(float) >= 0.5
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        tn=int(np.sum(~pred & ~truth)),
        fp=int(np.sum(pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def _ratio(num: float, den: float) -> Metric:
    if den == 0:
        return Metric(0.0, True)
    return Metric(num / den)


def accuracy_metric(c: ConfusionCounts) -> Metric:
    return _ratio(c.tp + c.tn, c.total)


def precision_metric(c: ConfusionCounts) -> Metric:
    return _ratio(c.tp, c.tp + c.fp)


def recall_metric(c: ConfusionCounts) -> Metric:
    return _ratio(c.tp, c.tp + c.fn)


def f_measure_metric(c: ConfusionCounts) -> Metric:
    p, r = precision_metric(c), recall_metric(c)
    out = _ratio(2 * p.value * r.value, p.value + r.value)
    return Metric(out.value, out.degenerate or p.degenerate or r.degenerate)


def accuracy(c: ConfusionCounts) -> float:
    return accuracy_metric(c).value


def precision(c: ConfusionCounts) -> float:
    return precision_metric(c).value


def recall(c: ConfusionCounts) -> float:
    return recall_metric(c).value


def f_measure(c: ConfusionCounts) -> float:
    return f_measure_metric(c).value


def metrics(c: ConfusionCounts) -> dict:
    out = {}
    for name, fn in (("accuracy", accuracy_metric), ("precision", precision_metric),
                     ("recall", recall_metric), ("f_measure", f_measure_metric)):
        m = fn(c)
        out[name] = m.value
        if m.degenerate:
            out.setdefault("degenerate", []).append(name)
    return out


# --- Student t distribution ---------------------------------------------------

def _beta_cf(a: float, b: float, x: float, tol: float = 1e-16, max_iter: int = 500) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    return _betainc(a, b, x, 1.0 - x)


def _betainc(a: float, b: float, x: float, y: float) -> float:
    """I_x(a, b) with the complement ``y = 1 - x`` supplied separately, so callers
    that know it exactly do not lose digits to cancellation near x = 1."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, y) / b


def _two_sided_tail(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    # x = df / (df + t^2) and its complement, each formed without subtraction
    ratio = (t / math.sqrt(df)) ** 2
    x = 1.0 / (1.0 + ratio)
    y = ratio / (1.0 + ratio)
    if x < 0.5:
        return _betainc(df / 2.0, 0.5, x, y)
    # near t = 0 the tail is close to 1; get it from the small complement instead
    return 1.0 - _betainc(0.5, df / 2.0, y, x)


def student_t_cdf(t: float, df: float) -> float:
    if not df > 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if math.isnan(t):
        raise ValueError("t is NaN")
    half_tail = 0.5 * _two_sided_tail(t, df)
    return 1.0 - half_tail if t > 0 else half_tail


# --- two-sample test ------------------------------------------------------------

@dataclass(frozen=True)
class TTestResult:
    statistic: float
    p_value: float
    df: float


def ttest(sample1, sample2, welch_df: bool = False) -> TTestResult:
    """Two-sample t-test with the unpooled standard error.

    Degrees of freedom are ``n1 + n2 - 2`` by default (this reproduces the
    bundled tables); ``welch_df=True`` switches to Welch-Satterthwaite.
    """
    x1 = np.asarray(sample1, dtype=float).ravel()
    x2 = np.asarray(sample2, dtype=float).ravel()
    n1, n2 = x1.size, x2.size
    if n1 < 2 or n2 < 2:
        raise ValueError(f"each sample needs at least 2 values, got {n1} and {n2}")
    m1, m2 = float(np.mean(x1)), float(np.mean(x2))
    v1, v2 = float(np.var(x1, ddof=1)), float(np.var(x2, ddof=1))
    se2 = v1 / n1 + v2 / n2
    if welch_df and se2 > 0:
        df = se2 ** 2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    else:
        df = float(n1 + n2 - 2)
    if se2 == 0:
        if m1 == m2:
            return TTestResult(0.0, 1.0, df)
        return TTestResult(math.copysign(math.inf, m1 - m2), 0.0, df)
    t = (m1 - m2) / math.sqrt(se2)
    p = min(1.0, max(0.0, _two_sided_tail(t, df)))
    return TTestResult(t, p, df)


# --- fold tables ---------------------------------------------------------------

@dataclass(frozen=True)
class FoldTable:
    models: tuple[str, ...]
    folds: np.ndarray  # (n_models, k)
    name: str = ""

    def __post_init__(self):
        folds = np.asarray(self.folds, dtype=float)
        if folds.ndim != 2 or folds.shape[0] != len(self.models):
            raise ValueError("need one row of fold accuracies per model")
        if folds.shape[1] < 1:
            raise ValueError("need at least one fold")
        if np.any((folds < 0) | (folds > 1)) or not np.all(np.isfinite(folds)):
            raise ValueError("fold accuracies must lie in [0, 1]")
        if len(set(self.models)) != len(self.models):
            raise ValueError("model names must be unique")
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "folds", folds)

    def row(self, model: str) -> np.ndarray:
        return self.folds[self.models.index(model)]

    def subset(self, models) -> "FoldTable":
        models = tuple(models)
        return FoldTable(models, np.stack([self.row(m) for m in models]), self.name)

    def families(self) -> dict[str, "FoldTable"]:
        """Group models by backbone, the prefix before the first ``+``."""
        groups: dict[str, list[str]] = {}
        for m in self.models:
            groups.setdefault(m.split("+")[0], []).append(m)
        return {k: self.subset(v) for k, v in groups.items()}


def parse_fold_csv(text: str, name: str = "") -> FoldTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FixtureError(f"{name or 'fold table'}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    k = len(header) - 1
    if k < 1 or header[0] != "model" or header[1:] != [f"fold{i}" for i in range(1, k + 1)]:
        raise FixtureError(f"{name or 'fold table'}: header must be model,fold1..foldK")
    models, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != k + 1:
            raise FixtureError(f"{name or 'fold table'}: line {lineno} has {len(row)} fields, expected {k + 1}")
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError:
            raise FixtureError(f"{name or 'fold table'}: line {lineno} has a non-numeric accuracy") from None
        models.append(row[0].strip())
    try:
        return FoldTable(tuple(models), np.array(values, dtype=float).reshape(len(models), k), name)
    except ValueError as exc:
        raise FixtureError(f"{name or 'fold table'}: {exc}") from None


def fixture_text(filename: str) -> str:
    return resources.files("swdo").joinpath("fixtures", filename).read_text(encoding="utf-8")


def verify_fixture(filename: str, text: str | None = None) -> None:
    text = fixture_text(filename) if text is None else text
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    expected = FIXTURE_SHA256.get(filename)
    if expected and digest != expected:
        raise FixtureError(f"fixture {filename} is corrupted (sha256 {digest[:12]}..., expected {expected[:12]}...)")


def load_fixture(name: str, verify: bool = True) -> FoldTable:
    try:
        filename = FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    text = fixture_text(filename)
    if verify:
        verify_fixture(filename, text)
    return parse_fold_csv(text, filename)


def expected_ttests(verify: bool = True) -> list[tuple[str, str, float, float]]:
    """The printed pairwise (statistic, p) cells for the ISIC-2016 folds, diagonals included."""
    text = fixture_text(EXPECTED_TTEST)
    if verify:
        verify_fixture(EXPECTED_TTEST, text)
    rows = list(csv.DictReader(io.StringIO(text)))
    return [(r["model_a"], r["model_b"], float(r["statistic"]), float(r["p_value"])) for r in rows]


def comparison_matrix(table: FoldTable, welch_df: bool = False) -> list[list[TTestResult]]:
    n = len(table.models)
    if n < 2:
        raise ValueError("comparison needs at least two models")
    out: list[list[TTestResult | None]] = [[None] * n for _ in range(n)]
    for i in range(n):
        out[i][i] = TTestResult(0.0, 1.0, float(2 * table.folds.shape[1] - 2))
        for j in range(i + 1, n):
            r = ttest(table.folds[i], table.folds[j], welch_df)
            out[i][j] = r
            # mirror so that antisymmetry and equal p-values hold exactly
            out[j][i] = TTestResult(-r.statistic if r.statistic else 0.0, r.p_value, r.df)
    return out


def comparison_rows(table: FoldTable, welch_df: bool = False) -> list[tuple[str, str, TTestResult]]:
    m = comparison_matrix(table, welch_df)
    return [(a, b, m[i][j]) for i, a in enumerate(table.models) for j, b in enumerate(table.models)]
