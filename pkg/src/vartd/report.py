"""Per-state risk summary of an approximate (J, V) pair.

The four criteria are the usual variance-based ones:

(a) ``V <= c``, the constraint in "maximize J s.t. V <= c";
(b) ``J >= c``, the constraint in "minimize V s.t. J >= c";
(c) the Sharpe ratio ``J / sqrt(V)``, defined only where ``V > 0``;
(d) the mean-deviation score ``J - c sqrt(V)``.

The report only formats numbers it is given; it never re-estimates.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import StructuralError

UNDEFINED = "undefined"


@dataclass(frozen=True)
class Thresholds:
    """``c`` for criteria (a), (b) and (d); ``None`` skips that criterion."""

    max_variance: float = None
    min_value: float = None
    risk_aversion: float = None

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        aliases = {"a": "max_variance", "b": "min_value", "d": "risk_aversion"}
        out = {}
        for key, val in data.items():
            name = aliases.get(key, key)
            if name not in cls.__dataclass_fields__:
                raise StructuralError(f"unknown threshold {key!r}")
            out[name] = None if val is None else float(val)
        return cls(**out)


@dataclass(frozen=True, eq=False)
class RiskReport:
    J: np.ndarray
    V: np.ndarray
    sd: np.ndarray
    sharpe: np.ndarray
    sharpe_defined: np.ndarray
    variance_ok: np.ndarray
    value_ok: np.ndarray
    mean_deviation: np.ndarray
    thresholds: Thresholds

    @property
    def n(self):
        return self.J.shape[0]

    def rows(self):
        """One dict per state; undefined entries are the string ``"undefined"``."""
        t = self.thresholds
        out = []
        for x in range(self.n):
            row = {
                "state": x,
                "J": float(self.J[x]),
                "V": float(self.V[x]),
                "sd": float(self.sd[x]),
                "sharpe": float(self.sharpe[x]) if self.sharpe_defined[x] else UNDEFINED,
            }
            if t.max_variance is not None:
                row["variance_ok"] = bool(self.variance_ok[x])
            if t.min_value is not None:
                row["value_ok"] = bool(self.value_ok[x])
            if t.risk_aversion is not None:
                row["mean_deviation"] = float(self.mean_deviation[x])
            out.append(row)
        return out

    def to_dict(self):
        return {
            "thresholds": {k: getattr(self.thresholds, k) for k in Thresholds.__dataclass_fields__},
            "n_negative_variance": int(np.sum(self.V < 0)),
            "states": self.rows(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self):
        rows = self.rows()
        header = list(rows[0]) if rows else ["state", "J", "V", "sd", "sharpe"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v
                        for v in (row[k] for k in header)])
        return buf.getvalue()


def risk_report(result, thresholds=None):
    """Build a :class:`RiskReport` from an ``EvalResult`` (or anything with ``J`` and ``V``).

    ``thresholds`` is a :class:`Thresholds` or a dict with keys
    ``max_variance``/``min_value``/``risk_aversion`` (or ``a``/``b``/``d``).
    """
    if not isinstance(thresholds, Thresholds):
        thresholds = Thresholds.from_dict(thresholds)
    J = np.asarray(result.J, dtype=float)
    V = np.asarray(result.V, dtype=float)
    sd = np.sqrt(np.maximum(V, 0.0))
    defined = V > 0
    sharpe = np.zeros_like(J)
    sharpe[defined] = J[defined] / sd[defined]

    n = J.shape[0]
    if thresholds.max_variance is not None:
        variance_ok = V <= thresholds.max_variance
    else:
        variance_ok = np.zeros(n, dtype=bool)
    if thresholds.min_value is not None:
        value_ok = J >= thresholds.min_value
    else:
        value_ok = np.zeros(n, dtype=bool)
    c = thresholds.risk_aversion
    mean_dev = J - c * sd if c is not None else np.zeros(n)
    return RiskReport(J, V, sd, sharpe, defined, variance_ok, value_ok, mean_dev, thresholds)
