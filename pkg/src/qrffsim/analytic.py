"""Closed-form model of random-flip-flop bias, correlation and entropy.

A toggle flip-flop clocked by Poisson detection events at rate ``lambda_d``
produces a random telegraph signal; sampling it at ``f_bg`` through a
comparator with normalized threshold ``eta`` and finite rise/fall times
``t_r``/``t_f`` yields bits whose bias and lagged correlation have simple
closed forms.  Everything in this module is a pure function; the
Monte-Carlo engine is validated against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import InvalidParameterError


@dataclass(frozen=True)
class QrffParams:
    """The five behavioral parameters of one bit generator.

    lambda_d : detection (toggle) rate, events/s
    f_bg     : bit-generation sampling frequency, Hz
    t_r      : full 0-to-1 output transition time, s
    t_f      : full 1-to-0 output transition time, s
    eta      : normalized sampling threshold, in (0, 1)
    """

    lambda_d: float
    f_bg: float
    t_r: float
    t_f: float
    eta: float

    def __post_init__(self):
        if not self.lambda_d > 0:
            raise InvalidParameterError("lambda_d must be > 0")
        if not self.f_bg > 0:
            raise InvalidParameterError("f_bg must be > 0")
        if self.t_r < 0 or self.t_f < 0:
            raise InvalidParameterError("t_r and t_f must be >= 0")
        if not self.t_r + self.t_f > 0:
            raise InvalidParameterError("t_r + t_f must be > 0")
        if not 0 < self.eta < 1:
            raise InvalidParameterError("eta must lie strictly inside (0, 1)")
        # The bias model assumes edges much shorter than the mean half
        # period; outside this regime the closed form is meaningless.
        if not (self.t_r + self.t_f) * self.lambda_d < 1:
            raise InvalidParameterError(
                "(t_r + t_f) * lambda_d must be < 1 for the edge model to hold"
            )


@dataclass(frozen=True)
class EntropyBudget:
    """Compliance limits for a raw bit generator."""

    bias_limit: float = 1e-3
    corr_limit: float = 1e-3
    entropy_floor: float = 0.997

    def __post_init__(self):
        if self.bias_limit <= 0 or self.corr_limit <= 0 or self.entropy_floor <= 0:
            raise InvalidParameterError("budget limits must be strictly positive")
        if self.entropy_floor > 1:
            raise InvalidParameterError("entropy_floor must be <= 1 bit/bit")


@dataclass(frozen=True)
class ComplianceVerdict:
    """Outcome of checking (bias, correlations) against an EntropyBudget."""

    bias: float
    max_corr: float
    entropy: float
    bias_ok: bool
    corr_ok: bool
    entropy_ok: bool
    budget: EntropyBudget = field(default_factory=EntropyBudget)

    @property
    def passed(self) -> bool:
        return self.bias_ok and self.corr_ok and self.entropy_ok


def analytic_bias(p: QrffParams) -> float:
    """Expected P(bit=1) - 0.5 for a generator with parameters ``p``.

    b = (t_f - eta * (t_r + t_f)) / 2 * lambda_d
    """
    return (p.t_f - p.eta * (p.t_r + p.t_f)) / 2.0 * p.lambda_d


def analytic_autocorr(lam: float, tau: float) -> float:
    """Autocorrelation exp(-2*lam*|tau|) of a symmetric telegraph signal."""
    if not lam > 0:
        raise InvalidParameterError("rate must be > 0")
    return math.exp(-2.0 * lam * abs(tau))


def analytic_lag_coefficient(p: QrffParams, i: int) -> float:
    """Serial correlation coefficient at a lag of ``i`` bits.

    a_i = exp(-2 * lambda_d * i / f_bg), i.e. the telegraph autocorrelation
    evaluated at time lag i/f_bg.  Strictly decreasing in both ``i`` and
    ``lambda_d``; always in (0, 1).
    """
    if i < 1:
        raise InvalidParameterError("lag index must be >= 1")
    return analytic_autocorr(p.lambda_d, i / p.f_bg)


def zero_bias_threshold(t_r: float, t_f: float) -> float:
    """Threshold eta* = t_f / (t_r + t_f) at which the bias vanishes."""
    if t_r < 0 or t_f < 0:
        raise InvalidParameterError("t_r and t_f must be >= 0")
    if not t_r + t_f > 0:
        raise InvalidParameterError("t_r + t_f must be > 0")
    return t_f / (t_r + t_f)


def binary_shannon_entropy(p1: float) -> float:
    """Entropy -p*log2(p) - (1-p)*log2(1-p) in bits/bit, with 0*log(0) = 0."""
    if not 0.0 <= p1 <= 1.0:
        raise InvalidParameterError("probability must lie in [0, 1]")
    if p1 == 0.0 or p1 == 1.0:
        return 0.0
    return -p1 * math.log2(p1) - (1.0 - p1) * math.log2(1.0 - p1)


def entropy_compliance(
    bias: float,
    corr: "list[float] | tuple[float, ...]",
    budget: EntropyBudget | None = None,
) -> ComplianceVerdict:
    """Check bias, lag coefficients and implied entropy against a budget.

    The three criteria are evaluated independently: |bias| < bias_limit,
    max|a_i| < corr_limit, and H(0.5 + bias) >= entropy_floor.  The overall
    verdict passes only if all three do.
    """
    if budget is None:
        budget = EntropyBudget()
    max_corr = max((abs(a) for a in corr), default=0.0)
    entropy = binary_shannon_entropy(0.5 + bias)
    return ComplianceVerdict(
        bias=bias,
        max_corr=max_corr,
        entropy=entropy,
        bias_ok=abs(bias) < budget.bias_limit,
        corr_ok=max_corr < budget.corr_limit,
        entropy_ok=entropy >= budget.entropy_floor,
        budget=budget,
    )


def max_fbg_for_corr_limit(lambda_d: float, limit: float) -> float:
    """Largest sampling frequency keeping the lag-1 coefficient at ``limit``.

    Inverts a_1 = exp(-2*lambda_d/f):  f = -2*lambda_d / ln(limit).
    """
    if not lambda_d > 0:
        raise InvalidParameterError("lambda_d must be > 0")
    if not 0.0 < limit < 1.0:
        raise InvalidParameterError("limit must lie strictly inside (0, 1)")
    return -2.0 * lambda_d / math.log(limit)
