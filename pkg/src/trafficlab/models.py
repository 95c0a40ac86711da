"""Native IDM, MOBIL and LWR models plus their improved variants.

Every model is a pure, vectorized numpy function with a per-family
signature:

* car following (``idm``): ``f(params, spacing, sv_speed, lv_speed) -> acceleration``
* lane change (``mobil``): ``f(params, features) -> decisions`` where
  ``features`` is an ``(N, 11)`` matrix in :data:`LANECHANGE_FEATURES` order
* flow (``lwr``): ``f(params, density) -> normalized speed``

Parameter vectors follow the serialization orders below; the IDM
"acceleration exponent" slot is the one the logs call ``beta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

FAMILIES = ("idm", "mobil", "lwr")

IDM_PARAM_NAMES = (
    "desired_speed",
    "desired_time_window",
    "max_acc",
    "comfort_acc",
    "beta",
    "jam_space",
)
# Lane-change logs unpack the IDM part in a different order.
MOBIL_PARAM_NAMES = (
    "desired_speed",
    "jam_space",
    "desired_time_window",
    "max_acc",
    "comfort_acc",
    "beta",
    "politeness",
    "b_safe",
    "acc_thres",
)
LWR_PARAM_NAMES = ("v_f", "rho_max")
LWR_IMPROVED_PARAM_NAMES = ("v_f", "rho_max", "k")


class IdmParams(NamedTuple):
    desired_speed: float
    desired_time_headway: float
    max_acc: float
    comfort_acc: float
    accel_exponent: float
    jam_space: float

    def validate(self):
        for name in ("desired_speed", "desired_time_headway", "max_acc", "comfort_acc", "jam_space"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IdmParams.{name} must be > 0")
        if not self.accel_exponent >= 1:
            raise ValueError("IdmParams.accel_exponent must be >= 1")
        return self


class MobilParams(NamedTuple):
    desired_speed: float
    jam_space: float
    desired_time_headway: float
    max_acc: float
    comfort_acc: float
    accel_exponent: float
    politeness: float
    b_safe: float
    acc_thres: float

    def idm(self) -> IdmParams:
        return IdmParams(
            self.desired_speed,
            self.desired_time_headway,
            self.max_acc,
            self.comfort_acc,
            self.accel_exponent,
            self.jam_space,
        )


class LwrParams(NamedTuple):
    free_flow_speed: float
    max_density: float
    steepness: float = 1.0


def sigmoid(x):
    """Logistic function evaluated without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=float)
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return out if out.ndim else float(out)


def desired_gap(params, sv_speed, lv_speed):
    """Dynamic desired gap ``s0 + max(0, v T + v dv / (2 sqrt(a b)))``."""
    _, t_hw, a_max, b, _, s0 = params
    v = np.asarray(sv_speed, dtype=float)
    dv = v - np.asarray(lv_speed, dtype=float)
    return s0 + np.maximum(0.0, v * t_hw + v * dv / (2.0 * np.sqrt(a_max * b)))


def idm_accel(params, spacing, sv_speed, lv_speed):
    """IDM acceleration; returns ``-max_acc`` wherever spacing <= 0."""
    v0, _, a_max, _, delta, _ = params
    s = np.asarray(spacing, dtype=float)
    v = np.asarray(sv_speed, dtype=float)
    s_star = desired_gap(params, v, lv_speed)
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = a_max * (1.0 - (v / v0) ** delta - (s_star / s) ** 2)
    acc = np.where(s <= 0, -a_max, acc)
    return acc if acc.ndim else float(acc)


def idm_improved_final_accel(params, spacing, sv_speed, lv_speed):
    """Sigmoid-weighted blend of a tanh free-road term and a tanh interaction term."""
    v0, _, a_max, _, delta, _ = params
    s = np.asarray(spacing, dtype=float)
    v = np.asarray(sv_speed, dtype=float)
    dv = v - np.asarray(lv_speed, dtype=float)
    s_star = desired_gap(params, v, lv_speed)
    z = (s - s_star) / np.maximum(s_star, 1.0)
    a_free = a_max * (1.0 - np.tanh(delta * (v / v0 - 1.0)))
    a_int = -a_max * (1.0 - np.tanh(delta * z))
    w = sigmoid(delta * dv)
    acc = (1.0 - w) * a_free + w * a_int
    acc = np.asarray(acc)
    return acc if acc.ndim else float(acc)


def idm_v1_accel(params, spacing, sv_speed, lv_speed):
    """Centered sigmoid of the normalized gap error (first highlighted variant)."""
    _, _, a_max, _, delta, _ = params
    s = np.asarray(spacing, dtype=float)
    gap_err = s - desired_gap(params, sv_speed, lv_speed)
    x = gap_err / np.maximum(1.0, np.abs(gap_err))
    acc = a_max * sigmoid(delta * x) - a_max / 2.0
    acc = np.asarray(acc)
    return acc if acc.ndim else float(acc)


def idm_v2_accel(params, spacing, sv_speed, lv_speed):
    """Hard switch on the gap error sign: quadratic braking when too close,
    sigmoid-gated free-road term otherwise (second highlighted variant)."""
    v0, _, a_max, _, delta, _ = params
    s = np.asarray(spacing, dtype=float)
    v = np.asarray(sv_speed, dtype=float)
    s_star = desired_gap(params, v, lv_speed)
    z = s - s_star
    too_close = -a_max * (1.0 - (s / s_star) ** 2)
    comfortable = a_max * (1.0 - (v / v0) ** 4) * sigmoid(delta * z)
    acc = np.where(z < 0, too_close, comfortable)
    return acc if acc.ndim else float(acc)


def _mobil_columns(features):
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != 11:
        raise ValueError(f"lane-change features must have 11 columns, got {x.shape[1]}")
    return x.T


def _four_accels(params, features):
    """Accelerations used by the incentive terms.

    Returns (a_c, a_c_new, a_n_new, a_o_new): subject in its own lane, subject
    behind the target-lane leader, target-lane rear vehicle behind the
    subject, original-lane rear vehicle behind the subject.
    """
    v, s, of_v, or_v, tf_v, tr_v, rtf_x, rtr_x, rr_x, _, _ = _mobil_columns(features)
    idm = MobilParams(*params).idm()
    a_c = np.asarray(idm_accel(idm, s, v, of_v), dtype=float)
    a_c_new = np.asarray(idm_accel(idm, rtf_x, v, tf_v), dtype=float)
    a_n_new = np.asarray(idm_accel(idm, rtr_x, tr_v, v), dtype=float)
    a_o_new = np.asarray(idm_accel(idm, rr_x, or_v, v), dtype=float)
    return a_c, a_c_new, a_n_new, a_o_new


def mobil_benefit(params, features):
    """Baseline incentive ``(a~c - ac) + p((a~n - an) + (a~o - ao))``."""
    cols = _mobil_columns(features)
    or_acc, tr_acc = cols[9], cols[10]
    p = params[6]
    a_c, a_c_new, a_n_new, a_o_new = _four_accels(params, features)
    return (a_c_new - a_c) + p * ((a_n_new - tr_acc) + (a_o_new - or_acc))


def mobil_decide(params, features):
    """Baseline decision: incentive above threshold and a~n <= b_safe."""
    b_safe, thres = params[7], params[8]
    benefit = mobil_benefit(params, features)
    _, _, a_n_new, _ = _four_accels(params, features)
    return ((benefit > thres) & (a_n_new <= b_safe)).astype(np.int64)


def mobil_v1_decide(params, features):
    """Full politeness incentive with a distance-based safety gate."""
    cols = _mobil_columns(features)
    rtf_x, rtr_x, or_acc, tr_acc = cols[6], cols[7], cols[9], cols[10]
    p, b_safe, thres = params[6], params[7], params[8]
    a_c, a_c_new, a_n_new, a_o_new = _four_accels(params, features)
    incentive = a_c_new - a_c + p * (a_o_new - or_acc + a_n_new - tr_acc)
    safe = (rtf_x > b_safe) & (rtr_x > b_safe)
    return ((incentive > thres) & safe).astype(np.int64)


def mobil_v2_decide(params, features):
    """Observed-acceleration politeness term and a speed-variability threshold."""
    cols = _mobil_columns(features)
    v, rtf_x, rtr_x, or_acc, tr_acc = cols[0], cols[6], cols[7], cols[9], cols[10]
    p, b_safe, thres = params[6], params[7], params[8]
    a_c, a_c_new, _, _ = _four_accels(params, features)
    incentive = a_c_new - a_c + p * (tr_acc - or_acc)
    safe = (rtf_x >= b_safe) & (rtr_x >= b_safe)
    with np.errstate(divide="ignore", invalid="ignore"):
        dynamic = thres * np.std(v) / np.mean(v)
    return ((incentive > dynamic) & safe).astype(np.int64)


def mobil_improved_final_decide(params, features):
    """Rear-vehicle difference incentive against the batch 75th percentile of a_c."""
    cols = _mobil_columns(features)
    rtf_x, rtr_x = cols[6], cols[7]
    p, b_safe = params[6], params[7]
    a_c, a_c_new, a_n_new, a_o_new = _four_accels(params, features)
    incentive = a_c_new - a_c + p * (a_n_new - a_o_new)
    safe = (rtf_x > b_safe) & (rtr_x > b_safe)
    threshold = np.percentile(a_c, 75)
    return ((incentive > threshold) & safe).astype(np.int64)


def lwr_speed(params, density):
    """Greenshields relation ``v_f (1 - rho / rho_m)``."""
    v_f, rho_m = params[0], params[1]
    out = v_f * (1.0 - np.asarray(density, dtype=float) / rho_m)
    return out if np.ndim(out) else float(out)


def lwr_improved_speed(params, density):
    """Logistic speed drop centred at half the jam density; density is clipped to [0, rho_m]."""
    v_f, rho_m, k = params[0], params[1], params[2]
    rho = np.clip(np.asarray(density, dtype=float), 0.0, rho_m)
    out = v_f * (1.0 - sigmoid(k * (rho - rho_m / 2.0)))
    out = np.asarray(out)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelVariant:
    family: str
    name: str
    param_names: tuple
    evaluate: Callable
    kernel: int | None = None
    description: str = ""

    def __call__(self, params, *inputs):
        return self.evaluate(params, *inputs)


# Kernel codes understood by trafficlab.kernels.
KERNEL_IDM_BASELINE = 0
KERNEL_IDM_IMPROVED_FINAL = 1
KERNEL_IDM_V1 = 2
KERNEL_IDM_V2 = 3

_VARIANTS = (
    ModelVariant("idm", "baseline", IDM_PARAM_NAMES, idm_accel, KERNEL_IDM_BASELINE,
                 "Intelligent Driver Model"),
    ModelVariant("idm", "v1", IDM_PARAM_NAMES, idm_v1_accel, KERNEL_IDM_V1,
                 "sigmoid of normalized gap error"),
    ModelVariant("idm", "v2", IDM_PARAM_NAMES, idm_v2_accel, KERNEL_IDM_V2,
                 "too-close braking / sigmoid-gated free road"),
    ModelVariant("idm", "improved-final", IDM_PARAM_NAMES, idm_improved_final_accel,
                 KERNEL_IDM_IMPROVED_FINAL, "tanh terms blended by a relative-speed sigmoid"),
    ModelVariant("mobil", "baseline", MOBIL_PARAM_NAMES, mobil_decide, None,
                 "MOBIL incentive with acceleration safety bound"),
    ModelVariant("mobil", "v1", MOBIL_PARAM_NAMES, mobil_v1_decide, None,
                 "distance safety gate"),
    ModelVariant("mobil", "v2", MOBIL_PARAM_NAMES, mobil_v2_decide, None,
                 "speed-variability dynamic threshold"),
    ModelVariant("mobil", "improved-final", MOBIL_PARAM_NAMES, mobil_improved_final_decide, None,
                 "75th-percentile dynamic threshold"),
    ModelVariant("lwr", "baseline", LWR_PARAM_NAMES, lwr_speed, None, "Greenshields"),
    ModelVariant("lwr", "improved-final", LWR_IMPROVED_PARAM_NAMES, lwr_improved_speed, None,
                 "logistic speed drop"),
)

REGISTRY = {(v.family, v.name): v for v in _VARIANTS}

PARAM_ALIASES = {"beta": "accel_exponent (delta)"}


def variant_names(family: str) -> list[str]:
    return [name for fam, name in REGISTRY if fam == family]


def get_variant(family: str, name: str) -> ModelVariant:
    try:
        return REGISTRY[(family, name)]
    except KeyError:
        if family not in FAMILIES:
            raise LookupError(f"unknown family {family!r}; available: {', '.join(FAMILIES)}") from None
        raise LookupError(
            f"unknown variant {name!r} for family {family!r}; available: {', '.join(variant_names(family))}"
        ) from None


# Default calibration boxes (name -> (lower, upper)); overridable from config.
DEFAULT_BOUNDS = {
    "idm": {
        "desired_speed": (1.0, 42.0),
        "desired_time_window": (0.1, 5.0),
        "max_acc": (0.1, 5.0),
        "comfort_acc": (0.1, 5.0),
        "beta": (1.0, 10.0),
        "jam_space": (0.1, 10.0),
    },
    "mobil": {
        "desired_speed": (1.0, 42.0),
        "jam_space": (0.1, 10.0),
        "desired_time_window": (0.1, 5.0),
        "max_acc": (0.1, 5.0),
        "comfort_acc": (0.1, 5.0),
        "beta": (1.0, 10.0),
        "politeness": (0.0, 1.0),
        "b_safe": (0.1, 10.0),
        "acc_thres": (0.0, 1.0),
    },
    "lwr": {
        "v_f": (0.01, 1.5),
        "rho_max": (0.01, 1.0),
        "k": (0.1, 10.0),
    },
}
