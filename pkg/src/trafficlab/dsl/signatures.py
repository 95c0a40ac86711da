"""Per-family candidate signatures: input names, canonical parameters, probes."""

from __future__ import annotations

from dataclasses import dataclass

from trafficlab import models
from trafficlab.datasets import LANECHANGE_FEATURES


@dataclass(frozen=True)
class FamilySignature:
    family: str
    input_names: tuple
    param_names: tuple
    output_role: str
    probes: tuple  # ((label, {input: value}), ...)

    def __post_init__(self):
        names = self.input_names + self.param_names
        if len(set(names)) != len(names):
            raise ValueError(f"{self.family}: input and parameter names must be unique")

    def describe(self) -> str:
        lines = [
            f"family: {self.family}",
            f"inputs: {', '.join(self.input_names)}",
            f"parameters (in order): {', '.join(self.param_names)}",
            f"output: {self.output_role}",
        ]
        return "\n".join(lines)


def _mobil_probe(**overrides):
    row = dict.fromkeys(LANECHANGE_FEATURES, 0.0)
    row.update(overrides)
    return row


SIGNATURES = {
    "idm": FamilySignature(
        "idm",
        ("spacing", "sv_spd", "lv_spd"),
        models.IDM_PARAM_NAMES,
        "acceleration of the following vehicle [m/s^2]",
        (
            ("all-zeros", {"spacing": 0.0, "sv_spd": 0.0, "lv_spd": 0.0}),
            ("all-ones", {"spacing": 1.0, "sv_spd": 1.0, "lv_spd": 1.0}),
            ("typical-following", {"spacing": 20.0, "sv_spd": 15.0, "lv_spd": 14.0}),
            ("typical-free", {"spacing": 80.0, "sv_spd": 25.0, "lv_spd": 27.0}),
            ("closing-fast", {"spacing": 8.0, "sv_spd": 18.0, "lv_spd": 10.0}),
            ("negative-spacing", {"spacing": -1.0, "sv_spd": 10.0, "lv_spd": 10.0}),
        ),
    ),
    "mobil": FamilySignature(
        "mobil",
        LANECHANGE_FEATURES,
        models.MOBIL_PARAM_NAMES,
        "lane-change score (row decides to change lanes iff score > 0)",
        (
            ("all-zeros", _mobil_probe()),
            ("all-ones", _mobil_probe(**dict.fromkeys(LANECHANGE_FEATURES, 1.0))),
            (
                "typical",
                _mobil_probe(v=12.0, s=15.0, of_v=11.0, or_v=12.5, tf_v=14.0, tr_v=13.0,
                             rtf_x=20.0, rtr_x=12.0, rr_x=10.0, or_acc=0.2, tr_acc=-0.1),
            ),
            (
                "negative-spacing",
                _mobil_probe(v=10.0, s=-1.0, of_v=10.0, or_v=10.0, tf_v=10.0, tr_v=10.0,
                             rtf_x=-1.0, rtr_x=-1.0, rr_x=-1.0),
            ),
        ),
    ),
    "lwr": FamilySignature(
        "lwr",
        ("density",),
        models.LWR_PARAM_NAMES,
        "normalized traffic speed",
        (
            ("all-zeros", {"density": 0.0}),
            ("all-ones", {"density": 1.0}),
            ("typical-low", {"density": 0.15}),
            ("typical-medium", {"density": 0.45}),
            ("typical-high", {"density": 0.8}),
        ),
    ),
}


def get_signature(family: str) -> FamilySignature:
    try:
        return SIGNATURES[family]
    except KeyError:
        raise LookupError(f"unknown family {family!r}; available: {', '.join(SIGNATURES)}") from None


def mid_bound_params(family: str, extras=()) -> dict:
    """Midpoint of each canonical default box plus each extra parameter's box."""
    bounds = models.DEFAULT_BOUNDS[family]
    out = {name: 0.5 * (bounds[name][0] + bounds[name][1]) for name in SIGNATURES[family].param_names}
    for p in extras:
        out[p.name] = 0.5 * (p.lower + p.upper)
    return out
