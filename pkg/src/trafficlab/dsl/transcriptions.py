"""Native models written in the candidate language.

These serve two purposes: they are shown to the code generator as worked
examples of the language, and they let tests check that the interpreter
agrees with the native numpy implementations.
"""

from __future__ import annotations

from trafficlab.dsl.syntax import CandidateModel, parse_candidate


def _desired_gap(v: str, lv: str) -> str:
    return (
        "(add (param jam_space) (max 0 (add (mul {v} (param desired_time_window)) "
        "(div (mul {v} (sub {v} {lv})) (mul 2 (sqrt (mul (param max_acc) (param comfort_acc))))))))"
    ).format(v=v, lv=lv)


def idm_expr(s: str, v: str, lv: str) -> str:
    """Baseline IDM acceleration for arbitrary spacing / speed sub-expressions."""
    s_star = _desired_gap(v, lv)
    return (
        f"(if (le {s} 0) (neg (param max_acc)) "
        f"(mul (param max_acc) (sub (sub 1 (pow (div {v} (param desired_speed)) (param beta))) "
        f"(pow (div {s_star} {s}) 2))))"
    )


_S, _V, _LV = "(input spacing)", "(input sv_spd)", "(input lv_spd)"

IDM_BASELINE = f"""\
; intelligent driver model
(defmodel idm ()
  {idm_expr(_S, _V, _LV)})
"""

_GAP = _desired_gap(_V, _LV)
_Z = f"(div (sub {_S} {_GAP}) (max {_GAP} 1))"
_A_FREE = f"(mul (param max_acc) (sub 1 (tanh (mul (param beta) (sub (div {_V} (param desired_speed)) 1)))))"
_A_INT = f"(mul (neg (param max_acc)) (sub 1 (tanh (mul (param beta) {_Z}))))"
_W = f"(sigmoid (mul (param beta) (sub {_V} {_LV})))"

IDM_IMPROVED_FINAL = f"""\
; tanh free-road and interaction terms blended by a relative-speed sigmoid
(defmodel idm ()
  (add (mul (sub 1 {_W}) {_A_FREE})
       (mul {_W} {_A_INT})))
"""


def _i(name: str) -> str:
    return f"(input {name})"


_A_C = idm_expr(_i("s"), _i("v"), _i("of_v"))
_A_C_NEW = idm_expr(_i("rtf_x"), _i("v"), _i("tf_v"))
_A_N_NEW = idm_expr(_i("rtr_x"), _i("tr_v"), _i("v"))
_A_O_NEW = idm_expr(_i("rr_x"), _i("or_v"), _i("v"))

MOBIL_IMPROVED_FINAL = f"""\
; rear-vehicle difference incentive against the batch 75th percentile of the
; current acceleration, gated on both target-lane gaps; score > 0 means change
(defmodel mobil ()
  (if (gt (input rtf_x) (param b_safe))
      (if (gt (input rtr_x) (param b_safe))
          (sub (add (sub {_A_C_NEW} {_A_C}) (mul (param politeness) (sub {_A_N_NEW} {_A_O_NEW})))
               (percentile {_A_C} 75))
          -1)
      -1))
"""

LWR_BASELINE = """\
; Greenshields linear speed-density relation
(defmodel lwr ()
  (mul (param v_f) (sub 1 (div (input density) (param rho_max)))))
"""

LWR_IMPROVED_FINAL = """\
; logistic speed drop centred at half the jam density
(defmodel lwr (extra-params (k 0.1 10))
  (mul (param v_f)
       (sub 1 (sigmoid (mul (param k)
                            (sub (clip (input density) 0 (param rho_max))
                                 (div (param rho_max) 2)))))))
"""

TRANSCRIPTIONS = {
    ("idm", "baseline"): IDM_BASELINE,
    ("idm", "improved-final"): IDM_IMPROVED_FINAL,
    ("mobil", "improved-final"): MOBIL_IMPROVED_FINAL,
    ("lwr", "baseline"): LWR_BASELINE,
    ("lwr", "improved-final"): LWR_IMPROVED_FINAL,
}


def transcription(family: str, variant: str) -> CandidateModel:
    try:
        text = TRANSCRIPTIONS[(family, variant)]
    except KeyError:
        raise LookupError(f"no transcription for {family}/{variant}") from None
    return parse_candidate(text)
