"""Human-readable rendering of a trial log."""

from __future__ import annotations

from trafficlab.agent.loop import TrialLog, baseline_info, iteration_log


def render_trial(log: TrialLog) -> str:
    family = log.config.get("family", "?")
    lines = [f"Trial for family {family}"]
    if log.baseline is not None:
        lines.append(baseline_info(family, log.baseline))
        base_loss = log.baseline["report"]["total_loss"]
    else:
        base_loss = None
    for rec in log.iterations:
        lines.append(iteration_log(rec, base_loss))
        if rec.outcome == "success":
            lines.append("Improved model found!")
            lines.append("Success factors:")
        else:
            lines.append("Improve advice:")
        lines.append(rec.analysis_text.strip())
    if log.status == "exhausted":
        lines.append(f"Target not reached after {len(log.iterations)} iteration(s).")
    elif log.status is None:
        lines.append("Trial incomplete (no final status recorded).")
    lines.append(f"Final status: {log.status or 'incomplete'}")
    return "\n".join(lines) + "\n"

