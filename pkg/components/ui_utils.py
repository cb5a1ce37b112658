from dataclasses import asdict
from typing import Any, Dict

from workloads.attacks import DetectionReport
from workloads.cost_model import RunMetrics


def format_fields(values: Dict[str, Any]) -> str:
    """Format a flat mapping as aligned ``key: value`` lines"""
    if not values:
        return ""
    width = max(len(k) for k in values)
    formatted = []
    for key, value in values.items():
        if isinstance(value, float):
            value = f"{value:.4f}"
        elif isinstance(value, bool):
            value = "yes" if value else "no"
        elif value is None:
            value = "-"
        formatted.append(f"{key.ljust(width)} : {value}")
    return "\n".join(formatted)


def format_report(report: DetectionReport) -> str:
    """Human-readable block for an attack run"""
    header = f"{report.attack} under {report.mode}: {report.verdict}"
    if report.leaked and not report.detected:
        header += ", data leaked"
    return header + "\n" + format_fields(asdict(report))


def format_verdict_line(report: DetectionReport) -> str:
    offset = "-" if report.detected_at_offset is None else str(report.detected_at_offset)
    return (f"verdict={report.verdict} attack={report.attack} mode={report.mode} offset={offset} "
            f"corrupted={report.corrupted_bytes} latency={report.latency} "
            f"leaked={'yes' if report.leaked else 'no'}")


def format_metrics(metrics: RunMetrics) -> str:
    values = asdict(metrics)
    values["ipc"] = metrics.ipc
    return format_fields(values)
