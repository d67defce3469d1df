"""Cephalometric analysis bindings."""

import json as _json

from ._cephkit import (
    CephError,
    Workbench,
    angle_at_vertex,
    directed_line_angle,
    format_number,
    signed_point_line_distance,
    version,
)

__all__ = [
    "CephError",
    "Workbench",
    "analyze",
    "angle_at_vertex",
    "directed_line_angle",
    "format_number",
    "signed_point_line_distance",
    "version",
]

_default = None


def analyze(case, workbench=None):
    """Analyze a case given as a dict or JSON text; returns a dict."""
    global _default
    if workbench is None:
        if _default is None:
            _default = Workbench()
        workbench = _default
    text = case if isinstance(case, str) else _json.dumps(case)
    return _json.loads(workbench.analyze_json(text))
