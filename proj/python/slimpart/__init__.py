"""Trace-driven container partitioning and slimming.

Documents (analysis, plan) cross the boundary as JSON; the wrappers here
accept either the parsed dict or the JSON text and return parsed dicts.
"""

import json
import os
from pathlib import Path

from . import _core
from ._core import MalformedLine, MissingSourceFile, SlimpartError, escape_bytes, partition, unescape_bytes

__all__ = [
    "MalformedLine",
    "MissingSourceFile",
    "SlimpartError",
    "analyze",
    "analyze_text",
    "build",
    "escape_bytes",
    "partition",
    "plan",
    "unescape_bytes",
]

_BIN = Path(__file__).resolve().parent / "bin"


def _text(doc):
    return doc if isinstance(doc, str) else json.dumps(doc)


def analyze(traces, root_cwd="/", root_exe="", strict=False, format="auto"):
    """Analyze trace files, one per run of the workload.

    Returns a dict with the parsed ``analysis`` document, the text ``report``,
    the event count, loader warnings and elapsed seconds.
    """
    if isinstance(traces, (str, os.PathLike)):
        traces = [traces]
    r = _core.analyze([os.fspath(t) for t in traces], root_cwd, root_exe, strict, format)
    r["analysis"] = json.loads(r["analysis"])
    return r


def analyze_text(runs, root_cwd="/", root_exe="", strict=False):
    if isinstance(runs, str):
        runs = [runs]
    return json.loads(_core.analyze_text(list(runs), root_cwd, root_exe, strict))


def plan(analysis, policy, source):
    """Partition and place. Returns ``(plan, summary)``."""
    doc, summary = _core.plan(_text(analysis), policy, os.fspath(source))
    return json.loads(doc), summary


def build(plan, source, out, stub_binary=None, server_binary=None, force=False):
    """Materialize container trees for ``plan`` under ``out``; returns the size report."""
    if stub_binary is None and (_BIN / "slimpart-stub").exists():
        stub_binary = _BIN / "slimpart-stub"
    if server_binary is None and (_BIN / "slimpart-rpe-server").exists():
        server_binary = _BIN / "slimpart-rpe-server"
    return _core.build(
        _text(plan),
        os.fspath(source),
        os.fspath(out),
        os.fspath(stub_binary or ""),
        os.fspath(server_binary or ""),
        force,
    )
