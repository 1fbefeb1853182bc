"""Trace files on disk.

A run directory holds:

``rounds.jsonl``
    One JSON object per round with the keys of :data:`RECORD_FIELDS`, in that
    order. ``U`` is the list of per-worker completed updates.
``summary.csv``
    Columns :data:`SUMMARY_COLUMNS`; unevaluated metrics are empty cells.
``config.ini``
    Canonical config text (see :mod:`stsyn.config`).
``final_model.json``
    The last global model as a list of floats.
``manifest.json``
    :class:`RunManifest` fields. Only ``started``/``finished`` vary between
    repeated runs of one config.

Floats are written in shortest round-trip form everywhere.
"""
import csv
import datetime
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import metadata

import numpy as np

from .config import config_hash, dump_config, parse_config
from .simulator import RoundRecord, Trace, _first_hit

SCHEMA_VERSION = 1
SUMMARY_COLUMNS = ("j", "T_cum", "C_cum", "loss", "grad_sq_norm", "S_size", "accuracy")
TIMESTAMP_KEYS = ("started", "finished")


def software_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    schema_version: int
    config_hash: str
    seed: int
    software_version: str
    started: str
    finished: str
    rounds: int
    termination: str
    error: str = None
    initial_loss: float = None
    initial_grad_sq_norm: float = None
    initial_accuracy: float = None
    files: list = field(default_factory=list)


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _cell(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write(path, text):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _clean(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def persist_trace(trace, directory, started=None):
    """Write ``trace`` into ``directory`` (created if needed); return the manifest."""
    started = started or _now()
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {directory}: {exc.strerror or exc}") from exc

    lines = [json.dumps({k: _clean(v) for k, v in r.as_dict().items()}) for r in trace.records]
    _write(os.path.join(directory, "rounds.jsonl"), "".join(line + "\n" for line in lines))

    rows = [",".join(SUMMARY_COLUMNS)]
    for r in trace.records:
        rows.append(",".join(_cell(getattr(r, c)) for c in SUMMARY_COLUMNS))
    _write(os.path.join(directory, "summary.csv"), "\n".join(rows) + "\n")

    _write(os.path.join(directory, "config.ini"), dump_config(trace.config))
    _write(os.path.join(directory, "final_model.json"),
           json.dumps([float(x) for x in np.asarray(trace.final_model)]) + "\n")

    files = ["config.ini", "final_model.json", "manifest.json", "rounds.jsonl", "summary.csv"]
    manifest = RunManifest(
        schema_version=SCHEMA_VERSION,
        config_hash=config_hash(trace.config),
        seed=trace.config.seed,
        software_version=software_version(),
        started=started,
        finished=_now(),
        rounds=len(trace.records),
        termination=trace.termination,
        error=trace.error,
        initial_loss=_clean(trace.initial_loss),
        initial_grad_sq_norm=_clean(trace.initial_grad_sq_norm),
        initial_accuracy=_clean(trace.initial_accuracy),
        files=files,
    )
    _write(os.path.join(directory, "manifest.json"), json.dumps(asdict(manifest), indent=2) + "\n")
    return manifest


def load_trace(directory):
    """Rebuild a :class:`Trace` (without model snapshots) from a run directory."""
    with open(os.path.join(directory, "config.ini")) as fh:
        cfg = parse_config(fh.read())
    with open(os.path.join(directory, "manifest.json")) as fh:
        man = json.load(fh)
    records = []
    with open(os.path.join(directory, "rounds.jsonl")) as fh:
        for line in fh:
            if line.strip():
                records.append(RoundRecord(**json.loads(line)))
    with open(os.path.join(directory, "final_model.json")) as fh:
        final = np.asarray(json.load(fh), dtype=np.float64)
    return Trace(
        config=cfg, records=records, final_model=final, termination=man["termination"],
        initial_loss=man.get("initial_loss"), initial_grad_sq_norm=man.get("initial_grad_sq_norm"),
        initial_accuracy=man.get("initial_accuracy"), error=man.get("error"),
    )


def strip_timestamps(manifest_text):
    data = json.loads(manifest_text)
    for k in TIMESTAMP_KEYS:
        data.pop(k, None)
    return data


def emit_plot_data(traces, metric, out, y="loss", targets=None):
    """CSV of cumulative cost to reach each target, one x/y column pair per scheme.

    ``traces`` maps a label to a trace. Row ``i`` corresponds to ``targets[i]``
    for every label, so the columns line up by threshold. ``x`` is cumulative
    time (``metric="time"``) or communication (``"comm"``) at the first record
    meeting the target; ``y`` is the metric value recorded there. Unreached
    targets leave both cells empty. Without ``targets``, 20 evenly spaced
    values between the best and worst observed ``y`` are used.
    """
    if metric not in ("time", "comm"):
        raise ValueError("metric must be 'time' or 'comm'")
    xcol = "T_cum" if metric == "time" else "C_cum"
    if targets is None:
        seen = [getattr(r, y) for t in traces.values() for r in t.records if getattr(r, y) is not None]
        if not seen:
            raise ValueError(f"no {y} values recorded")
        lo, hi = min(seen), max(seen)
        targets = np.linspace(lo, hi, 20) if y == "accuracy" else np.linspace(hi, lo, 20)
    header = ["target"]
    for name in traces:
        header += [f"{name}_{metric}", f"{name}_{y}"]
    rows = []
    for tgt in targets:
        row = [_cell(float(tgt))]
        for t in traces.values():
            rec = _first_hit(t, float(tgt), y)
            row += ["", ""] if rec is None else [_cell(getattr(rec, xcol)), _cell(getattr(rec, y))]
        rows.append(row)
    try:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc
    return out
