"""Policy files, run manifests and report writers.

A policy file is an ``.npz`` archive written with fixed zip timestamps so
identical policies give identical bytes. Metadata (config hash, schema hash,
beta, variant, action names) lives in a JSON member. Manifests carry
timestamps and are written next to outputs, never inside them.
"""
from __future__ import annotations

import csv
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .evaluation import DisparityReport, Evaluation, RiskReport, alpha_tag
from .solvers import PolicyTable

POLICY_FORMAT = "riskrecourse-policy"
POLICY_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class PolicyFileError(ValueError):
    pass


def _zip_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_policy(policy: PolicyTable, path: str | Path, config_hash: str = "",
                schema_hash: str = "", config_name: str = "") -> None:
    meta = {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "config_hash": config_hash,
        "schema_hash": schema_hash,
        "config": config_name,
        "beta": policy.beta,
        "deviation_mode": policy.deviation_mode,
        "variant": policy.variant,
        "horizon": policy.horizon,
        "action_names": list(policy.action_names),
        "extra": policy.meta,
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_member(zf, "meta.json", json.dumps(meta, sort_keys=True).encode())
        _zip_member(zf, "pi.npy", _npy_bytes(policy.pi))
        _zip_member(zf, "values.npy", _npy_bytes(policy.values))


@dataclass
class LoadedPolicy:
    policy: PolicyTable
    config_hash: str
    schema_hash: str
    config: str


def load_policy(path: str | Path) -> LoadedPolicy:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            pi = np.load(io.BytesIO(zf.read("pi.npy")), allow_pickle=False)
            values = np.load(io.BytesIO(zf.read("values.npy")), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise PolicyFileError(f"{path}: not a readable policy file ({exc})") from None
    if meta.get("format") != POLICY_FORMAT or meta.get("version") != POLICY_VERSION:
        raise PolicyFileError(f"{path}: unsupported policy format/version")
    if pi.ndim != 2 or values.shape != (pi.shape[0] + 1, pi.shape[1]):
        raise PolicyFileError(f"{path}: inconsistent array shapes")
    pol = PolicyTable(pi, values, list(meta["action_names"]), float(meta["beta"]),
                      meta["deviation_mode"], meta["variant"], meta.get("extra", {}))
    return LoadedPolicy(pol, meta.get("config_hash", ""), meta.get("schema_hash", ""),
                        meta.get("config", ""))


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    command: str
    config_paths: list[str] = field(default_factory=list)
    config_hashes: list[str] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)
    horizon: int | None = None
    alphas: list[float] = field(default_factory=list)
    n_trials: int | None = None
    seed: int | None = None
    variant: str | None = None
    outputs: list[str] = field(default_factory=list)
    started: str = ""
    finished: str = ""
    extra: dict = field(default_factory=dict)

    def start(self) -> "RunManifest":
        self.started = _now()
        return self

    def write(self, out_path: str | Path) -> Path:
        self.finished = _now()
        path = Path(str(out_path) + ".manifest.json")
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# reports


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def report_columns(alphas) -> list[str]:
    cols = ["rho_H", "mu_cost", "sigma2_cost"]
    for a in alphas:
        cols += [f"var_{alpha_tag(a)}", f"cvar_{alpha_tag(a)}"]
    return cols + ["sparsity", "proximity"]


def report_row(r: RiskReport) -> dict:
    return {c: r.value(c) for c in r.columns()}


def write_report_csv(path: str | Path, rows: list[tuple[dict, RiskReport]], alphas) -> None:
    """One row per (labels, report); ``labels`` are leading key columns."""
    keys: list[str] = []
    for labels, _ in rows:
        for k in labels:
            if k not in keys:
                keys.append(k)
    cols = report_columns(alphas)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + cols)
        for labels, rep in rows:
            vals = report_row(rep)
            w.writerow([_fmt(labels.get(k)) for k in keys] + [_fmt(vals[c]) for c in cols])


def _jsonable(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def report_to_dict(r: RiskReport) -> dict:
    d = asdict(r)
    d["var_at"] = {alpha_tag(a): v for a, v in r.var_at.items()}
    d["cvar_at"] = {alpha_tag(a): v for a, v in r.cvar_at.items()}
    return _jsonable(d)


def evaluation_to_dict(ev: Evaluation, meta: dict) -> dict:
    return {
        "meta": _jsonable(meta),
        "alphas": list(ev.alphas),
        "aggregate": report_to_dict(ev.aggregate),
        "instances": [report_to_dict(r) for r in ev.instances],
        "skipped_positions": ev.skipped,
    }


def disparity_to_dict(d: DisparityReport, meta: dict) -> dict:
    return {
        "meta": _jsonable(meta),
        "groups": [d.group_a, d.group_b],
        "reports": {d.group_a: report_to_dict(d.report_a), d.group_b: report_to_dict(d.report_b)},
        "comparisons": [_jsonable(asdict(c)) for c in d.comparisons],
    }


def write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_disparity_csv(path: str | Path, d: DisparityReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["measure", d.group_a, d.group_b, "delta", "u_statistic", "p_value"])
        for c in d.comparisons:
            w.writerow([c.measure, _fmt(c.value_a), _fmt(c.value_b), _fmt(c.delta),
                        _fmt(c.u_statistic), _fmt(c.p_value)])
