"""Deterministic report files: JSON via orjson, CSV via pandas, binary snapshots"""
import os
from typing import Any, Dict, List, Optional

import numpy as np
import orjson
import pandas as pd
from pydantic import BaseModel

from msrd.config import settings
from msrd.services.grid import GridFunction

JSON_OPTIONS = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS
FLOAT_FORMAT = "%.17g"


def _default(obj: Any):
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json", by_alias=True)
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(payload: Any) -> bytes:
    return orjson.dumps(payload, default=_default, option=JSON_OPTIONS)


def header(config: Dict[str, Any]) -> Dict[str, Any]:
    """Provenance block carried by every artifact"""
    return {"tool": settings.PROJECT_NAME, "version": settings.VERSION, "config": config}


class ArtifactWriter:
    """
    Writes a run's artifacts under one directory.

    JSON documents get the provenance block as top-level keys; CSV files get
    it as a leading '#' comment line, so ``pd.read_csv(path, comment="#")``
    reads the table back.
    """

    def __init__(self, out_dir: str, config: Dict[str, Any], formats: str = "both"):
        self.out_dir = out_dir
        self.config = config
        self.formats = formats
        self.written: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    @property
    def wants_json(self) -> bool:
        return self.formats in ("json", "both")

    @property
    def wants_csv(self) -> bool:
        return self.formats in ("csv", "both")

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def json(self, name: str, payload: Dict[str, Any], force: bool = False) -> Optional[str]:
        if not (self.wants_json or force):
            return None
        path = self._path(name)
        document = dict(header(self.config))
        document.update(payload)
        with open(path, "wb") as f:
            f.write(dumps(document))
            f.write(b"\n")
        self.written.append(path)
        return path

    def csv(self, name: str, frame: pd.DataFrame, force: bool = False) -> Optional[str]:
        if not (self.wants_csv or force):
            return None
        path = self._path(name)
        provenance = dumps(header(self.config)).replace(b"\n", b"").decode()
        with open(path, "w", newline="") as f:
            f.write(f"# {provenance}\n")
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self.written.append(path)
        return path

    def binary(self, name: str, data: bytes) -> str:
        path = self._path(name)
        with open(path, "wb") as f:
            f.write(data)
        self.written.append(path)
        return path


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def path_frame(times: np.ndarray, values_c: np.ndarray, values_d: np.ndarray, names=("u_c", "u_d")) -> pd.DataFrame:
    """Long table (time, site, C, D) with 1-based site labels"""
    steps, n = values_c.shape
    return pd.DataFrame({
        "time": np.repeat(np.asarray(times, dtype=float), n),
        "site": np.tile(np.arange(1, n + 1), steps),
        names[0]: np.asarray(values_c, dtype=float).ravel(),
        names[1]: np.asarray(values_d, dtype=float).ravel(),
    })


def grid_frame(f: GridFunction) -> pd.DataFrame:
    """(site, value) rows with 1-based site labels"""
    return pd.DataFrame({"site": np.arange(1, f.n_sites + 1), "value": np.asarray(f.values, dtype=float)})


def bundle_frame(bundle) -> pd.DataFrame:
    """Debit and amplitude fields as (site, field, value) rows"""
    frames = [grid_frame(f).assign(field=name) for name, f in bundle.fields().items()]
    return pd.concat(frames, ignore_index=True)[["site", "field", "value"]]


def replica_frame(report) -> pd.DataFrame:
    rows = []
    for key, results in report.replicas.items():
        n_sites, mu = key.split(",")
        for r in results:
            rows.append({
                "n_sites": int(n_sites),
                "mu": float(mu),
                "index": r.index,
                "seed": r.seed,
                "success": r.success,
                "sup_error": r.sup_error,
                "sup_error_ref": r.sup_error_ref,
                "tau": r.tau,
                "error": r.error or "",
            })
    return pd.DataFrame(rows, columns=[
        "n_sites", "mu", "index", "seed", "success", "sup_error", "sup_error_ref", "tau", "error",
    ])


def plot_frame(report) -> pd.DataFrame:
    """Tidy (n_sites, mu, metric, value) rows for external plotting"""
    rows = []
    for pair in report.pairs:
        base = {"n_sites": pair.n_sites, "mu": pair.mu}
        if pair.median_error is not None:
            rows.append({**base, "metric": "median_error", "value": pair.median_error})
        for name, value in sorted(pair.quantiles.items()):
            rows.append({**base, "metric": name, "value": value})
        for eps, value in sorted(pair.exceedance.items()):
            rows.append({**base, "metric": f"exceed_{eps}", "value": value})
        if pair.limit_error is not None:
            rows.append({**base, "metric": "limit_error", "value": pair.limit_error})
    return pd.DataFrame(rows, columns=["n_sites", "mu", "metric", "value"])


def martingale_frame(stats) -> pd.DataFrame:
    return pd.DataFrame(
        [s.model_dump() for s in stats],
        columns=["identity", "component", "mean", "std_error", "z", "samples", "failures"],
    )


def checks_frame(checks) -> pd.DataFrame:
    return pd.DataFrame(
        [{"name": c.name, "passed": c.passed, "value": c.value, "threshold": c.threshold} for c in checks],
        columns=["name", "passed", "value", "threshold"],
    )
