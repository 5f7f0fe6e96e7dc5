"""Simulation-study harness: rejection-rate tables over a grid of cells.

A cell fixes the data-generating model and parameters, the hypothesized
model, the statistic family, the bootstrap flavor, and the panel size; the
harness repeats data generation plus a full bootstrap test R times and
reports the rejection percentage at the chosen level for each estimator.

Every replication derives its seeds from (master seed, cell key, rep
index), so results do not depend on execution order, completed work can be
checkpointed per cell and resumed bit-identically, and cells can be edited
without disturbing the seeds of the others.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gof import StatisticSpec, bootstrap_suite
from .pickands import EstimatorKind
from .simulate import SimConfig, simulate_model
from .types import ModelParams, SiteSet, ValidationError, model_kind, params_from_dict


@dataclass(frozen=True)
class StudyCell:
    name: str
    data_params: ModelParams
    hyp_model: str
    statistic: str                      # "global" | "pairwise_sum"
    bootstrap: str                      # "one_level" | "two_level"
    estimators: tuple[EstimatorKind, ...]
    n: int
    n_bootstrap: int
    replications: int
    m: int | None = None
    gamma: float | None = None
    min_dist: float = 0.0

    def specs(self) -> list[StatisticSpec]:
        null_xi = "simulated" if (self.bootstrap == "two_level" and self.statistic == "global") \
            else "closed_form"
        return [StatisticSpec(kind=self.statistic, estimator=e, null_xi=null_xi,
                              gamma=self.gamma, min_dist=self.min_dist)
                for e in self.estimators]

    def key(self) -> str:
        payload = {
            "data": self.data_params.to_dict(), "hyp": self.hyp_model,
            "stat": self.statistic, "boot": self.bootstrap, "n": self.n,
            "N": self.n_bootstrap, "m": self.m, "gamma": self.gamma,
            "min_dist": self.min_dist,
            "estimators": [e.value for e in self.estimators],
        }
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
        return f"{self.name}-{digest}" if self.name else digest


def cell_from_dict(payload: dict, defaults: dict) -> StudyCell:
    data_params = payload.get("data_params")
    if isinstance(data_params, list):
        kind = payload["data_model"]
        if kind == "smith":
            data_params = {"model": "smith", "s11": data_params[0],
                           "s12": data_params[1], "s22": data_params[2]}
        elif kind == "schlather":
            data_params = {"model": "schlather", "c": data_params[0],
                           "phi": data_params[1], "r": data_params[2]}
        else:
            raise ValidationError(f"unknown data model {kind!r}")
    return StudyCell(
        name=str(payload.get("name", "")),
        data_params=params_from_dict(data_params),
        hyp_model=payload["hyp_model"],
        statistic=payload.get("statistic", "global"),
        bootstrap=payload.get("bootstrap", "one_level"),
        estimators=tuple(EstimatorKind(e) for e in payload.get("estimators", ["P", "HT", "CFG"])),
        n=int(payload["n"]),
        n_bootstrap=int(payload.get("n_bootstrap", defaults.get("n_bootstrap", 200))),
        replications=int(payload.get("replications", defaults.get("replications", 200))),
        m=payload.get("m"),
        gamma=payload.get("gamma"),
        min_dist=float(payload.get("min_dist", 0.0)),
    )


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 63-bit seed from the master seed and a role tuple."""
    text = json.dumps([int(master_seed), *[str(p) for p in parts]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def run_replication(cell: StudyCell, sites: SiteSet, master_seed: int, rep: int) -> dict:
    data_seed = derive_seed(master_seed, cell.key(), rep, "data")
    boot_seed = derive_seed(master_seed, cell.key(), rep, "boot")
    panel = simulate_model(sites, cell.data_params, cell.n, SimConfig(seed=data_seed))
    reports = bootstrap_suite(panel, cell.hyp_model, sites, cell.specs(),
                              N=cell.n_bootstrap, seed=boot_seed, m_override=cell.m)
    return {
        "rep": rep,
        "p_values": {r.spec.estimator.value: r.p_value for r in reports},
        "n_failed": reports[0].n_failed,
    }


def _replication_star(args):
    cell, sites, master_seed, rep = args
    try:
        return rep, run_replication(cell, sites, master_seed, rep), None
    except Exception as exc:  # cell must not kill the whole study
        return rep, None, f"{type(exc).__name__}: {exc}"


def _checkpoint_path(out_dir: Path, cell: StudyCell) -> Path:
    return out_dir / "cells" / f"{cell.key()}.json"


def run_cell(cell: StudyCell, sites: SiteSet, master_seed: int, out_dir: Path,
             workers: int = 1, alpha: float = 0.05) -> dict:
    """Run (or resume) one cell and return its summary row data."""
    out_dir = Path(out_dir)
    ckpt = _checkpoint_path(out_dir, cell)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    done: dict[int, dict] = {}
    failed: dict[int, str] = {}
    if ckpt.exists():
        payload = json.loads(ckpt.read_text())
        done = {int(r["rep"]): r for r in payload.get("replications", [])}
        failed = {int(k): v for k, v in payload.get("failed", {}).items()}

    # failed reps are retried on resume; seeds are rep-keyed so retries are
    # exact reruns and the checkpoint bytes stay order-independent
    pending = [rep for rep in range(cell.replications) if rep not in done]
    if pending:
        args = [(cell, sites, master_seed, rep) for rep in pending]

        def _store(rep, result, error):
            if result is not None:
                done[rep] = result
                failed.pop(rep, None)
            else:
                failed[rep] = error
            ckpt.write_text(json.dumps({
                "cell": cell.key(), "master_seed": master_seed,
                "replications": [done[k] for k in sorted(done)],
                "failed": {str(k): failed[k] for k in sorted(failed)},
            }, indent=1))

        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_replication_star, a) for a in args]
                for fut in as_completed(futures):
                    _store(*fut.result())
        else:
            for a in args:
                _store(*_replication_star(a))

    rows = []
    reps = [done[k] for k in sorted(done)]
    errors = [f"rep {k}: {failed[k]}" for k in sorted(failed)]
    for est in cell.estimators:
        p = np.array([r["p_values"][est.value] for r in reps])
        reject = float(np.mean(p <= alpha)) if p.size else float("nan")
        se = float(np.sqrt(reject * (1.0 - reject) / p.size)) if p.size else float("nan")
        rows.append({
            "cell": cell.name or cell.key(), "data_model": model_kind(cell.data_params),
            "data_params": json.dumps(cell.data_params.to_dict()),
            "hyp_model": cell.hyp_model, "statistic": cell.statistic,
            "bootstrap": cell.bootstrap, "estimator": est.value,
            "d": sites.d, "n": cell.n, "N": cell.n_bootstrap,
            "R_completed": int(p.size), "R_requested": cell.replications,
            "alpha": alpha, "rejection_pct": 100.0 * reject,
            "binomial_se_pct": 100.0 * se, "n_errors": len(errors),
        })
    return {"rows": rows, "errors": errors}


def sites_from_config(payload: dict, base_dir: Path) -> SiteSet:
    from . import io as msio

    kind = payload.get("kind", "csv")
    if kind == "csv":
        return msio.read_sites(base_dir / payload["path"])
    if kind == "random":
        rng = np.random.default_rng(int(payload.get("seed", 0)))
        d = int(payload["d"])
        low = float(payload.get("low", 0.0))
        high = float(payload.get("high", 10.0))
        return SiteSet(rng.uniform(low, high, size=(d, 2)))
    raise ValidationError(f"unknown sites kind {kind!r}")


_CSV_FIELDS = ["cell", "data_model", "data_params", "hyp_model", "statistic", "bootstrap",
               "estimator", "d", "n", "N", "R_completed", "R_requested", "alpha",
               "rejection_pct", "binomial_se_pct", "n_errors"]


def run_study(config: dict, out_dir: str | Path, master_seed: int,
              workers: int = 1, base_dir: str | Path = ".") -> Path:
    """Run every cell of a study config; write and return the results CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sites = sites_from_config(config["sites"], Path(base_dir))
    defaults = {k: config[k] for k in ("n_bootstrap", "replications") if k in config}
    alpha = float(config.get("alpha", 0.05))
    cells = [cell_from_dict(c, defaults) for c in config["cells"]]
    if not cells:
        raise ValidationError("study config has no cells")

    all_rows = []
    for cell in cells:
        summary = run_cell(cell, sites, master_seed, out_dir, workers=workers, alpha=alpha)
        all_rows.extend(summary["rows"])

    results = out_dir / "study_results.csv"
    with results.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(all_rows)
    return results
