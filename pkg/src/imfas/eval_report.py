"""Partial-fidelity evaluation, multi-seed aggregation and report rendering.

The JSON payload is the source of truth; every ``mean``/``sd`` in it can be
recomputed exactly from the per-dataset correlations it also carries.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .baseline_sh import ShEvalResult
from .errors import ReportError, UndefinedCorrelationError
from .meta_data import MetaDataset
from .model import ImfasParams, predict_partial_batch
from .ranking_loss import spearman_eval
from .softrank import SoftRankConfig
from .stats import mean_sd

DEFAULT_FRACTIONS = (0.1, 0.2, 0.5, 1.0)
CURVE_HEADER = ("fraction", "mean_spearman", "sd", "sh_mean")


def fraction_key(fraction: float) -> str:
    return repr(float(fraction))


def check_fractions(fractions: Iterable[float]) -> List[float]:
    fr = [float(f) for f in fractions]
    if not fr:
        raise ReportError("at least one fidelity fraction is required")
    for f in fr:
        if not 0.0 <= f <= 1.0:
            raise ReportError(f"fraction {f} outside [0, 1]")
    if len(set(fr)) != len(fr):
        raise ReportError(f"duplicate fractions in {fr}")
    return sorted(fr)


@dataclass
class ModelEval:
    per_fraction: Dict[str, Dict[str, float]]  # fraction key -> dataset id -> rho
    excluded: List[str]


def evaluate_model(params: ImfasParams, ds_test: MetaDataset, fractions=DEFAULT_FRACTIONS,
                   cfg: SoftRankConfig = SoftRankConfig()) -> ModelEval:
    """Spearman between predicted scores and final-fidelity performance per dataset.

    Scores are hard-ranked, so this is the rank correlation of the predicted
    order against the ground-truth order. Datasets whose final fidelity is
    all tied are excluded.
    """
    if ds_test.n_datasets == 0:
        raise ReportError("empty test set")
    fractions = check_fractions(fractions)
    final = ds_test.final_performances()
    per: Dict[str, Dict[str, float]] = {}
    excluded = [did for d, did in enumerate(ds_test.dataset_ids) if np.ptp(final[d]) == 0.0]
    for q in fractions:
        scores = predict_partial_batch(params, ds_test.meta_features, ds_test.performances, q, cfg)
        rhos: Dict[str, float] = {}
        for d, did in enumerate(ds_test.dataset_ids):
            if did in excluded:
                continue
            try:
                rhos[did] = spearman_eval(scores[d], final[d])
            except UndefinedCorrelationError:
                # constant prediction: correlation undefined, reported as missing
                continue
        per[fraction_key(q)] = rhos
    if not any(per.values()):
        raise ReportError("no test dataset produced a defined correlation")
    return ModelEval(per, excluded)


@dataclass
class SeedResult:
    seed: int
    model: ModelEval
    sh: ShEvalResult
    train: Dict[str, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    name: str
    fractions: List[float]
    seeds: List[int]
    per_seed: Dict[str, dict]
    aggregate: Dict[str, Dict[str, float]]
    sh: Dict[str, object]
    excluded_datasets: Dict[str, List[str]]
    config_hash: str
    metadata: Dict[str, object] = field(default_factory=dict)

    def model_mean(self, fraction: float) -> float:
        return self.aggregate[fraction_key(fraction)]["mean"]

    def seed_model_mean(self, seed, fraction: float) -> float:
        return self.per_seed[str(seed)]["model"][fraction_key(fraction)]["mean"]

    def seed_sh_mean(self, seed) -> float:
        return self.per_seed[str(seed)]["sh"]["mean"]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "fractions": list(self.fractions),
            "seeds": list(self.seeds),
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "sh": self.sh,
            "excluded_datasets": self.excluded_datasets,
            "config_hash": self.config_hash,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        try:
            return cls(d["name"], list(d["fractions"]), list(d["seeds"]), d["per_seed"], d["aggregate"],
                       d["sh"], d["excluded_datasets"], d["config_hash"], d.get("metadata", {}))
        except KeyError as exc:
            raise ReportError(f"report payload lacks key {exc}") from None


def build_report(name: str, fractions: Sequence[float], results: Sequence[SeedResult],
                 config_hash: str, metadata: dict | None = None) -> EvalReport:
    if not results:
        raise ReportError("no seed results to aggregate")
    fractions = check_fractions(fractions)
    per_seed: Dict[str, dict] = {}
    excluded: Dict[str, List[str]] = {}
    for r in results:
        model_block = {}
        for q in fractions:
            rhos = r.model.per_fraction[fraction_key(q)]
            m, _ = mean_sd(rhos.values())
            model_block[fraction_key(q)] = {"mean": m, "per_dataset": dict(rhos)}
        per_seed[str(r.seed)] = {
            "model": model_block,
            "sh": {"mean": r.sh.mean, "per_dataset": dict(r.sh.per_dataset)},
            "train": dict(r.train),
        }
        excluded[str(r.seed)] = sorted(set(r.model.excluded) | set(r.sh.excluded))
    if len(per_seed) != len(results):
        raise ReportError("duplicate seeds")
    aggregate = {}
    for q in fractions:
        m, s = mean_sd(per_seed[str(r.seed)]["model"][fraction_key(q)]["mean"] for r in results)
        aggregate[fraction_key(q)] = {"mean": m, "sd": s}
    sh_m, sh_s = mean_sd(per_seed[str(r.seed)]["sh"]["mean"] for r in results)
    sh = {"mean": sh_m, "sd": sh_s, "schedule": results[0].sh.schedule}
    return EvalReport(name, fractions, [r.seed for r in results], per_seed, aggregate, sh,
                      excluded, config_hash, dict(metadata or {}))


def recompute_aggregate(payload: dict) -> dict:
    """Aggregate statistics rebuilt from per-dataset values of a JSON payload."""
    seeds = [str(s) for s in payload["seeds"]]
    out = {}
    for key in (fraction_key(q) for q in payload["fractions"]):
        seed_means = [mean_sd(payload["per_seed"][s]["model"][key]["per_dataset"].values())[0] for s in seeds]
        m, sd = mean_sd(seed_means)
        out[key] = {"mean": m, "sd": sd}
    sh_means = [mean_sd(payload["per_seed"][s]["sh"]["per_dataset"].values())[0] for s in seeds]
    m, sd = mean_sd(sh_means)
    out["sh"] = {"mean": m, "sd": sd}
    return out


def _percent(q: float) -> str:
    return f"{q * 100:g}%"


def _cell(mean: float, sd: float) -> str:
    return f"{mean:.3f} ± {sd:.3f}"


def render_markdown(reports: Sequence[EvalReport]) -> str:
    fractions = reports[0].fractions
    for r in reports[1:]:
        if r.fractions != fractions:
            raise ReportError("all rows of one table must share the same fractions")
    lines = [
        "| Dataset | " + " | ".join(_percent(q) for q in fractions) + " | SH |",
        "|:--" + "|:-:" * (len(fractions) + 1) + "|",
    ]
    for r in reports:
        sh_mean = float(r.sh["mean"])
        cells = []
        bolded = False
        for q in fractions:
            agg = r.aggregate[fraction_key(q)]
            text = _cell(agg["mean"], agg["sd"])
            if not bolded and agg["mean"] > sh_mean:
                text = f"**{text}**"
                bolded = True
            cells.append(text)
        cells.append(_cell(sh_mean, float(r.sh["sd"])))
        lines.append(f"| {r.name} | " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("Cells are mean ± sd over seeds of the mean test Spearman correlation. "
                 "Bold marks the first fraction whose mean exceeds the SH mean.")
    schedules = sorted({str(r.sh.get("schedule", "")) for r in reports} - {""})
    for s in schedules:
        lines.append(f"SH schedule: {s}.")
    return "\n".join(lines) + "\n"


def render_report(report, format: str = "markdown") -> str:
    """Render one report (or a list of reports, one table row each)."""
    reports = [report] if isinstance(report, EvalReport) else list(report)
    if not reports:
        raise ReportError("nothing to render")
    if format == "json":
        if len(reports) != 1:
            raise ReportError("JSON rendering takes a single report")
        return json.dumps(reports[0].to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if format == "markdown":
        return render_markdown(reports)
    raise ReportError(f"unknown format {format!r}")


def parse_report(text: str) -> EvalReport:
    return EvalReport.from_dict(json.loads(text))


def export_fraction_curve(report: EvalReport) -> str:
    """CSV ``fraction,mean_spearman,sd,sh_mean`` (one row per evaluated fraction)."""
    if not report.fractions:
        raise ReportError("report has no evaluated fractions")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for q in report.fractions:
        agg = report.aggregate[fraction_key(q)]
        w.writerow((repr(float(q)), repr(float(agg["mean"])), repr(float(agg["sd"])),
                    repr(float(report.sh["mean"]))))
    return buf.getvalue()


def parse_fraction_curve(text: str) -> List[Dict[str, float]]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CURVE_HEADER:
        raise ReportError(f"fraction curve header must be {','.join(CURVE_HEADER)}")
    return [{k: float(v) for k, v in row.items()} for row in reader]
