"""Command-line entry points: ``ugg infer|synth|eval|ablate|gradcheck``.

Every subcommand accepts ``--config job.json``; command-line flags override
the file.  Errors are reported on stderr as one JSON object with a
machine-readable ``error`` code, and map to exit codes by category.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as uio
from .ablation import DEFAULT_FLAG_SETS, run_ablation
from .autodiff import LossConfig, UnsupervisedNoLoss, backward, finite_difference_check
from .core import (PRESETS, InvalidConfig, Labels, NeighborhoodPolicy, ProblemInstance, UggConfig,
                   UggError, ValidationError, build_graph, validate_instance)
from .energy import InstanceTooLarge
from .inference import run_inference
from .metrics import ranking_report
from .synth import InvalidParams, Scenario, ScenarioParams, generate

COMMANDS = ("infer", "synth", "eval", "ablate", "gradcheck")


class JobConfigError(InvalidConfig):
    code = "JOB_CONFIG"


@dataclass
class JobConfig:
    gallery_sim: Optional[str] = None
    tracklet_sim: Optional[str] = None
    cannot_link: Optional[str] = None
    true_identity: Optional[str] = None
    scenario: Optional[dict] = None
    num_seeds: int = 1
    ugg: UggConfig = field(default_factory=UggConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ablation_flags: Optional[List[str]] = None
    labeled: Optional[List[int]] = None
    fd_step: float = 1e-5
    output_dir: str = "ugg_out"
    emit_trace: bool = False
    emit_plots: bool = False

    @property
    def has_matrix_inputs(self) -> bool:
        return any(p is not None for p in (self.gallery_sim, self.tracklet_sim, self.cannot_link))

    def check(self, command: str) -> None:
        if self.has_matrix_inputs and self.scenario is not None:
            raise JobConfigError("give either matrix inputs or a scenario, not both")
        if self.has_matrix_inputs and (self.gallery_sim is None or self.tracklet_sim is None):
            raise JobConfigError("matrix inputs need gallery_sim and tracklet_sim")
        if not self.has_matrix_inputs and self.scenario is None:
            if command == "infer":
                raise JobConfigError("infer needs matrix inputs or a scenario")
            self.scenario = {}
        if self.num_seeds < 1:
            raise JobConfigError("num_seeds must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> JobConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise JobConfigError(f"unknown job config keys: {sorted(unknown)}")
        d = dict(d)
        if "ugg" in d:
            d["ugg"] = UggConfig.from_dict(d["ugg"])
        if "loss" in d:
            d["loss"] = LossConfig.from_dict(d["loss"])
        if d.get("scenario") is not None:
            ScenarioParams.from_dict(d["scenario"])
        return cls(**d)


def _load_scenarios(job: JobConfig) -> List[Scenario]:
    if job.scenario is not None:
        params = ScenarioParams.from_dict(job.scenario)
        return [generate(ScenarioParams.from_dict({**params.to_dict(), "seed": params.seed + s}))
                for s in range(job.num_seeds)]
    s_gt = uio.read_matrix(job.gallery_sim)
    c, n = s_gt.shape
    s_tt = uio.read_matrix(job.tracklet_sim, (n, n))
    cl = uio.read_matrix(job.cannot_link, (n, n)) if job.cannot_link else np.zeros((n, n))
    instance = validate_instance(ProblemInstance(s_gt, s_tt, cl))
    truth = uio.read_identities(job.true_identity, n) if job.true_identity else None
    if truth is not None and np.any(truth >= c):
        raise ValidationError(f"true identity outside [0, {c})")
    return [Scenario(None, instance, truth, ())]


def _trace_json(trace, graph) -> dict:
    return {
        "edges": [list(e) for e in graph.directed_edges],
        "negative_gates": trace[0].edge_values(graph, "negative").tolist(),
        "iterations": [{"iteration": s.iteration,
                        "node_beliefs": s.node_beliefs.tolist(),
                        "positive_gates": s.edge_values(graph).tolist()} for s in trace],
    }


def _emit_inference(out: Path, scenario: Scenario, job: JobConfig) -> dict:
    cfg = job.ugg
    graph = build_graph(scenario.instance, cfg)
    refined, state, trace = run_inference(scenario.instance, cfg, graph,
                                          keep_trace=job.emit_trace or job.emit_plots)
    uio.write_matrix(out / "refined_sim.txt", refined)
    written = {"refined_sim": "refined_sim.txt"}
    if job.emit_trace:
        uio.write_json(out / "trace.json", _trace_json(trace, graph))
        written["trace"] = "trace.json"
    truth = scenario.true_identity
    if truth is not None:
        reports = {"FACE": ranking_report(scenario.instance.gallery_tracklet_sim, truth),
                   "UGG": ranking_report(refined, truth)}
        uio.emit_report(reports, "json", out / "report.json")
        uio.emit_report(reports, "tsv", out / "report.tsv")
        written["report"] = "report.json"
    if job.emit_plots:
        from .metrics import topk_accuracy
        from .plots import histogram_svg, line_svg
        its = [s.iteration for s in trace]
        if truth is not None:
            ys = [topk_accuracy(s.node_beliefs, truth, 1) for s in trace]
            label = "rank-1 accuracy"
        else:
            ys = [float(s.node_beliefs.max(axis=0).mean()) for s in trace]
            label = "mean max belief"
        uio.atomic_write_text(out / "metric_vs_iteration.svg", line_svg(its, ys, "iteration", label))
        uio.atomic_write_text(out / "gate_histogram.svg",
                              histogram_svg(state.edge_values(graph), xlabel="positive gate probability"))
        written["plots"] = ["metric_vs_iteration.svg", "gate_histogram.svg"]
    return written


def run_job(job: JobConfig, command: str) -> int:
    """Run one job; artifacts land in ``job.output_dir``.  Returns 0 on success."""
    if command not in COMMANDS:
        raise JobConfigError(f"unknown command {command!r}")
    job.check(command)
    out = Path(job.output_dir)
    scenarios = _load_scenarios(job)
    manifest = {"command": command, "ugg": job.ugg.to_dict()}

    if command == "infer":
        manifest["artifacts"] = _emit_inference(out, scenarios[0], job)
    elif command == "synth":
        names = []
        for s in scenarios:
            sub = out / f"seed{s.params.seed}" if len(scenarios) > 1 else out
            uio.write_matrix(sub / "gallery_sim.txt", s.instance.gallery_tracklet_sim)
            uio.write_matrix(sub / "tracklet_sim.txt", s.instance.tracklet_tracklet_sim)
            uio.write_matrix(sub / "cannot_link.txt", s.instance.cannot_link)
            uio.write_matrix(sub / "true_identity.txt", s.true_identity)
            uio.write_json(sub / "scenario.json", {"params": s.params.to_dict(),
                                                   "quality": [q.value for q in s.quality]})
            names.append(str(sub.relative_to(out)))
        manifest["scenarios"] = names
    elif command == "eval":
        s = scenarios[0]
        if s.true_identity is None:
            raise JobConfigError("eval needs true identities")
        manifest["artifacts"] = _emit_inference(out, s, job)
    elif command == "ablate":
        if any(s.true_identity is None for s in scenarios):
            raise JobConfigError("ablate needs true identities")
        flags = DEFAULT_FLAG_SETS if job.ablation_flags is None else job.ablation_flags
        rows = run_ablation(scenarios, job.ugg, flags)
        means = {r.name: r.mean for r in rows}
        uio.write_json(out / "ablation.json", {
            "rows": [{"name": r.name, "config": r.config.to_dict(), "mean": r.mean.to_dict(),
                      "per_seed": [p.to_dict() for p in r.per_seed]} for r in rows]})
        uio.emit_report(means, "tsv", out / "ablation.tsv")
        if job.emit_plots:
            uio.emit_report(means, "svg", out / "ablation_rank1.svg")
    elif command == "gradcheck":
        s = scenarios[0]
        if s.true_identity is None:
            raise JobConfigError("gradcheck needs true identities for labels")
        labels = Labels.from_identities(s.true_identity, job.labeled)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnsupervisedNoLoss)
            value, grads = backward(s.instance, job.ugg, job.loss, labels)
            fd = finite_difference_check(s.instance, job.ugg, job.loss, labels, job.fd_step)
        uio.write_json(out / "gradcheck.json", {
            "loss": value, "d_temp_gallery": grads.d_temp_gallery,
            "d_temp_tracklet": grads.d_temp_tracklet, "finite_difference": fd})
        uio.write_matrix(out / "d_gallery_sim.txt", grads.d_gallery_sim)
        uio.write_matrix(out / "d_tracklet_sim.txt", grads.d_tracklet_sim)
    uio.write_json(out / "manifest.json", manifest)
    return 0


EXIT_CODES = (
    (JobConfigError, 2),
    (InvalidConfig, 2),
    (InvalidParams, 2),
    (ValidationError, 3),
    (uio.ParseError, 4),
    (uio.ShapeMismatch, 4),
    (uio.IoError, 4),
    (InstanceTooLarge, 5),
)


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _neighborhood(text: str) -> NeighborhoodPolicy:
    kind, _, arg = text.partition(":")
    if kind == "top_k":
        return NeighborhoodPolicy.top_k(int(arg))
    if kind == "threshold":
        return NeighborhoodPolicy.threshold(float(arg))
    return NeighborhoodPolicy(kind)


def _scenario_override(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, json.loads(value)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ugg", description="Uncertainty-gated graph refinement of "
                                "gallery-to-tracklet similarities.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON job config; flags override it")
        sp.add_argument("--gallery-sim")
        sp.add_argument("--tracklet-sim")
        sp.add_argument("--cannot-link")
        sp.add_argument("--true-identity")
        sp.add_argument("--seed", type=int, help="scenario seed")
        sp.add_argument("--scenario-param", action="append", type=_scenario_override, default=[],
                        metavar="KEY=VALUE")
        sp.add_argument("--num-seeds", type=int)
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--temp-gallery", type=float)
        sp.add_argument("--temp-tracklet", type=float)
        sp.add_argument("--alpha-positive", type=float)
        sp.add_argument("--alpha-negative", type=float)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--neighborhood", type=_neighborhood, help="full | top_k:K | threshold:TAU")
        sp.add_argument("--gate-mode", choices=["fixed_gates", "adaptive_gates"])
        sp.add_argument("--update-semantics", choices=["paper_faithful", "derivation_exact"])
        sp.add_argument("--mask-cannot-link", action="store_true", default=None)
        sp.add_argument("--pair-weight", type=float)
        sp.add_argument("--pair-link", choices=["logistic", "affine_clamp"])
        sp.add_argument("--labeled", type=int, nargs="*")
        sp.add_argument("--flags", action="append", help="ablation flag set, e.g. PGcl+NG+aG")
        sp.add_argument("--fd-step", type=float)
        sp.add_argument("--output-dir", "-o")
        sp.add_argument("--emit-trace", action="store_true", default=None)
        sp.add_argument("--emit-plots", action="store_true", default=None)
    return p


def job_from_args(args: argparse.Namespace) -> JobConfig:
    raw = uio.read_json(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise JobConfigError("job config must be a JSON object")
    job = JobConfig.from_dict(raw)
    for attr in ("gallery_sim", "tracklet_sim", "cannot_link", "true_identity", "num_seeds",
                 "labeled", "fd_step", "output_dir", "emit_trace", "emit_plots"):
        v = getattr(args, attr)
        if v is not None:
            setattr(job, attr, v)
    if args.flags is not None:
        job.ablation_flags = args.flags
    if args.seed is not None or args.scenario_param:
        scen = dict(job.scenario or {})
        if args.seed is not None:
            scen["seed"] = args.seed
        scen.update(dict(args.scenario_param))
        job.scenario = scen

    ugg = job.ugg.to_dict() if args.preset is None else UggConfig.from_dict(
        {"preset": args.preset}).to_dict()
    for attr in ("temp_gallery", "temp_tracklet", "alpha_positive", "alpha_negative",
                 "iterations", "gate_mode", "update_semantics"):
        v = getattr(args, attr)
        if v is not None:
            ugg[attr] = v
    if args.neighborhood is not None:
        ugg["neighborhood_policy"] = args.neighborhood.to_dict()
    if args.mask_cannot_link:
        ugg["cannot_link_masks_positive"] = True
    job.ugg = UggConfig.from_dict(ugg)

    loss = job.loss.to_dict()
    if args.pair_weight is not None:
        loss["pair_weight"] = args.pair_weight
    if args.pair_link is not None:
        loss["pair_link"] = args.pair_link
    job.loss = LossConfig.from_dict(loss)
    return job


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = job_from_args(args)
        return run_job(job, args.command)
    except (UggError, TypeError, ValueError) as exc:
        code = getattr(exc, "code", "INVALID_ARGUMENT")
        print(json.dumps({"error": code, "message": str(exc)}), file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
