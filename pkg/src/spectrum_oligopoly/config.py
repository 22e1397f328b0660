"""JSON experiment configuration (``"schema": 1``) and builders for the model objects."""

from __future__ import annotations

import json
from typing import Any

from .errors import ValidationError
from .graphs import ConflictGraph, Partition, build_graph, check_mean_valid, mean_valid_partitions
from .market import MarketParams, PenaltyFamily, family_from_name
from .meanvalid import SameStateModel
from .states import IID, ChannelStateModel, MarkovRandomField, SameEverywhere, SampledIID

SCHEMA_VERSION = 1


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {"schema": SCHEMA_VERSION}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported config schema {cfg.get('schema')!r}; expected {SCHEMA_VERSION}")
    return cfg


def _need(cfg: dict, key: str):
    if key not in cfg:
        raise ValidationError(f"config is missing {key!r}")
    return cfg[key]


def params_from(cfg: dict) -> MarketParams:
    has_m = cfg.get("m") is not None
    has_pmf = cfg.get("demand_pmf") is not None
    if has_m == has_pmf:
        raise ValidationError("config needs exactly one of 'm' or 'demand_pmf'")
    try:
        return MarketParams.create(
            l=int(_need(cfg, "l")),
            n=int(cfg.get("n", 1)),
            v=float(_need(cfg, "v")),
            c=float(cfg.get("c", 0.0)),
            m=int(cfg["m"]) if has_m else None,
            demand_pmf=cfg.get("demand_pmf"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad market parameters: {exc}") from exc


def family_from(cfg: dict, n: int) -> PenaltyFamily:
    return family_from_name(str(cfg.get("penalty_family", "additive-cubic")), n)


def graph_from(cfg: dict) -> ConflictGraph:
    spec = _need(cfg, "graph")
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError("graph must be an object with a 'kind'")
    kw = {k: v for k, v in spec.items() if k != "kind"}
    return build_graph(spec["kind"], **kw)


def partition_from(cfg: dict, G: ConflictGraph) -> Partition:
    """The configured partition, or the first mean-valid one found by search."""
    if cfg.get("partition") is not None:
        part = Partition(tuple(tuple(int(a) for a in s) for s in cfg["partition"]))
        report = check_mean_valid(G, part)
        if not report.valid:
            raise ValidationError(
                f"partition is not mean valid: {report.reason}"
                + (f" (witness {list(report.witness)})" if report.witness else "")
            )
        return part
    found = mean_valid_partitions(G, limit=1)
    if not found:
        raise ValidationError("graph admits no mean-valid partition")
    return found[0]


def same_state_from(cfg: dict) -> SameStateModel:
    spec = cfg.get("state_model")
    if isinstance(spec, dict) and spec.get("kind") == "same":
        return SameStateModel(tuple(spec["q"]))
    return SameStateModel(tuple(_need(cfg, "q")))


def state_model_from(cfg: dict) -> ChannelStateModel:
    spec = _need(cfg, "state_model")
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError("state_model must be an object with a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "iid":
            return IID(float(spec["q"]))
        if kind == "sampled-iid":
            return SampledIID(float(spec["q"]), float(spec["p"]))
        if kind == "mrf":
            return MarkovRandomField(tuple(spec["zeta"]))
        if kind == "same":
            return SameEverywhere(tuple(spec["q"]))
    except KeyError as exc:
        raise ValidationError(f"state_model {kind!r} is missing {exc}") from exc
    raise ValidationError(f"unknown state_model kind {kind!r}")
