"""End-to-end analysis: ingest, dissect, sanitize, classify, enrich, report.

Report writing is deterministic: identical inputs and configuration produce
byte-identical output bundles, which the test suite relies on.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import metrics
from .capture import REQUEST, CaptureMeta, direction, read_capture
from .classify import (
    ALL_FILTERS,
    FILTER_FAMILIES,
    INDUSTRIAL,
    ClassifiedPacket,
    HoneypotSets,
    RdnsTable,
    ScannerRegistry,
    classify,
    default_scanner_registry,
    filter_report,
    label_under,
)
from .dissectors import dissect
from .enrich import (
    IxpTopology,
    LpmTable,
    UNKNOWN_TRANSITION,
    TRANSITIONS,
    is_domestic,
    load_asn_table,
    load_geo_table,
    load_scan_snapshot,
    protocols_per_asn,
    scan_overlap,
    transition,
)
from .ports import default_registry
from .sanitize import DpiCatalog, count_port_only_by_vantage, default_catalog, sanitize

log = logging.getLogger(__name__)

REPORT_FILES = (
    "sanitize.csv",
    "filters.csv",
    "transitions.csv",
    "domestic.csv",
    "daily.tsv",
    "stability.csv",
    "asn_protocols.csv",
    "scan_overlap.csv",
)


class ConfigError(ValueError):
    """Configuration file missing, unreadable or referencing missing inputs."""


@dataclass
class CaptureSource:
    path: Path
    meta: CaptureMeta


@dataclass
class PipelineConfig:
    captures: list[CaptureSource]
    scanner_registry: Path | None = None
    hp_all: Path | None = None
    hp_ics: Path | None = None
    rdns: Path | None = None
    asn_table: Path | None = None
    cone: Path | None = None
    geo: Path | None = None
    scan_snapshot: Path | None = None
    dpi_catalog: Path | None = None
    filters: str = "all"
    stability_label: str = INDUSTRIAL
    tag_members: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        base = path.parent

        def resolve(key: str) -> Path | None:
            value = raw.get(key)
            if value is None:
                return None
            resolved = base / value
            if not resolved.exists():
                raise ConfigError(f"config {path}: {key} file not found: {resolved}")
            return resolved

        captures = []
        for entry in raw.get("captures", []):
            pcap = base / entry["path"]
            if not pcap.exists():
                raise ConfigError(f"config {path}: capture file not found: {pcap}")
            captures.append(
                CaptureSource(
                    path=pcap,
                    meta=CaptureMeta(
                        vantage=entry.get("vantage", "vp0"),
                        sample_interval=int(entry.get("sample_interval", 1)),
                        snap_len=int(entry.get("snap_len", 65535)),
                    ),
                )
            )
        filters = raw.get("filters", "all")
        if filters not in FILTER_FAMILIES:
            raise ConfigError(f"config {path}: unknown filter family {filters!r}")
        return cls(
            captures=captures,
            scanner_registry=resolve("scanner_registry"),
            hp_all=resolve("hp_all"),
            hp_ics=resolve("hp_ics"),
            rdns=resolve("rdns"),
            asn_table=resolve("asn_table"),
            cone=resolve("cone"),
            geo=resolve("geo"),
            scan_snapshot=resolve("scan_snapshot"),
            dpi_catalog=resolve("dpi_catalog"),
            filters=filters,
            stability_label=raw.get("stability_label", INDUSTRIAL),
            tag_members={k: int(v) for k, v in raw.get("tag_members", {}).items()},
        )


@dataclass
class LoadedInputs:
    scanner_registry: ScannerRegistry
    honeypots: HoneypotSets
    rdns: RdnsTable
    asn_table: LpmTable | None
    topology: IxpTopology
    geo: LpmTable | None
    scan_snapshot: dict
    dpi_catalog: DpiCatalog


def load_inputs(config: PipelineConfig) -> LoadedInputs:
    try:
        scanner_registry = (
            ScannerRegistry.from_json(config.scanner_registry)
            if config.scanner_registry
            else default_scanner_registry()
        )
        if config.hp_all and config.hp_ics:
            honeypots = HoneypotSets.from_files(config.hp_all, config.hp_ics)
        elif config.hp_all or config.hp_ics:
            raise ConfigError("hp_all and hp_ics must be configured together")
        else:
            honeypots = HoneypotSets.empty()
        rdns = RdnsTable.from_csv(config.rdns) if config.rdns else RdnsTable.empty()
        asn_table = load_asn_table(config.asn_table) if config.asn_table else None
        topology = (
            IxpTopology.from_json(config.cone, config.tag_members)
            if config.cone
            else IxpTopology.empty()
        )
        geo = load_geo_table(config.geo) if config.geo else None
        snapshot = load_scan_snapshot(config.scan_snapshot) if config.scan_snapshot else {}
        catalog = DpiCatalog.from_json(config.dpi_catalog) if config.dpi_catalog else default_catalog()
    except ConfigError:
        raise
    except (OSError, ValueError) as exc:
        raise ConfigError(f"failed to load pipeline inputs: {exc}") from exc
    return LoadedInputs(
        scanner_registry=scanner_registry,
        honeypots=honeypots,
        rdns=rdns,
        asn_table=asn_table,
        topology=topology,
        geo=geo,
        scan_snapshot=snapshot,
        dpi_catalog=catalog,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _pct(numerator: int, denominator: int) -> float | None:
    if denominator == 0:
        return None
    return round(100.0 * numerator / denominator, 1)


def run_analyze(config: PipelineConfig, out_dir) -> dict:
    """Run the whole pipeline and write the report bundle; returns a summary."""
    inputs = load_inputs(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    port_registry = default_registry()
    active = FILTER_FAMILIES[config.filters]

    records = []
    reader_summaries = []
    for source in config.captures:
        reader = read_capture(source.path, source.meta)
        records.extend(reader)
        reader_summaries.append(
            {
                "path": str(source.path),
                "vantage": source.meta.vantage,
                "frames_read": reader.frames_read,
                "records": reader.records_yielded,
                "skipped": dict(sorted(reader.skipped.items())),
            }
        )
    sample_intervals = {s.meta.vantage: s.meta.sample_interval for s in config.captures}

    dissect_stats: Counter[str] = Counter()
    pairs = []
    for record in records:
        dissection = dissect(record, port_registry, dissect_stats)
        if dissection is not None:
            pairs.append((record, dissection))

    rank = metrics.protocol_rank(d for _, d in pairs)

    result = sanitize(pairs, inputs.dpi_catalog, port_registry)
    for vantage, count in count_port_only_by_vantage(records, port_registry).items():
        result.report.vantage(vantage).port_only = count

    classified_rows = []
    daily_entries = []
    stability_rows = []
    request_asn_rows = []
    transition_counts: Counter[tuple[str, str, str]] = Counter()
    domestic_counts: Counter[tuple[str, str, str]] = Counter()
    passive_hosts: dict[str, dict[str, set[str]]] = {}

    for record, dissection in result.kept:
        packet_direction = direction(record, port_registry)
        traffic = classify(record, inputs.scanner_registry, inputs.rdns, inputs.honeypots,
                           ALL_FILTERS)
        label = label_under(traffic.reasons, active)
        protocol = dissection.protocol
        classified_rows.append(ClassifiedPacket(protocol, packet_direction, traffic.reasons))
        daily_entries.append((record.vantage, protocol, record.ts, label == INDUSTRIAL))
        if config.stability_label == "all" or label == config.stability_label:
            stability_rows.append((record.dst_ip, record.day))
        hosts = passive_hosts.setdefault(protocol, {"source": set(), "destination": set()})
        hosts["source"].add(record.src_ip)
        hosts["destination"].add(record.dst_ip)

        src_asn = inputs.asn_table.lookup(record.src_ip) if inputs.asn_table else None
        dst_asn = inputs.asn_table.lookup(record.dst_ip) if inputs.asn_table else None
        if packet_direction == REQUEST and src_asn is not None:
            request_asn_rows.append((src_asn, protocol))
        ingress = inputs.topology.resolve_member(src_asn, tag=f"{record.vantage}:in")
        egress = inputs.topology.resolve_member(dst_asn, tag=f"{record.vantage}:out")
        transition_counts[(protocol, label, transition(src_asn, dst_asn, ingress, egress,
                                                       inputs.topology))] += 1
        if inputs.geo is not None:
            domestic = is_domestic(record.src_ip, record.dst_ip, inputs.geo)
        else:
            domestic = None
        status = "domestic" if domestic else ("foreign" if domestic is False else "unresolved")
        domestic_counts[(protocol, label, status)] += 1

    # --- report bundle -----------------------------------------------------

    sanitize_rows = result.report.rows()
    _write_csv(
        out / "sanitize.csv",
        ["step", "remaining_count", "remaining_pct"],
        [[r["step"], r["remaining_count"], r["remaining_pct"]] for r in sanitize_rows],
    )
    _write_json(
        out / "sanitize.json",
        {
            "steps": sanitize_rows,
            "per_vantage": {
                vantage: vars(counts)
                for vantage, counts in sorted(result.report.per_vantage.items())
            },
        },
    )

    family_rows = filter_report(classified_rows)
    _write_csv(
        out / "filters.csv",
        ["protocol", "total_packets", "request_share", "excl_scanners", "excl_hp_ics",
         "excl_hp_all", "excl_both"],
        [
            [
                row["protocol"],
                row["total_packets"],
                None if row["request_share"] is None else round(100 * row["request_share"], 1),
                None if row["excl_scanners"] is None else round(100 * row["excl_scanners"], 1),
                None if row["excl_hp_ics"] is None else round(100 * row["excl_hp_ics"], 1),
                None if row["excl_hp_all"] is None else round(100 * row["excl_hp_all"], 1),
                None if row["excl_both"] is None else round(100 * row["excl_both"], 1),
            ]
            for row in family_rows
        ],
    )
    _write_json(out / "filters.json", family_rows)

    transition_rows = []
    for protocol, label in sorted({(p, l) for p, l, _ in transition_counts}):
        known = sum(
            transition_counts[(protocol, label, t)] for t in TRANSITIONS
        )
        unknown = transition_counts[(protocol, label, UNKNOWN_TRANSITION)]
        row = [protocol, label]
        for kind in TRANSITIONS:
            row.append(_pct(transition_counts[(protocol, label, kind)], known))
        row.extend([known, unknown])
        transition_rows.append(row)
    _write_csv(
        out / "transitions.csv",
        ["protocol", "label", "member_to_member_pct", "member_to_cone_pct",
         "cone_to_member_pct", "cone_to_cone_pct", "packets", "unknown_packets"],
        transition_rows,
    )

    domestic_rows = []
    for protocol, label in sorted({(p, l) for p, l, _ in domestic_counts}):
        domestic = domestic_counts[(protocol, label, "domestic")]
        foreign = domestic_counts[(protocol, label, "foreign")]
        unresolved = domestic_counts[(protocol, label, "unresolved")]
        resolved = domestic + foreign
        domestic_rows.append(
            [protocol, label, _pct(domestic, resolved), domestic, resolved, unresolved]
        )
    _write_csv(
        out / "domestic.csv",
        ["protocol", "label", "domestic_pct", "domestic_count", "resolved_count",
         "indeterminate_count"],
        domestic_rows,
    )

    series = metrics.daily_series(daily_entries)
    with open(out / "daily.tsv", "w", newline="") as fh:
        fh.write("day\tcount\textrapolated\tlabel\n")
        for (vantage, protocol), rows in series.items():
            interval = sample_intervals.get(vantage, 1)
            for row in rows:
                total_x, industrial_x = row.extrapolated(interval)
                fh.write(f"{row.day}\t{row.total}\t{total_x}\t{vantage}:{protocol}:total\n")
                fh.write(
                    f"{row.day}\t{row.industrial}\t{industrial_x}\t"
                    f"{vantage}:{protocol}:industrial\n"
                )

    stability = metrics.host_stability(stability_rows)
    _write_csv(
        out / "stability.csv",
        ["ip", "first_day", "last_day", "window_days", "active_days", "stability"],
        [
            [h.ip, h.first_day, h.last_day, h.window_days, h.active_day_count,
             round(h.stability, 4)]
            for h in stability
        ],
    )

    per_asn = protocols_per_asn(request_asn_rows)
    _write_csv(
        out / "asn_protocols.csv",
        ["asn", "distinct_protocols", "protocols", "suspicious"],
        [
            [asn, info["distinct"], ";".join(info["protocols"]), info["suspicious"]]
            for asn, info in per_asn.items()
        ],
    )

    overlap_rows = scan_overlap(passive_hosts, inputs.scan_snapshot)
    _write_csv(
        out / "scan_overlap.csv",
        ["protocol", "role", "passive_hosts", "transport_overlap_pct",
         "application_overlap_pct", "transport_only_senders"],
        [
            [r["protocol"], r["role"], r["passive_hosts"], r["transport_overlap_pct"],
             r["application_overlap_pct"], len(r["transport_only_senders"])]
            for r in overlap_rows
        ],
    )
    _write_json(out / "scan_overlap.json", overlap_rows)

    _write_csv(
        out / "protocol_rank.csv",
        ["rank", "protocol", "packets"],
        [[i + 1, protocol, count] for i, (protocol, count) in enumerate(rank)],
    )

    summary = {
        "captures": reader_summaries,
        "frames_read": sum(r["frames_read"] for r in reader_summaries),
        "records": sum(r["records"] for r in reader_summaries),
        "candidates": result.report.candidates_in,
        "kept": result.report.after_dpi,
        "filters": config.filters,
        "stability_label": config.stability_label,
        "stability_window": "inclusive of first and last day",
        "dissect_notes": dict(sorted(dissect_stats.items())),
    }
    _write_json(out / "run_summary.json", summary)
    return summary
