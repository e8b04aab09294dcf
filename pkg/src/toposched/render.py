"""Allocation-grid rendering of server snapshots.

The grid shows GPU device index (rows) by server (columns), each cell
colored by the owning workload. Multi-GPU instances are linked; an
instance is flagged as misaligned when its GPUs span more sockets than a
request of its size ever needs on that hardware (a full-server instance
necessarily crosses sockets and is never flagged).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .flextopo import AlignmentClass, ParsedSnapshot


@dataclass(frozen=True)
class InstanceCells:
    instance: str
    workload: str
    server_index: int
    gpu_indices: Tuple[int, ...]
    sockets: Tuple[int, ...]
    misaligned: bool
    contiguous: bool


def workload_of_instance(instance_id: str) -> str:
    """Instance ids are '<workload>-<suffix>'."""
    return instance_id.rsplit("-", 1)[0]


def _min_sockets(snapshot: ParsedSnapshot, gpu_count: int) -> int:
    per_socket = snapshot.spec.gpus_per_socket
    return -(-gpu_count // per_socket)


def collect_instances(snapshots: Sequence[ParsedSnapshot]) -> List[InstanceCells]:
    out: List[InstanceCells] = []
    for idx, snap in enumerate(snapshots):
        by_owner: Dict[str, List[int]] = {}
        for rec in snap.gpus:
            if rec.used_by is not None:
                by_owner.setdefault(rec.used_by, []).append(rec.gpu)
        for owner, gpus in sorted(by_owner.items()):
            gpus.sort()
            sockets = tuple(sorted({snap.socket_of_numa(
                g // snap.spec.gpus_per_numa) for g in gpus}))
            misaligned = (len(gpus) > 1
                          and len(sockets) > _min_sockets(snap, len(gpus)))
            contiguous = gpus == list(range(gpus[0], gpus[0] + len(gpus)))
            out.append(InstanceCells(
                instance=owner, workload=workload_of_instance(owner),
                server_index=idx, gpu_indices=tuple(gpus), sockets=sockets,
                misaligned=misaligned, contiguous=contiguous))
    return out


def _workload_symbols(instances: Sequence[InstanceCells]) -> Dict[str, str]:
    symbols: Dict[str, str] = {}
    pool = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"
    for wl in sorted({i.workload for i in instances}):
        first = wl[:1].upper()
        pick = first if first.isalnum() and first not in symbols.values() else None
        if pick is None:
            pick = next(ch for ch in pool if ch not in symbols.values())
        symbols[wl] = pick
    return symbols


def render_text(snapshots: Sequence[ParsedSnapshot]) -> str:
    """Diff-friendly text grid plus a misalignment footer."""
    instances = collect_instances(snapshots)
    symbols = _workload_symbols(instances)
    max_gpus = max((s.spec.gpu_count for s in snapshots), default=0)
    grid = [["." for _ in snapshots] for _ in range(max_gpus)]
    for snap_idx, snap in enumerate(snapshots):
        owner_by_gpu = {rec.gpu: rec.used_by for rec in snap.gpus}
        status_by_gpu = {rec.gpu: rec.status for rec in snap.gpus}
        for g in range(snap.spec.gpu_count):
            if status_by_gpu.get(g) == "failed":
                grid[g][snap_idx] = "!"
            elif owner_by_gpu.get(g):
                grid[g][snap_idx] = symbols[workload_of_instance(owner_by_gpu[g])]
    lines = [f"allocation grid: {len(snapshots)} servers x {max_gpus} GPUs"]
    for g in range(max_gpus - 1, -1, -1):
        lines.append(f"gpu{g:2d} | " + " ".join(grid[g]))
    lines.append("       " + " ".join("-" for _ in snapshots))
    lines.append("legend: " + " ".join(
        f"{sym}={wl}" for wl, sym in sorted(symbols.items())) + (
        "  .=free  !=failed" if snapshots else ".=free"))
    flagged = [i for i in instances if i.misaligned]
    noncontig = [i for i in instances
                 if len(i.gpu_indices) > 1 and not i.contiguous]
    lines.append(f"misaligned_multi_gpu {len(flagged)}")
    for inst in flagged:
        lines.append(
            f"  {inst.instance} server={inst.server_index} "
            f"gpus={','.join(map(str, inst.gpu_indices))} "
            f"sockets={','.join(map(str, inst.sockets))}")
    lines.append(f"noncontiguous_multi_gpu {len(noncontig)}")
    return "\n".join(lines) + "\n"


_PALETTE = ("#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4",
            "#8c613c", "#dc7ec0", "#797979", "#d5bb67", "#82c6e2")


def render_svg(snapshots: Sequence[ParsedSnapshot]) -> str:
    """SVG rendering of the same grid; dashed links mark non-contiguous
    multi-GPU instances, red outlines mark misaligned ones."""
    instances = collect_instances(snapshots)
    workloads = sorted({i.workload for i in instances})
    colors = {wl: _PALETTE[i % len(_PALETTE)] for i, wl in enumerate(workloads)}
    max_gpus = max((s.spec.gpu_count for s in snapshots), default=0)
    cell, pad, legend_h = 16, 40, 24
    width = pad + len(snapshots) * cell + 10
    height = pad + max_gpus * cell + legend_h + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="monospace" font-size="10">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]

    def cell_xy(server_idx: int, gpu: int) -> Tuple[int, int]:
        # GPU index 0 at the bottom
        return (pad + server_idx * cell, pad + (max_gpus - 1 - gpu) * cell)

    for snap_idx, snap in enumerate(snapshots):
        for rec in snap.gpus:
            x, y = cell_xy(snap_idx, rec.gpu)
            if rec.status == "failed":
                fill = "#222222"
            elif rec.used_by:
                fill = colors[workload_of_instance(rec.used_by)]
            else:
                fill = "#eeeeee"
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell - 2}" height="{cell - 2}" '
                f'fill="{fill}" stroke="#999999"/>')
    for inst in instances:
        if len(inst.gpu_indices) < 2:
            continue
        dash = ' stroke-dasharray="3,3"' if not inst.contiguous else ""
        x0, _ = cell_xy(inst.server_index, 0)
        cx = x0 + (cell - 2) / 2
        ys = [cell_xy(inst.server_index, g)[1] + (cell - 2) / 2
              for g in inst.gpu_indices]
        parts.append(
            f'<polyline points="{" ".join(f"{cx},{y}" for y in ys)}" '
            f'fill="none" stroke="#333333"{dash}/>')
        if inst.misaligned:
            top = min(cell_xy(inst.server_index, g)[1] for g in inst.gpu_indices)
            bottom = max(cell_xy(inst.server_index, g)[1] for g in inst.gpu_indices)
            parts.append(
                f'<rect x="{x0 - 1}" y="{top - 1}" width="{cell}" '
                f'height="{bottom - top + cell - 1}" fill="none" '
                f'stroke="#cc0000" stroke-width="1.5"/>')
    lx = pad
    ly = pad + max_gpus * cell + 14
    for wl in workloads:
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" '
                     f'fill="{colors[wl]}"/>')
        parts.append(f'<text x="{lx + 13}" y="{ly}">{wl}</text>')
        lx += 13 + 8 * (len(wl) + 2)
    flagged = sum(1 for i in instances if i.misaligned)
    parts.append(f'<text x="{pad}" y="{ly + 14}">misaligned_multi_gpu '
                 f'{flagged}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
