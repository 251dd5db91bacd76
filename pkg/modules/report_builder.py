"""
📊 Report Builder
Turns experiment JSON artifacts into result tables (CSV) and plot-data JSON.

Every experiment artifact carries a `kind` and the clip `dims`; a report
never mixes artifacts of different geometry.
"""

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from tabulate import tabulate

from modules.exceptions import ValidationError
from modules.utils import read_json, write_json

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ReportKind(str, Enum):
    SINGLE = "single"
    CLASS = "class"
    UNIVERSAL = "universal"
    TIME_INVARIANT = "time_invariant"
    BASELINE = "baseline"
    TRANSFER = "transfer"
    CONVERGENCE = "convergence"
    BETA = "beta"


ROW_COLUMNS = ['attack', 'model', 'tau_mode', 'fooling_pct', 'fooling_std', 'thickness_pct',
               'thickness_std', 'roughness_pct', 'roughness_std', 'linf_pct',
               'clean_filtered', 'kept', 'total']


@dataclass
class ReportRow:
    """One line of a results table; std columns are set only for randomized rows"""

    attack: str
    model: str
    fooling_pct: float
    thickness_pct: float
    roughness_pct: float
    linf_pct: float
    tau_mode: str = "synchronized"
    fooling_std: Optional[float] = None
    thickness_std: Optional[float] = None
    roughness_std: Optional[float] = None
    clean_filtered: bool = True
    kept: Optional[int] = None
    total: Optional[int] = None

    def __post_init__(self):
        for name in ('fooling_pct', 'thickness_pct', 'roughness_pct', 'linf_pct'):
            if getattr(self, name) < 0:
                raise ValidationError(f"ReportRow.{name} must be >= 0 (got {getattr(self, name)})")


def _clean(payload: Dict[str, Any]) -> Dict[str, Any]:
    clean = payload.get('clean') or {}
    return {'clean_filtered': bool(clean.get('filtered', True)),
            'kept': clean.get('kept'), 'total': clean.get('total')}


def _rows_from_eval(payload: Dict[str, Any]) -> List[ReportRow]:
    report = payload['report']
    return [ReportRow(attack=payload['attack'], model=payload['model'],
                      fooling_pct=100.0 * report['fooling_ratio'],
                      thickness_pct=report['thickness_pct'], roughness_pct=report['roughness_pct'],
                      linf_pct=report['linf_pct'], tau_mode=report['tau_mode'], **_clean(payload))]


def _rows_from_campaign(payload: Dict[str, Any]) -> List[ReportRow]:
    summary = payload['summary']
    return [ReportRow(attack=payload['attack'], model=payload['model'],
                      fooling_pct=100.0 * summary['fooling_ratio'],
                      fooling_std=100.0 * summary['fooling_std'],
                      thickness_pct=summary['thickness_mean'], thickness_std=summary['thickness_std'],
                      roughness_pct=summary['roughness_mean'], roughness_std=summary['roughness_std'],
                      linf_pct=max((item.get('linf_pct', 0.0) for item in summary['items']), default=0.0),
                      **_clean(payload))]


def _rows_from_sweep(payload: Dict[str, Any]) -> List[ReportRow]:
    rows = []
    for entry in payload['rows']:
        randomized = entry.get('repeats', 1) > 1
        rows.append(ReportRow(
            attack=entry['attack'], model=payload['model'],
            fooling_pct=100.0 * entry['fooling_mean'],
            fooling_std=100.0 * entry['fooling_std'] if randomized else None,
            thickness_pct=entry['thickness_mean'],
            thickness_std=entry['thickness_std'] if randomized else None,
            roughness_pct=entry['roughness_mean'],
            roughness_std=entry['roughness_std'] if randomized else None,
            linf_pct=entry['linf_pct'], tau_mode=entry.get('tau_mode', 'synchronized'),
            **_clean(payload)))
    return rows


_ROW_BUILDERS = {'eval': _rows_from_eval, 'campaign': _rows_from_campaign, 'sweep': _rows_from_sweep}


def rows_for(payload: Dict[str, Any]) -> List[ReportRow]:
    """Table rows of one eval, campaign or sweep artifact"""
    builder = _ROW_BUILDERS.get(payload.get('kind'))
    if builder is None:
        raise ValidationError(f"Artifact kind {payload.get('kind')!r} has no table rows")
    return builder(payload)


def rows_frame(rows: Sequence[ReportRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(row) for row in rows], columns=ROW_COLUMNS)


def _sweep_plot(payload: Dict[str, Any]) -> Dict[str, Any]:
    series: Dict[str, Dict[str, List[float]]] = {}
    for entry in payload['rows']:
        line = series.setdefault(entry['attack'], {'x': [], 'y': [], 'band': []})
        line['x'].append(entry['linf_pct'])
        line['y'].append(entry['fooling_mean'])
        line['band'].append(entry['fooling_std'])
    return {'x_label': 'linf_pct', 'y_label': 'fooling_ratio',
            'series': [{'name': name, **values} for name, values in sorted(series.items())]}


def _check_dims(payloads: Sequence[Dict[str, Any]]) -> None:
    dims = [p.get('dims') for p in payloads if p.get('dims') is not None]
    if any(d != dims[0] for d in dims[1:]):
        raise ValidationError("Report inputs were produced on different clip geometries")


def build_report(kind: Union[str, ReportKind],
                 payloads: Sequence[Dict[str, Any]]) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """
    Aggregate artifacts into a table and plot data

    Args:
        kind: Report kind
        payloads: Loaded JSON artifacts

    Returns:
        (table, plot-data dict)
    """
    kind = ReportKind(kind)
    payloads = list(payloads)
    if not payloads:
        raise ValidationError("Report needs at least one input artifact")
    _check_dims(payloads)
    plot: Dict[str, Any] = {'schema_version': 1, 'kind': kind.value, 'series': []}

    if kind in (ReportKind.SINGLE, ReportKind.CLASS):
        rows = [row for p in payloads if p.get('kind') == 'campaign' for row in _rows_from_campaign(p)]
        return rows_frame(rows), plot

    if kind in (ReportKind.UNIVERSAL, ReportKind.TIME_INVARIANT):
        rows = [row for p in payloads if p.get('kind') == 'eval' for row in _rows_from_eval(p)]
        return rows_frame(rows), plot

    if kind is ReportKind.BASELINE:
        sweeps = [p for p in payloads if p.get('kind') == 'sweep']
        rows = [row for p in sweeps for row in _rows_from_sweep(p)]
        for p in sweeps:
            plot['series'].extend(_sweep_plot(p)['series'])
        plot.update({'x_label': 'linf_pct', 'y_label': 'fooling_ratio'})
        return rows_frame(rows), plot

    if kind is ReportKind.TRANSFER:
        matrices = [p for p in payloads if p.get('kind') == 'transfer']
        if not matrices:
            raise ValidationError("No transfer-matrix artifact among the inputs")
        payload = matrices[-1]
        models = payload['models']
        frame = pd.DataFrame(payload['matrix'], columns=[f"on_{m}" for m in models])
        frame.insert(0, 'delta_from', models)
        return frame, plot

    if kind is ReportKind.CONVERGENCE:
        frames = []
        for index, p in enumerate(payloads):
            if 'history' not in p:
                continue
            frame = pd.DataFrame(p['history'])
            frame.insert(0, 'run', index)
            frames.append(frame)
            plot['series'].append({'name': f"run{index}",
                                   'x': frame['iteration'].tolist(),
                                   'top_probability': frame['top_probability'].tolist(),
                                   'original_probability': frame['original_probability'].tolist(),
                                   'thickness_pct': frame['thickness_pct'].tolist(),
                                   'roughness_pct': frame['roughness_pct'].tolist()})
        if not frames:
            raise ValidationError("No attack result among the inputs")
        return pd.concat(frames, ignore_index=True), plot

    # beta trade-off
    rows = [row for p in payloads if p.get('kind') == 'beta' for row in p['rows']]
    frame = pd.DataFrame(rows, columns=['beta1', 'beta2', 'thickness_pct', 'roughness_pct', 'fooled'])
    plot['series'].append({'name': 'beta_tradeoff', 'x': frame['thickness_pct'].tolist(),
                           'y': frame['roughness_pct'].tolist(), 'label': frame['beta1'].tolist()})
    plot.update({'x_label': 'thickness_pct', 'y_label': 'roughness_pct'})
    return frame, plot


def write_table(path: PathLike, frame: pd.DataFrame, float_format: str = "%.6f") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format)
    return path


def summarize(frame: pd.DataFrame, title: str = "") -> str:
    """Human-readable table for the terminal"""
    table = tabulate(frame, headers='keys', tablefmt='github', showindex=False, floatfmt='.3f')
    return f"{title}\n{table}" if title else table


def report(kind: Union[str, ReportKind], inputs: Sequence[PathLike], out_dir: PathLike,
           float_format: str = "%.6f") -> Tuple[Path, Path, pd.DataFrame]:
    """
    Build a report from artifact files

    Args:
        kind: Report kind
        inputs: JSON artifact paths
        out_dir: Output directory
        float_format: CSV float format

    Returns:
        (CSV path, plot JSON path, table)
    """
    kind = ReportKind(kind)
    frame, plot = build_report(kind, [read_json(path) for path in inputs])
    out_dir = Path(out_dir)
    csv_path = write_table(out_dir / f"{kind.value}_report.csv", frame, float_format)
    plot_path = write_json(out_dir / f"{kind.value}_plot.json", plot)
    logger.info(f"Wrote {len(frame)} {kind.value} rows to {csv_path}")
    return csv_path, plot_path, frame
