"""
Unit tests for result tables and plot data
"""
import pytest
import pandas as pd

from modules.exceptions import ValidationError
from modules.report_builder import (ROW_COLUMNS, ReportRow, build_report, report, rows_for,
                                    summarize)
from modules.utils import read_json, write_json

DIMS = {'T': 16, 'H': 32, 'W': 32, 'C': 3, 'v_min': -1.0, 'v_max': 1.0}


def eval_payload(attack="universal", fooling=0.8, tau_mode="synchronized", dims=DIMS):
    return {'kind': 'eval', 'attack': attack, 'model': 'A', 'dims': dims,
            'clean': {'filtered': True, 'kept': 50, 'total': 60},
            'report': {'fooling_ratio': fooling, 'thickness_pct': 1.5, 'roughness_pct': 0.7,
                       'linf_pct': 4.0, 'tau_mode': tau_mode}}


def sweep_payload():
    rows = []
    for pct in (5.0, 10.0):
        rows.append({'attack': 'flicker', 'linf_pct': pct, 'repeats': 1, 'fooling_mean': pct / 20,
                     'fooling_std': 0.0, 'thickness_mean': pct / 4, 'thickness_std': 0.0,
                     'roughness_mean': pct / 8, 'roughness_std': 0.0})
        rows.append({'attack': 'uniform', 'linf_pct': pct, 'repeats': 10, 'fooling_mean': pct / 100,
                     'fooling_std': 0.01, 'thickness_mean': pct / 4, 'thickness_std': 0.1,
                     'roughness_mean': pct / 3, 'roughness_std': 0.2})
    return {'kind': 'sweep', 'model': 'A', 'dims': DIMS, 'rows': rows}


class TestRows:

    def test_negative_metric_rejected(self):
        with pytest.raises(ValidationError):
            ReportRow(attack='x', model='A', fooling_pct=-1.0, thickness_pct=0.0,
                      roughness_pct=0.0, linf_pct=0.0)

    def test_eval_row(self):
        (row,) = rows_for(eval_payload())
        assert row.fooling_pct == pytest.approx(80.0)
        assert (row.kept, row.total, row.clean_filtered) == (50, 60, True)
        assert row.fooling_std is None

    def test_sweep_std_only_when_randomized(self):
        rows = rows_for(sweep_payload())
        flicker = [r for r in rows if r.attack == 'flicker']
        uniform = [r for r in rows if r.attack == 'uniform']
        assert all(r.fooling_std is None for r in flicker)
        assert all(r.fooling_std == pytest.approx(1.0) for r in uniform)

    def test_campaign_row(self):
        payload = {'kind': 'campaign', 'attack': 'single_video', 'model': 'B', 'dims': DIMS,
                   'summary': {'fooling_ratio': 0.9, 'fooling_std': 0.0, 'thickness_mean': 1.0,
                               'thickness_std': 0.2, 'roughness_mean': 0.5, 'roughness_std': 0.1,
                               'items': [{'linf_pct': 3.0}, {'linf_pct': 6.0}]}}
        (row,) = rows_for(payload)
        assert row.linf_pct == 6.0
        assert row.thickness_std == 0.2

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            rows_for({'kind': 'transfer'})


class TestBuildReport:

    def test_universal_table(self):
        frame, _ = build_report("universal", [eval_payload(), eval_payload(fooling=0.5)])
        assert list(frame.columns) == ROW_COLUMNS
        assert frame['fooling_pct'].tolist() == pytest.approx([80.0, 50.0])

    def test_mixed_geometry_rejected(self):
        other = dict(DIMS, T=8)
        with pytest.raises(ValidationError):
            build_report("universal", [eval_payload(), eval_payload(dims=other)])

    def test_no_inputs(self):
        with pytest.raises(ValidationError):
            build_report("universal", [])

    def test_baseline_plot(self):
        frame, plot = build_report("baseline", [sweep_payload()])
        assert len(frame) == 4
        names = [series['name'] for series in plot['series']]
        assert names == ['flicker', 'uniform']
        assert plot['series'][0]['x'] == [5.0, 10.0]
        assert plot['x_label'] == 'linf_pct'

    def test_transfer_matrix(self):
        payload = {'kind': 'transfer', 'dims': DIMS, 'models': ['A', 'B'],
                   'matrix': [[0.9, 0.4], [0.3, 0.85]]}
        frame, _ = build_report("transfer", [payload])
        assert list(frame.columns) == ['delta_from', 'on_A', 'on_B']
        assert frame.loc[1, 'on_A'] == 0.3

    def test_convergence(self):
        history = [{'iteration': i, 'top_probability': 0.9 - 0.1 * i, 'original_probability': 0.9 - 0.2 * i,
                    'thickness_pct': 0.5 * i, 'roughness_pct': 0.2 * i, 'fooling_ratio': 0.0}
                   for i in range(3)]
        frame, plot = build_report("convergence", [{'dims': DIMS, 'history': history}] * 2)
        assert len(frame) == 6
        assert frame['run'].tolist() == [0, 0, 0, 1, 1, 1]
        assert plot['series'][1]['x'] == [0, 1, 2]

    def test_convergence_needs_history(self):
        with pytest.raises(ValidationError):
            build_report("convergence", [eval_payload()])

    def test_beta(self):
        rows = [{'beta1': 1.0, 'beta2': 0.0, 'thickness_pct': 1.0, 'roughness_pct': 2.0, 'fooled': True},
                {'beta1': 0.0, 'beta2': 1.0, 'thickness_pct': 2.0, 'roughness_pct': 0.5, 'fooled': True}]
        frame, plot = build_report("beta", [{'kind': 'beta', 'dims': DIMS, 'rows': rows}])
        assert frame['beta1'].tolist() == [1.0, 0.0]
        assert plot['series'][0]['y'] == [2.0, 0.5]


class TestReportFiles:

    def test_writes_csv_and_plot(self, tmp_path):
        inputs = [write_json(tmp_path / "in" / "sweep.json", sweep_payload())]
        csv_path, plot_path, frame = report("baseline", inputs, tmp_path / "out", float_format="%.2f")
        assert csv_path.name == "baseline_report.csv"
        assert pd.read_csv(csv_path).shape == frame.shape
        assert "25.00" in csv_path.read_text()
        assert read_json(plot_path)['kind'] == 'baseline'

    def test_summarize(self):
        frame, _ = build_report("universal", [eval_payload()])
        text = summarize(frame, title="Universal")
        assert text.startswith("Universal\n")
        assert "fooling_pct" in text
