"""
🧪 Experiment Runner
Runs the experiment lifecycle behind the command line: dataset generation,
training, attacks, baseline sweeps, transfer matrices and over-the-air
simulations. Every run writes deterministic CSV/JSON artifacts under the
configured output directory.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from modules.attack_core import TauMode
from modules.attack_driver import (AttackMode, AttackResult, FlickeringAttack, EvalReport, beta_sweep,
                                   class_campaign, evaluate, single_video_attacks,
                                   summarize_single_video, transfer_eval)
from modules.checkpoint_io import checkpoint_fingerprint, load_checkpoint, save_checkpoint
from modules.classifier_trainer import ClassifierTrainer
from modules.diffnet import Architecture, ModelParams, predict_batch
from modules.exceptions import ValidationError
from modules.experiment_config import ExperimentConfig
from modules.ota_channel import (calibrate, develop_scene_attack, pulse_probes, save_calibration_records,
                                 scene_based_trial, simulate_calibration, universal_ota_trial)
from modules.random_baselines import BaselineKind, make_baseline
from modules.report_builder import (ReportKind, build_report, report, rows_for, rows_frame,
                                    write_table)
from modules.synthetic_videos import SyntheticVideoGenerator, generate_splits
from modules.utils import (make_rng, read_json, sanitize_filename, write_json,
                           RNG_BASELINE, RNG_CHANNEL_NOISE)
from modules.video_data import LabeledVideo, Perturbation, check_same_dims
from modules.video_io import load_dataset, load_perturbation, save_dataset, save_perturbation

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def clean_filter(params: ModelParams, dataset: Sequence[LabeledVideo], n_jobs: int = 1) -> List[LabeledVideo]:
    """
    Keep only the clips the model classifies correctly without any perturbation

    Args:
        params: Model under attack
        dataset: Candidate clips
        n_jobs: joblib workers

    Returns:
        The correctly classified clips, in their original order
    """
    dataset = list(dataset)
    if not dataset:
        return []
    predicted = predict_batch(params, dataset, n_jobs)
    kept = [clip for clip, top in zip(dataset, predicted) if int(top) == clip.label]
    if len(kept) < len(dataset):
        logger.warning(f"Clean filter dropped {len(dataset) - len(kept)} misclassified clips")
    logger.info(f"Clean filter kept {len(kept)}/{len(dataset)} clips")
    return kept


@dataclass
class RunOutcome:
    """What a subcommand produced: artifact paths plus a table for the terminal"""

    title: str
    table: pd.DataFrame
    artifacts: Dict[str, str] = field(default_factory=dict)


def _pct_tag(pct: Optional[float]) -> str:
    return "" if pct is None else "_linf" + f"{pct:g}".replace(".", "p")


def _with_ext(stem: Path, ext: str) -> Path:
    return stem.with_name(stem.name + ext)


class ExperimentRunner:
    """Experiment orchestration over one configuration and seed"""

    def __init__(self, config: Dict[str, Any], seed: Optional[int] = None,
                 output_dir: Optional[PathLike] = None):
        """
        Initialize runner

        Args:
            config: Full configuration dictionary
            seed: Global seed override (propagates to every component)
            output_dir: Output directory override
        """
        self.config = config or {}
        self.settings = ExperimentConfig.from_dict(self.config, seed)
        self.logger = logging.getLogger(__name__)
        self.output_dir = Path(output_dir or self.settings.output_dir)
        self.n_jobs = self.settings.n_jobs
        self.float_format = self.settings.float_format

        self.logger.info(f"Experiment runner initialized (seed={self.settings.seed}, "
                         f"output={self.output_dir})")

    # ==================== PATHS & LOADING ====================

    @property
    def data_dir(self) -> Path:
        return self.output_dir / "data"

    def model_path(self, variant: Union[str, Architecture, None] = None) -> Path:
        variant = Architecture(variant or self.settings.variant)
        return self.output_dir / "models" / f"model_{variant.value}.flkm"

    def load_splits(self, data_dir: Optional[PathLike] = None) -> Tuple[List[LabeledVideo], List[LabeledVideo]]:
        """Load the train and eval splits written by gen_data"""
        root = Path(data_dir) if data_dir else self.data_dir
        splits = []
        for split in ("train", "eval"):
            if not (root / split / "labels.csv").exists():
                raise ValidationError(f"No {split} split under {root}; run gen-data first")
            clips, _ = load_dataset(root / split)
            if not clips:
                raise ValidationError(f"The {split} split under {root} is empty")
            check_same_dims(self.settings.dataset.dims, clips[0].dims, f"{split} split")
            splits.append(clips)
        return splits[0], splits[1]

    def load_model(self, checkpoint: Optional[PathLike] = None,
                   variant: Union[str, Architecture, None] = None) -> ModelParams:
        path = Path(checkpoint or self.settings.checkpoint or self.model_path(variant))
        if not path.exists():
            raise ValidationError(f"Checkpoint {path} not found; run train first")
        params = load_checkpoint(path, expected=variant)
        check_same_dims(self.settings.dataset.dims, params.dims, "checkpoint")
        return params

    def _clean(self, params: ModelParams, clips: Sequence[LabeledVideo],
               what: str) -> Tuple[List[LabeledVideo], Dict[str, Any]]:
        kept = clean_filter(params, clips, self.n_jobs)
        if not kept:
            raise ValidationError(f"No {what} clip is classified correctly by the model")
        return kept, {'filtered': True, 'kept': len(kept), 'total': len(clips)}

    def _artifact(self, kind: str, params: ModelParams, **payload) -> Dict[str, Any]:
        return {'schema_version': 1, 'kind': kind, 'model': params.variant.value,
                'model_fingerprint': checkpoint_fingerprint(params),
                'dims': params.dims.to_dict(), 'seed': self.settings.seed, **payload}

    def _write_rows(self, path: Path, payload: Dict[str, Any]) -> pd.DataFrame:
        frame = rows_frame(rows_for(payload))
        write_table(path, frame, self.float_format)
        return frame

    # ==================== DATA & MODEL ====================

    def gen_data(self, data_dir: Optional[PathLike] = None) -> RunOutcome:
        """Generate and store the train and eval splits"""
        spec = self.settings.dataset
        root = Path(data_dir) if data_dir else self.data_dir
        train, held_out = generate_splits(spec, self.settings.eval_clips_per_class)
        save_dataset(root / "train", train, meta={'split': 'train', 'spec': spec.to_dict()})
        save_dataset(root / "eval", held_out, meta={'split': 'eval', 'spec': spec.to_dict(),
                                                    'clips_per_class': self.settings.eval_clips_per_class})
        echo = write_json(root / "experiment.json", self.settings.to_dict())
        table = pd.DataFrame([
            {'split': 'train', 'clips': len(train), 'classes': spec.num_classes},
            {'split': 'eval', 'clips': len(held_out), 'classes': spec.num_classes},
        ])
        return RunOutcome("Dataset", table, {'train': str(root / "train"), 'eval': str(root / "eval"),
                                             'config': str(echo)})

    def train(self, variant: Union[str, Architecture, None] = None, data_dir: Optional[PathLike] = None,
              checkpoint: Optional[PathLike] = None) -> RunOutcome:
        """Train a classifier and store its checkpoint plus a training report"""
        variant = Architecture(variant or self.settings.variant)
        train_set, eval_set = self.load_splits(data_dir)
        result = ClassifierTrainer(self.config).fit(train_set, self.settings.train, variant,
                                                    self.settings.dataset.num_classes, eval_set)
        path = Path(checkpoint) if checkpoint else self.model_path(variant)
        save_checkpoint(path, result.params)
        payload = {**result.to_dict(), 'kind': 'training',
                   'model_fingerprint': checkpoint_fingerprint(result.params),
                   'training': self.settings.train.to_dict()}
        report_path = write_json(path.with_name(f"{path.stem}_training.json"), payload)
        last = result.history[-1] if result.history else {}
        table = pd.DataFrame([{'variant': variant.value, 'epochs': len(result.history),
                               'loss': last.get('loss'), 'train_accuracy': last.get('train_accuracy'),
                               'eval_accuracy': result.eval_accuracy}])
        return RunOutcome("Training", table, {'checkpoint': str(path), 'report': str(report_path)})

    # ==================== ATTACKS ====================

    def _save_result(self, stem: Path, result: AttackResult) -> Dict[str, str]:
        delta_path = save_perturbation(_with_ext(stem, ".flkp"), result.delta)
        json_path = result.to_json(_with_ext(stem, ".json"), delta_file=delta_path.name)
        return {'delta': str(delta_path), 'result': str(json_path)}

    def attack(self, mode: Union[str, AttackMode], linf_pct: Optional[float] = None,
               time_invariant: bool = False, target_class: Optional[int] = None,
               clips: Optional[int] = None, checkpoint: Optional[PathLike] = None,
               name: Optional[str] = None, sweep_beta: bool = False) -> RunOutcome:
        """
        Run one attack experiment

        Args:
            mode: single_video, single_class or universal
            linf_pct: l-inf budget in percent of the intensity range
            time_invariant: Train with random cyclic shifts (universal/single_class)
            target_class: Class to attack in single_class mode (None = every class)
            clips: Number of clean eval clips for a single_video campaign (None = all)
            checkpoint: Model checkpoint (defaults to the configured variant)
            name: Artifact stem
            sweep_beta: In single_video mode, run the thickness/roughness trade-off instead

        Returns:
            RunOutcome with the result rows
        """
        mode = AttackMode(mode)
        params = self.load_model(checkpoint)
        train_set, eval_set = self.load_splits()
        cfg = self.settings.attack_config(mode, linf_pct, time_invariant=time_invariant or None,
                                          target_class=target_class)
        label = mode.value + ("_time_invariant" if cfg.time_invariant else "")
        stem = self.output_dir / "attacks" / sanitize_filename(
            name or f"{label}{_pct_tag(linf_pct)}_{params.variant.value}")
        stem.parent.mkdir(parents=True, exist_ok=True)

        if mode is AttackMode.SINGLE_VIDEO:
            eval_clean, clean_info = self._clean(params, eval_set, "eval")
            selected = eval_clean[:clips] if clips else eval_clean
            if sweep_beta:
                rows = beta_sweep(params, selected[0], cfg)
                payload = self._artifact('beta', params, attack=label, clip_id=selected[0].clip_id, rows=rows)
                json_path = write_json(stem.with_name(f"{stem.name}_beta.json"), payload)
                frame, _ = build_report(ReportKind.BETA, [payload])
                csv_path = write_table(stem.with_name(f"{stem.name}_beta.csv"), frame, self.float_format)
                return RunOutcome("Thickness/roughness trade-off", frame,
                                  {'artifact': str(json_path), 'table': str(csv_path)})

            results = single_video_attacks(params, selected, cfg, self.n_jobs)
            artifacts: Dict[str, str] = {}
            for clip, result in zip(selected, results):
                saved = self._save_result(stem / sanitize_filename(clip.clip_id), result)
                artifacts[f"result:{clip.clip_id}"] = saved['result']
            summary = summarize_single_video(selected, results)
            payload = self._artifact('campaign', params, attack=label, clean=clean_info,
                                     config=cfg.to_dict(), summary=summary.to_dict())
            return self._finish(stem, payload, "Single-video attacks", artifacts)

        train_clean, _ = self._clean(params, train_set, "train")
        eval_clean, clean_info = self._clean(params, eval_set, "eval")

        if mode is AttackMode.SINGLE_CLASS and cfg.target_class is None:
            summary = class_campaign(params, train_clean, eval_clean, cfg)
            payload = self._artifact('campaign', params, attack=label, clean=clean_info,
                                     config=cfg.to_dict(), summary=summary.to_dict())
            return self._finish(stem, payload, "Single-class attacks", {})

        result = FlickeringAttack(params, self.config).attack(train_clean, cfg)
        artifacts = self._save_result(stem, result)
        if mode is AttackMode.SINGLE_CLASS:
            eval_clean = [clip for clip in eval_clean if clip.label == cfg.target_class]
            clean_info = {**clean_info, 'kept': len(eval_clean)}
            if not eval_clean:
                raise ValidationError(f"No clean eval clip of class {cfg.target_class}")
        tau_mode = TauMode.SWEEP_ALL if cfg.time_invariant else TauMode.SYNCHRONIZED
        report_ = evaluate(params, eval_clean, result.delta, tau_mode, self.settings.seed, self.n_jobs)
        payload = self._artifact('eval', params, attack=label, clean=clean_info,
                                 delta_file=Path(artifacts['delta']).name, report=report_.to_dict())
        return self._finish(stem, payload, f"{label} attack", artifacts)

    def _finish(self, stem: Path, payload: Dict[str, Any], title: str,
                artifacts: Dict[str, str]) -> RunOutcome:
        json_path = write_json(stem.with_name(f"{stem.name}_{payload['kind']}.json"), payload)
        frame = self._write_rows(stem.with_name(f"{stem.name}_rows.csv"), payload)
        return RunOutcome(title, frame, {**artifacts, 'artifact': str(json_path),
                                         'rows': str(stem.with_name(f"{stem.name}_rows.csv"))})

    # ==================== SWEEPS & EVALUATION ====================

    @staticmethod
    def _sweep_entry(attack: str, pct: float, reports: Sequence[EvalReport]) -> Dict[str, Any]:
        fooling = [r.fooling_ratio for r in reports]
        thickness = [r.thickness_pct for r in reports]
        roughness = [r.roughness_pct for r in reports]
        return {'attack': attack, 'linf_pct': float(pct), 'repeats': len(reports),
                'fooling_mean': float(np.mean(fooling)), 'fooling_std': float(np.std(fooling)),
                'thickness_mean': float(np.mean(thickness)), 'thickness_std': float(np.std(thickness)),
                'roughness_mean': float(np.mean(roughness)), 'roughness_std': float(np.std(roughness))}

    def baseline_sweep(self, linf_pcts: Optional[Sequence[float]] = None, repeats: Optional[int] = None,
                       checkpoint: Optional[PathLike] = None) -> RunOutcome:
        """
        Universal attack against matched random flicker at each budget

        Args:
            linf_pcts: Budgets in percent (defaults to baselines.linf_pct)
            repeats: Draws per random baseline (defaults to baselines.repeats)
            checkpoint: Model checkpoint

        Returns:
            RunOutcome with one row per (attack, budget)
        """
        pcts = [float(p) for p in (linf_pcts or self.settings.sweep)]
        if not pcts or any(p <= 0 for p in pcts):
            raise ValidationError(f"Sweep budgets must be positive (got {pcts})")
        repeats = int(repeats or self.settings.repeats)
        if repeats < 1:
            raise ValidationError(f"repeats must be >= 1 (got {repeats})")

        params = self.load_model(checkpoint)
        train_set, eval_set = self.load_splits()
        train_clean, _ = self._clean(params, train_set, "train")
        eval_clean, clean_info = self._clean(params, eval_set, "eval")
        sweep_dir = self.output_dir / "sweeps"

        rows = []
        for budget_index, pct in enumerate(pcts):
            cfg = self.settings.attack_config(AttackMode.UNIVERSAL, pct)
            result = FlickeringAttack(params, self.config).attack(train_clean, cfg)
            save_perturbation(sweep_dir / f"universal{_pct_tag(pct)}_{params.variant.value}.flkp", result.delta)
            flicker = self._sweep_entry('flicker', pct, [evaluate(params, eval_clean, result.delta,
                                                                  n_jobs=self.n_jobs)])
            rows.append(flicker)
            for kind in BaselineKind:
                reports = []
                for repeat in range(repeats):
                    seed = int(make_rng(self.settings.seed, RNG_BASELINE, budget_index, repeat).integers(2 ** 62))
                    baseline = make_baseline(kind.value, result.delta, seed)
                    reports.append(evaluate(params, eval_clean, baseline, n_jobs=self.n_jobs))
                rows.append(self._sweep_entry(kind.value, pct, reports))
            self.logger.info(f"Sweep budget {pct:g}%: flicker fooling {flicker['fooling_mean']:.3f}")

        payload = self._artifact('sweep', params, clean=clean_info, repeats=repeats, rows=rows)
        stem = sweep_dir / f"baseline_sweep_{params.variant.value}"
        json_path = write_json(_with_ext(stem, ".json"), payload)
        frame = self._write_rows(_with_ext(stem, ".csv"), payload)
        return RunOutcome("Baseline sweep", frame, {'artifact': str(json_path),
                                                    'rows': str(_with_ext(stem, ".csv"))})

    @staticmethod
    def load_delta(path: PathLike) -> Perturbation:
        """A perturbation from an FLKP file or an AttackResult JSON"""
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"Perturbation {path} not found")
        if path.suffix == ".json":
            return AttackResult.from_dict(read_json(path)).delta
        return load_perturbation(path)

    def evaluate(self, delta_path: PathLike, tau_mode: Union[str, TauMode] = TauMode.SYNCHRONIZED,
                 checkpoint: Optional[PathLike] = None) -> RunOutcome:
        """Fooling ratio of a stored perturbation on the clean eval split"""
        tau_mode = TauMode(tau_mode)
        delta = self.load_delta(delta_path)
        params = self.load_model(checkpoint)
        _, eval_set = self.load_splits()
        eval_clean, clean_info = self._clean(params, eval_set, "eval")
        report_ = evaluate(params, eval_clean, delta, tau_mode, self.settings.seed, self.n_jobs)
        name = Path(delta_path).stem
        payload = self._artifact('eval', params, attack=name, clean=clean_info,
                                 delta_file=Path(delta_path).name, report=report_.to_dict())
        stem = self.output_dir / "evals" / sanitize_filename(f"{name}_on_{params.variant.value}_{tau_mode.value}")
        return self._finish(stem, payload, "Evaluation", {})

    def transfer_matrix(self, checkpoints: Optional[Sequence[PathLike]] = None,
                        linf_pct: Optional[float] = None) -> RunOutcome:
        """
        Universal perturbations from each model evaluated on every model

        Entry [i][j] is the fooling ratio of model i's perturbation on model j,
        each scored on the eval clips model j classifies correctly.
        """
        paths = [Path(p) for p in (checkpoints or [self.model_path(v) for v in Architecture])]
        models = [self.load_model(path) for path in paths]
        names = [m.variant.value for m in models]
        if len(set(names)) < len(names):
            names = [path.stem for path in paths]
        train_set, eval_set = self.load_splits()
        cfg = self.settings.attack_config(AttackMode.UNIVERSAL, linf_pct)

        deltas, clean_evals = [], []
        for params in models:
            train_clean, _ = self._clean(params, train_set, "train")
            clean_evals.append(self._clean(params, eval_set, "eval")[0])
            deltas.append(FlickeringAttack(params, self.config).attack(train_clean, cfg).delta)
        matrix = [[transfer_eval(delta, target, clean_evals[j], n_jobs=self.n_jobs).fooling_ratio
                   for j, target in enumerate(models)] for delta in deltas]

        payload = {'schema_version': 1, 'kind': 'transfer', 'models': names,
                   'model_fingerprints': [checkpoint_fingerprint(m) for m in models],
                   'dims': models[0].dims.to_dict(), 'seed': self.settings.seed,
                   'linf_pct': linf_pct, 'matrix': matrix}
        stem = self.output_dir / "transfer" / f"transfer{_pct_tag(linf_pct)}"
        json_path = write_json(_with_ext(stem, ".json"), payload)
        frame, _ = build_report(ReportKind.TRANSFER, [payload])
        csv_path = write_table(_with_ext(stem, ".csv"), frame, self.float_format)
        return RunOutcome("Transfer matrix (fooling ratio)", frame,
                          {'artifact': str(json_path), 'table': str(csv_path)})

    # ==================== OVER THE AIR ====================

    def ota_sim(self, delta_path: Optional[PathLike] = None, variants: Optional[int] = None,
                linf_pct: Optional[float] = None, checkpoint: Optional[PathLike] = None) -> RunOutcome:
        """
        Calibrate the simulated channel, then replay attacks through it

        A scene attack is developed on the first clean eval clip plus
        ota.scene_renders - 1 further recordings of its scene, then
        transmitted into fresh re-rendered variants, once as is and once
        precompensated with the calibrated channel. A stored universal
        perturbation (delta_path) is additionally replayed over the eval split.
        """
        seed = self.settings.seed
        ota = self.settings.ota
        channel = self.settings.channel
        params = self.load_model(checkpoint)
        dims = params.dims
        ota_dir = self.output_dir / "ota"

        probes = pulse_probes(dims.T, float(ota['probe_amplitude']))
        records = simulate_calibration(channel, probes, int(make_rng(seed, RNG_CHANNEL_NOISE, 0).integers(2 ** 62)))
        records_path = save_calibration_records(ota_dir / "calibration_records.csv", records)
        calibration = calibrate(records)
        estimate_path = calibration.channel.save(ota_dir / "channel_estimate.json")
        estimate = calibration.channel if ota.get('precompensate', True) else None

        _, eval_set = self.load_splits()
        eval_clean, clean_info = self._clean(params, eval_set, "eval")
        clip = eval_clean[0]
        generator = SyntheticVideoGenerator(self.settings.dataset)
        count = int(variants or ota['variants'])
        scenes = [generator.rejitter(clip, seed, index) for index in range(count)]
        # development recordings use variant indices past the trial scenes
        renders = [clip] + clean_filter(params, [generator.rejitter(clip, seed, count + index)
                                                 for index in range(int(ota['scene_renders']) - 1)])
        result = develop_scene_attack(params, renders, self.settings.scene_attack_config(linf_pct))

        trials = {'scene_raw': scene_based_trial(params, scenes, result.delta, channel, None, seed)}
        if estimate is not None:
            trials['scene_precompensated'] = scene_based_trial(params, scenes, result.delta, channel, estimate, seed)
        if delta_path is not None:
            trials['universal'] = universal_ota_trial(params, eval_clean, self.load_delta(delta_path),
                                                      channel, estimate, seed)

        payload = self._artifact('ota', params, clean=clean_info, clip_id=clip.clip_id,
                                 renders=[r.clip_id for r in renders], scene_attack=result.best,
                                 channel=channel.to_dict(),
                                 calibration={'channel': calibration.channel.to_dict(),
                                              'residual_rms': calibration.residual_rms,
                                              'rank': calibration.rank},
                                 trials={name: trial.to_dict() for name, trial in trials.items()})
        json_path = write_json(ota_dir / "ota_sim.json", payload)
        frame = pd.DataFrame([{'trial': name, 'fooled': t.fooled, 'total': t.total, 'skipped': t.skipped,
                               'fooling_pct': 100.0 * t.fooling_ratio} for name, t in trials.items()])
        csv_path = write_table(ota_dir / "ota_sim.csv", frame, self.float_format)
        self.logger.info(f"Calibration residual {calibration.residual_rms:.3e} (rank {calibration.rank})")
        return RunOutcome("Over-the-air simulation", frame,
                          {'artifact': str(json_path), 'table': str(csv_path),
                           'records': str(records_path), 'channel_estimate': str(estimate_path)})

    # ==================== REPORTS ====================

    def report(self, kind: Union[str, ReportKind], inputs: Sequence[PathLike],
               out_dir: Optional[PathLike] = None) -> RunOutcome:
        """Aggregate stored artifacts into a results table and plot data"""
        missing = [str(p) for p in inputs if not Path(p).exists()]
        if missing:
            raise ValidationError(f"Report inputs not found: {missing}")
        kind = ReportKind(kind)
        csv_path, plot_path, frame = report(kind, inputs, out_dir or self.output_dir / "reports",
                                            self.float_format)
        return RunOutcome(f"{kind.value} report", frame, {'table': str(csv_path), 'plot': str(plot_path)})
