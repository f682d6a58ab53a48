"""Study orchestration: configuration, per-subject pipeline stages, manifests.

A virtual subject gets 5 ramp and 6 continuous synthetic sessions. Of the
continuous trials, one is held out as a test trial, one is reserved for
validation, and the remaining four are training trials. The five-classifier
roster is trained per its split rules, evaluated offline on the test trial,
and run through the closed-loop target test in a Latin-square order.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np
import torch

from . import analysis, control, dsp, fitts, labeling, models, vicreg
from .dataset import (
    MotionClass,
    SynthProfile,
    default_gain_matrix,
    make_continuous_protocol,
    make_ramp_protocol,
    read_session,
    synthesize_session,
    write_session,
)
from .features import (
    FrameSequence,
    apply_standardizer,
    estimate_wamp_threshold,
    extract_features,
    fit_standardizer,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ROSTER = ("LDA-R", "LSTM-R", "LDA-D", "LSTM-D", "LSTM-V")
BASELINE = "LDA-R"
METRIC_NAMES = (
    "completion_rate",
    "movement_time",
    "throughput",
    "path_efficiency",
    "stopping_distance",
    "overshoots",
    "instability",
)


class ConfigError(ValueError):
    pass


class MissingDataError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    subjects: int = 10
    master_seed: int = 2026
    roster: tuple[str, ...] = ROSTER
    ramp_trials: int = 5
    continuous_trials: int = 6
    prompt_duration: float = 3.0
    profile: SynthProfile = field(default_factory=SynthProfile)
    filter_spec: dsp.FilterSpec = field(default_factory=dsp.FilterSpec)
    frame_spec: dsp.FrameSpec = field(default_factory=dsp.FrameSpec)
    crt: labeling.CrtConfig = field(default_factory=labeling.CrtConfig)
    train: models.TrainConfig = field(default_factory=models.TrainConfig)
    vicreg_cfg: vicreg.VicregConfig = field(default_factory=vicreg.VicregConfig)
    augment: vicreg.AugmentConfig = field(default_factory=vicreg.AugmentConfig)
    rejection: control.RejectionConfig = field(default_factory=control.RejectionConfig)
    fitts_cfg: fitts.FittsConfig = field(default_factory=fitts.FittsConfig)
    persona: fitts.SimUser = field(default_factory=fitts.SimUser)
    anchor_stride: int = 5
    vicreg_steps_per_epoch: int = 12
    pc_percentiles: tuple[float, float] = (10.0, 95.0)
    pc_sigmoid_a: float = 10.0
    pc_sigmoid_x0: float = 0.5

    def __post_init__(self):
        if not self.roster:
            raise ConfigError("classifier roster must not be empty")
        unknown = set(self.roster) - set(ROSTER)
        if unknown:
            raise ConfigError(f"unknown classifiers in roster: {sorted(unknown)}")
        if self.continuous_trials < 3:
            raise ConfigError("need at least 3 continuous trials (train/val/test)")


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Build the experiment configuration; an empty file keeps every default."""
    if path is None:
        return ExperimentConfig()
    try:
        data = tomllib.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config file {path}: {exc}") from exc

    try:
        exp = _section(data, "experiment")
        synth = _section(data, "synth")
        profile = SynthProfile(
            gain_matrix=default_gain_matrix(
                gain=synth.get("gain", 0.25),
                channel_spread=synth.get("channel_spread", 1.0),
            ),
            noise_floor=synth.get("noise_floor", 0.005),
            transition_time=synth.get("transition_time", 0.25),
            transition_range=(
                synth.get("transition_low", 0.25),
                synth.get("transition_high", 0.7),
            ),
            cocontraction_max=synth.get("cocontraction_max", 0.3),
            steady_jitter=synth.get("steady_jitter", 0.05),
            gain_jitter=synth.get("gain_jitter", 0.10),
            pattern_sd=synth.get("pattern_sd", 0.22),
            drift_sd=synth.get("drift_sd", 0.18),
            reaction_mean=synth.get("reaction_mean", 0.464),
            reaction_sd=synth.get("reaction_sd", 0.05),
            steady_intensity_range=(
                synth.get("steady_intensity_low", 0.35),
                synth.get("steady_intensity_high", 1.0),
            ),
        )
        flt = _section(data, "filter")
        frm = _section(data, "frames")
        trn = _section(data, "train")
        vic = _section(data, "vicreg")
        aug = _section(data, "augment")
        ctl = _section(data, "control")
        fit = _section(data, "fitts")
        per = _section(data, "persona")
        return ExperimentConfig(
            subjects=exp.get("subjects", 10),
            master_seed=exp.get("master_seed", 2026),
            roster=tuple(exp.get("roster", list(ROSTER))),
            ramp_trials=exp.get("ramp_trials", 5),
            continuous_trials=exp.get("continuous_trials", 6),
            prompt_duration=exp.get("prompt_duration", 3.0),
            profile=profile,
            filter_spec=dsp.FilterSpec(
                band_low=flt.get("band_low", 20.0),
                band_high=flt.get("band_high", 450.0),
                band_order=flt.get("band_order", 4),
                notch_freq=flt.get("notch_freq", 60.0),
                notch_bandwidth=flt.get("notch_bandwidth", 2.0),
            ),
            frame_spec=dsp.FrameSpec.from_ms(
                duration_ms=frm.get("duration_ms", 162.0),
                increment_ms=frm.get("increment_ms", 13.5),
            ),
            crt=labeling.CrtConfig(
                delay=_section(data, "labeling").get("crt_delay", 0.464)
            ),
            train=models.TrainConfig(
                batch_size=trn.get("batch_size", 256),
                weight_decay=trn.get("weight_decay", 1e-3),
                lr_end_to_end=trn.get("lr_end_to_end", 1e-4),
                lr_stagewise=trn.get("lr_stagewise", 1e-3),
                patience=trn.get("patience", 10),
                max_epochs=trn.get("max_epochs", 200),
                sequence_len=trn.get("sequence_len", 40),
                sequence_stride=trn.get("sequence_stride", 10),
                dtype=trn.get("dtype", "float32"),
            ),
            vicreg_cfg=vicreg.VicregConfig(
                lambda_inv=vic.get("lambda_inv", 25.0),
                mu_var=vic.get("mu_var", 25.0),
                nu_cov=vic.get("nu_cov", 1.0),
                gamma=vic.get("gamma", 1.0),
                var_eps=vic.get("var_eps", 1e-4),
                use_expander=vic.get("use_expander", True),
            ),
            augment=vicreg.AugmentConfig(
                max_lag=aug.get("max_lag", 4),
                scale_sd=aug.get("scale_sd", 0.05),
                noise_sd=aug.get("noise_sd", 0.05),
            ),
            rejection=control.RejectionConfig(
                threshold=_section(data, "rejection").get("threshold", 0.5)
            ),
            fitts_cfg=fitts.FittsConfig(
                amplitude=fit.get("amplitude", 300.0),
                width=fit.get("width", 40.0),
                dwell_s=fit.get("dwell_s", 3.0),
                timeout_s=fit.get("timeout_s", 13.0),
                targets_total=fit.get("targets_total", 26),
                targets_scored=fit.get("targets_scored", 13),
                t_ref=ctl.get("t_ref", 2.0),
            ),
            persona=fitts.SimUser(
                reaction_delay_s=per.get("reaction_delay_s", 0.25),
                motor_noise=per.get("motor_noise", 0.05),
                saturation_px=per.get("saturation_px", 200.0),
                crawl_px=per.get("crawl_px", 40.0),
                intensity_floor=per.get("intensity_floor", 0.68),
            ),
            anchor_stride=vic.get("anchor_stride", 5),
            vicreg_steps_per_epoch=vic.get("steps_per_epoch", 12),
            pc_percentiles=(
                ctl.get("percentile_low", 10.0),
                ctl.get("percentile_high", 95.0),
            ),
            pc_sigmoid_a=ctl.get("sigmoid_a", 10.0),
            pc_sigmoid_x0=ctl.get("sigmoid_x0", 0.5),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def seed_for(master: int, subject: int, stream: str) -> int:
    """Stable per-(subject, purpose) seed derivation."""
    key = zlib.crc32(stream.encode("ascii"))
    return int(np.random.SeedSequence((master, subject, key)).generate_state(1)[0])


def subject_drift(cfg: ExperimentConfig, subject: int) -> np.ndarray:
    """Per-subject channel-gain drift between the ramp and continuous blocks."""
    rng = np.random.default_rng(seed_for(cfg.master_seed, subject, "drift"))
    return np.clip(rng.normal(1.0, cfg.profile.drift_sd, 6), 0.7, 1.3)


@contextmanager
def _single_threaded_torch():
    """Pin torch to one thread.

    Keeps trained weights and closed-loop traces independent of the machine's
    core count (reduction order is fixed), and removes the inter-thread
    synchronization overhead that dominates single-window inference.
    """
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def _stage_worker(stage: str, cfg: ExperimentConfig, subject: int, out: str, roster):
    if stage == "generate":
        return generate_subject(cfg, subject, Path(out))
    if stage == "train":
        return train_subject(cfg, subject, Path(out), roster)
    if stage == "offline":
        return offline_subject(cfg, subject, Path(out), roster)
    if stage == "fitts":
        return fitts_subject(cfg, subject, Path(out), roster)
    raise ValueError(f"unknown stage {stage!r}")


def map_subjects(
    stage: str,
    cfg: ExperimentConfig,
    out: Path,
    jobs: int = 1,
    roster: tuple[str, ...] | None = None,
) -> list:
    """Run one pipeline stage for every subject, optionally across processes.

    Subjects are independent and individually seeded, so results are
    identical whatever the job count.
    """
    subjects = range(cfg.subjects)
    if jobs <= 1:
        return [_stage_worker(stage, cfg, s, str(out), roster) for s in subjects]
    with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("spawn")) as pool:
        futures = [
            pool.submit(_stage_worker, stage, cfg, s, str(out), roster)
            for s in subjects
        ]
        return [f.result() for f in futures]


def subject_dir(out: Path, subject: int) -> Path:
    return Path(out) / f"subject_{subject:02d}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def update_manifest(sdir: Path, entries: dict) -> None:
    path = sdir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    for key, value in entries.items():
        if key == "files":
            manifest.setdefault("files", {}).update(value)
        else:
            manifest[key] = value
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _record_files(sdir: Path, paths: list[Path]) -> None:
    update_manifest(
        sdir, {"files": {str(p.relative_to(sdir)): _sha256(p) for p in paths}}
    )


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def generate_subject(cfg: ExperimentConfig, subject: int, out: Path) -> list[Path]:
    sdir = subject_dir(out, subject)
    sessions = sdir / "sessions"
    sessions.mkdir(parents=True, exist_ok=True)
    written = []

    ramp = make_ramp_protocol(cfg.ramp_trials, cfg.prompt_duration)
    for t, timeline in enumerate(ramp):
        profile = cfg.profile.with_seed(seed_for(cfg.master_seed, subject, f"ramp{t}"))
        session = synthesize_session(timeline, profile, "ramp")
        path = sessions / f"ramp_{t}.emg"
        write_session(session, path)
        written.append(path)

    # The continuous block is recorded after the ramp block; electrodes and
    # posture drift a little in between, as they would online.
    drift = subject_drift(cfg, subject)
    continuous = make_continuous_protocol(
        cfg.continuous_trials,
        cfg.prompt_duration,
        seed=seed_for(cfg.master_seed, subject, "protocol"),
    )
    for t, timeline in enumerate(continuous):
        profile = cfg.profile.with_seed(
            seed_for(cfg.master_seed, subject, f"cont{t}")
        ).with_drift(drift)
        session = synthesize_session(timeline, profile, "continuous")
        path = sessions / f"continuous_{t}.emg"
        write_session(session, path)
        written.append(path)

    rng = np.random.default_rng(seed_for(cfg.master_seed, subject, "roles"))
    ramp_val = int(rng.integers(cfg.ramp_trials))
    cont_val, cont_test = (int(i) for i in rng.choice(cfg.continuous_trials, 2, replace=False))
    update_manifest(
        sdir,
        {
            "subject": subject,
            "master_seed": cfg.master_seed,
            "roles": {"ramp_val": ramp_val, "cont_val": cont_val, "cont_test": cont_test},
        },
    )
    _record_files(sdir, written)
    return written


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

@dataclass
class SubjectData:
    """Filtered and framed sessions for one subject, keyed by family."""

    ramp_seqs: list  # FrameSequence per ramp trial (ramp WAMP threshold)
    cont_seqs: list  # FrameSequence per continuous trial (continuous WAMP threshold)
    ramp_timelines: list
    cont_timelines: list
    roles: dict
    thr_ramp: float
    thr_cont: float


def _pipeline_fingerprint(cfg: ExperimentConfig) -> str:
    return json.dumps(
        {
            "filter": dataclasses.asdict(cfg.filter_spec),
            "frames": dataclasses.asdict(cfg.frame_spec),
        },
        sort_keys=True,
    )


def load_subject_data(cfg: ExperimentConfig, sdir: Path) -> SubjectData:
    """Filter and featurize a subject's sessions, with an on-disk cache.

    Filtering and feature extraction dominate reload cost, so the derived
    frames are cached under features/ and reused by later pipeline stages
    as long as the filter and framing configuration is unchanged.
    """
    manifest_path = sdir / "manifest.json"
    if not manifest_path.exists():
        raise MissingDataError(f"no manifest in {sdir}; run generate first")
    roles = json.loads(manifest_path.read_text())["roles"]

    def read_family(prefix: str, count: int):
        sessions = []
        for t in range(count):
            path = sdir / "sessions" / f"{prefix}_{t}.emg"
            if not path.exists():
                raise MissingDataError(f"missing session file {path}")
            sessions.append(read_session(path))
        return sessions

    ramp_sessions = read_family("ramp", cfg.ramp_trials)
    cont_sessions = read_family("continuous", cfg.continuous_trials)
    ramp_timelines = [s.timeline for s in ramp_sessions]
    cont_timelines = [s.timeline for s in cont_sessions]

    cache_dir = sdir / "features"
    meta_path = cache_dir / "meta.json"
    fingerprint = _pipeline_fingerprint(cfg)
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("fingerprint") == fingerprint:
            def load_cached(prefix: str, count: int):
                seqs = []
                for t in range(count):
                    seqs.append(
                        FrameSequence(
                            lsf4=np.load(cache_dir / f"{prefix}_{t}.lsf4.npy"),
                            mav=np.load(cache_dir / f"{prefix}_{t}.mav.npy"),
                            starts=np.load(cache_dir / f"{prefix}_{t}.starts.npy"),
                            frame_len=cfg.frame_spec.frame_len,
                            sample_rate=2000,
                        )
                    )
                return seqs

            return SubjectData(
                ramp_seqs=load_cached("ramp", cfg.ramp_trials),
                cont_seqs=load_cached("continuous", cfg.continuous_trials),
                ramp_timelines=ramp_timelines,
                cont_timelines=cont_timelines,
                roles=roles,
                thr_ramp=meta["thr_ramp"],
                thr_cont=meta["thr_cont"],
            )

    def filter_family(sessions):
        return [
            dsp.apply_filter_chain(s.signal, cfg.filter_spec, s.sample_rate)
            for s in sessions
        ]

    ramp_signals = filter_family(ramp_sessions)
    cont_signals = filter_family(cont_sessions)
    thr_ramp = estimate_wamp_threshold(ramp_signals, ramp_timelines)
    train_like = [i for i in range(cfg.continuous_trials) if i != roles["cont_test"]]
    thr_cont = estimate_wamp_threshold(
        [cont_signals[i] for i in train_like], [cont_timelines[i] for i in train_like]
    )

    def featurize(signals, threshold):
        seqs = []
        for signal in signals:
            frames, starts = dsp.frame_signal(signal, cfg.frame_spec)
            seqs.append(extract_features(frames, starts, threshold))
        return seqs

    data = SubjectData(
        ramp_seqs=featurize(ramp_signals, thr_ramp),
        cont_seqs=featurize(cont_signals, thr_cont),
        ramp_timelines=ramp_timelines,
        cont_timelines=cont_timelines,
        roles=roles,
        thr_ramp=thr_ramp,
        thr_cont=thr_cont,
    )
    cache_dir.mkdir(parents=True, exist_ok=True)
    for prefix, seqs in (("ramp", data.ramp_seqs), ("continuous", data.cont_seqs)):
        for t, seq in enumerate(seqs):
            np.save(cache_dir / f"{prefix}_{t}.lsf4.npy", seq.lsf4)
            np.save(cache_dir / f"{prefix}_{t}.mav.npy", seq.mav)
            np.save(cache_dir / f"{prefix}_{t}.starts.npy", seq.starts)
    meta_path.write_text(
        json.dumps(
            {"fingerprint": fingerprint, "thr_ramp": thr_ramp, "thr_cont": thr_cont},
            sort_keys=True,
        )
        + "\n"
    )
    return data


def _labeled_ramp(data: SubjectData):
    out = []
    for seq, timeline in zip(data.ramp_seqs, data.ramp_timelines):
        thr = labeling.default_nm_threshold(seq, timeline)
        out.append(labeling.label_ramp(seq, timeline, thr))
    return out


def _labeled_cont(data: SubjectData, cfg: ExperimentConfig):
    return [
        labeling.label_continuous(seq, timeline, cfg.crt)
        for seq, timeline in zip(data.cont_seqs, data.cont_timelines)
    ]


def _fit_pc_for(cfg: ExperimentConfig, model, seqs) -> control.PcMap:
    """Class-specific normalization from the classifier's own training predictions."""
    mav_sums = np.concatenate([s.mav_sum for s in seqs])
    if isinstance(model, models.LdaModel):
        predicted = np.concatenate(
            [models.lda_predict(model, s.matrix).classes for s in seqs]
        )
    else:
        predicted = np.concatenate(
            [models.sliding_infer(model, s.matrix).classes for s in seqs]
        )
    return control.fit_pc_map(
        mav_sums,
        predicted,
        percentiles=cfg.pc_percentiles,
        min_count=20,
        sigmoid_a=cfg.pc_sigmoid_a,
        sigmoid_x0=cfg.pc_sigmoid_x0,
    )


def _save_pc_map(pc_map: control.PcMap, path: Path) -> None:
    payload = {
        "bounds": {str(k): list(v) for k, v in sorted(pc_map.bounds.items())},
        "sigmoid_a": pc_map.sigmoid_a,
        "sigmoid_x0": pc_map.sigmoid_x0,
        "percentiles": list(pc_map.percentiles),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_pc_map(path: Path) -> control.PcMap:
    data = json.loads(Path(path).read_text())
    return control.PcMap(
        bounds={int(k): tuple(v) for k, v in data["bounds"].items()},
        sigmoid_a=data["sigmoid_a"],
        sigmoid_x0=data["sigmoid_x0"],
        percentiles=tuple(data["percentiles"]),
    )


def train_subject(
    cfg: ExperimentConfig, subject: int, out: Path, roster: tuple[str, ...] | None = None
) -> dict[str, Path]:
    """Train the roster for one subject and write model + control-map files."""
    with _single_threaded_torch():
        return _train_subject(cfg, subject, out, roster)


def _train_subject(
    cfg: ExperimentConfig, subject: int, out: Path, roster: tuple[str, ...] | None = None
) -> dict[str, Path]:
    roster = cfg.roster if roster is None else roster
    sdir = subject_dir(out, subject)
    data = load_subject_data(cfg, sdir)
    mdir = sdir / "models"
    mdir.mkdir(parents=True, exist_ok=True)

    ramp_labeled = _labeled_ramp(data)
    cont_labeled = _labeled_cont(data, cfg)
    roles = data.roles
    cont_train_idx = [
        i for i in range(cfg.continuous_trials)
        if i not in (roles["cont_val"], roles["cont_test"])
    ][:4]
    cont_all_idx = [i for i in range(cfg.continuous_trials) if i != roles["cont_test"]]
    ramp_train_idx = [i for i in range(cfg.ramp_trials) if i != roles["ramp_val"]]

    splits: dict[str, dict] = {}
    written: dict[str, Path] = {}

    def finish(name: str, model, pc_seqs) -> None:
        pc_map = _fit_pc_for(cfg, model, pc_seqs)
        model_path = mdir / f"{name}.model"
        models.save_model(model, model_path)
        pc_path = mdir / f"{name}.pc.json"
        _save_pc_map(pc_map, pc_path)
        written[name] = model_path
        _record_files(sdir, [model_path, pc_path])

    def seq_cfg(seed_name: str) -> models.TrainConfig:
        return replace(cfg.train, rng_seed=seed_for(cfg.master_seed, subject, seed_name))

    def supervised_sets(labeled, train_idx, val_idx, standardizer, stride=None):
        stride = cfg.train.sequence_stride if stride is None else stride
        x_tr, y_tr = models.build_sequences(
            [apply_standardizer(standardizer, labeled[i].matrix) for i in train_idx],
            [labeled[i].labels for i in train_idx],
            cfg.train.sequence_len,
            stride,
        )
        x_va, y_va = models.build_sequences(
            [apply_standardizer(standardizer, labeled[val_idx].matrix)],
            [labeled[val_idx].labels],
            cfg.train.sequence_len,
            stride,
        )
        return (x_tr, y_tr), (x_va, y_va)

    for name in roster:
        if name == "LDA-R":
            x = np.concatenate([s.matrix for s in ramp_labeled])
            y = np.concatenate([s.labels for s in ramp_labeled])
            model = models.lda_fit(x, y, wamp_threshold=data.thr_ramp)
            splits[name] = {"train": list(range(cfg.ramp_trials))}
            finish(name, model, ramp_labeled)
        elif name == "LDA-D":
            x = np.concatenate([cont_labeled[i].matrix for i in cont_all_idx])
            y = np.concatenate([cont_labeled[i].labels for i in cont_all_idx])
            model = models.lda_fit(x, y, wamp_threshold=data.thr_cont)
            splits[name] = {"train": cont_all_idx}
            finish(name, model, [cont_labeled[i] for i in cont_all_idx])
        elif name == "LSTM-R":
            standardizer = fit_standardizer(
                np.concatenate([ramp_labeled[i].matrix for i in ramp_train_idx])
            )
            train_set, val_set = supervised_sets(
                ramp_labeled, ramp_train_idx, roles["ramp_val"], standardizer
            )
            net = models.create_recurrent(
                seed_for(cfg.master_seed, subject, "init-lstm-r"),
                dtype=cfg.train.torch_dtype,
            )
            models.train_xent(net, train_set, val_set, seq_cfg("train-lstm-r"), "end_to_end")
            model = models.RecurrentModel(
                net=net,
                standardizer=standardizer,
                sequence_len=cfg.train.sequence_len,
                wamp_threshold=data.thr_ramp,
            )
            splits[name] = {"train": ramp_train_idx, "val": roles["ramp_val"]}
            finish(name, model, [ramp_labeled[i] for i in ramp_train_idx])
        elif name == "LSTM-D":
            standardizer = fit_standardizer(
                np.concatenate([cont_labeled[i].matrix for i in cont_train_idx])
            )
            train_set, val_set = supervised_sets(
                cont_labeled, cont_train_idx, roles["cont_val"], standardizer
            )
            net = models.create_recurrent(
                seed_for(cfg.master_seed, subject, "init-lstm-d"),
                dtype=cfg.train.torch_dtype,
            )
            models.train_xent(net, train_set, val_set, seq_cfg("train-lstm-d"), "end_to_end")
            model = models.RecurrentModel(
                net=net,
                standardizer=standardizer,
                sequence_len=cfg.train.sequence_len,
                wamp_threshold=data.thr_cont,
            )
            splits[name] = {"train": cont_train_idx, "val": roles["cont_val"]}
            finish(name, model, [cont_labeled[i] for i in cont_train_idx])
        elif name == "LSTM-V":
            # The frozen-head fit is cheap on cached embeddings, so it uses
            # denser windows than the end-to-end trainings.
            head_stride = min(cfg.train.sequence_stride, cfg.anchor_stride)
            standardizer = fit_standardizer(
                np.concatenate([cont_labeled[i].matrix for i in cont_train_idx])
            )
            train_trials = [
                apply_standardizer(standardizer, cont_labeled[i].matrix)
                for i in cont_train_idx
            ]
            val_trials = [
                apply_standardizer(standardizer, cont_labeled[roles["cont_val"]].matrix)
            ]
            backbone = models.BackboneNet().to(cfg.train.torch_dtype)
            models.init_parameters(
                backbone, seed_for(cfg.master_seed, subject, "init-lstm-v")
            )
            pre = vicreg.pretrain_backbone(
                backbone,
                train_trials,
                val_trials,
                cfg.vicreg_cfg,
                cfg.augment,
                seq_cfg("pretrain-lstm-v"),
                anchor_stride=cfg.anchor_stride,
                max_steps_per_epoch=cfg.vicreg_steps_per_epoch,
            )
            backbone_model = models.RecurrentModel(
                net=_wrap_backbone(pre.backbone, cfg.train.torch_dtype),
                standardizer=standardizer,
                sequence_len=cfg.train.sequence_len,
                wamp_threshold=data.thr_cont,
                stage="pretrained",
            )
            backbone_path = mdir / f"{name}.backbone.model"
            models.save_model(backbone_model, backbone_path)
            _record_files(sdir, [backbone_path])

            train_set, val_set = supervised_sets(
                cont_labeled, cont_train_idx, roles["cont_val"], standardizer,
                stride=head_stride,
            )
            model, _ = vicreg.train_head_on_frozen(
                pre.backbone,
                standardizer,
                train_set,
                val_set,
                replace(seq_cfg("head-lstm-v"), max_epochs=max(cfg.train.max_epochs, 400)),
                wamp_threshold=data.thr_cont,
            )
            splits[name] = {
                "pretrain": cont_train_idx,
                "train": cont_train_idx,
                "val": roles["cont_val"],
            }
            finish(name, model, [cont_labeled[i] for i in cont_train_idx])
        else:
            raise ConfigError(f"unknown classifier {name!r}")

    update_manifest(sdir, {"splits": splits})
    return written


def _wrap_backbone(backbone, dtype):
    """Package a bare backbone as a full net so it shares the model file format."""
    net = models.RecurrentNet(
        input_dim=backbone.lstm.input_size, hidden_dim=backbone.lstm.hidden_size
    ).to(dtype)
    net.backbone.load_state_dict(backbone.state_dict())
    with torch.no_grad():
        for p in net.head.parameters():
            p.zero_()
    return net


def load_classifier(sdir: Path, name: str):
    model_path = sdir / "models" / f"{name}.model"
    pc_path = sdir / "models" / f"{name}.pc.json"
    if not model_path.exists() or not pc_path.exists():
        raise MissingDataError(f"missing model artifacts for {name} in {sdir}; run train first")
    return models.load_model(model_path), load_pc_map(pc_path)


def make_decoder(model):
    if isinstance(model, models.LdaModel):
        return models.LdaDecoder(model)
    return models.RecurrentDecoder(model)


# ---------------------------------------------------------------------------
# offline evaluation
# ---------------------------------------------------------------------------

SWEEP_THRESHOLDS = np.round(np.linspace(0.0, 1.0, 21), 2)


def offline_subject(
    cfg: ExperimentConfig, subject: int, out: Path, roster: tuple[str, ...] | None = None
) -> dict:
    """Decision streams and error reports on the held-out continuous test trial."""
    with _single_threaded_torch():
        return _offline_subject(cfg, subject, out, roster)


def _featurize_trial(
    cfg: ExperimentConfig, sdir: Path, prefix: str, index: int, wamp_threshold: float
):
    """Featurize one session with a specific WAMP threshold."""
    path = sdir / "sessions" / f"{prefix}_{index}.emg"
    if not path.exists():
        raise MissingDataError(f"missing session file {path}")
    session = read_session(path)
    filtered = dsp.apply_filter_chain(session.signal, cfg.filter_spec, session.sample_rate)
    frames, starts = dsp.frame_signal(filtered, cfg.frame_spec)
    return extract_features(frames, starts, wamp_threshold), session.timeline


def _offline_subject(
    cfg: ExperimentConfig, subject: int, out: Path, roster: tuple[str, ...] | None = None
) -> dict:
    roster = cfg.roster if roster is None else roster
    sdir = subject_dir(out, subject)
    data = load_subject_data(cfg, sdir)
    odir = sdir / "offline"
    odir.mkdir(parents=True, exist_ok=True)
    test_idx = data.roles["cont_test"]

    # Each classifier reads the test trial through its own WAMP threshold,
    # matching how its training features were extracted.
    test_cache: dict[float, object] = {}

    def labeled_test_for(threshold: float):
        if threshold not in test_cache:
            if threshold == data.thr_cont:
                seq, timeline = data.cont_seqs[test_idx], data.cont_timelines[test_idx]
            else:
                seq, timeline = _featurize_trial(cfg, sdir, "continuous", test_idx, threshold)
            test_cache[threshold] = labeling.label_continuous(seq, timeline, cfg.crt)
        return test_cache[threshold]

    labels = labeling.label_continuous(
        data.cont_seqs[test_idx], data.cont_timelines[test_idx], cfg.crt
    ).labels

    report: dict = {"subject": subject, "test_trial": test_idx,
                    "rejection_threshold": cfg.rejection.threshold, "classifiers": {}}
    streams: dict[str, control.DecisionStream] = {}
    sweeps: dict[str, np.ndarray] = {}
    written = []

    for name in roster:
        model, pc_map = load_classifier(sdir, name)
        seq = labeled_test_for(model.wamp_threshold)
        if isinstance(model, models.LdaModel):
            raw = models.lda_predict(model, seq.matrix)
        else:
            raw = models.sliding_infer(model, seq.matrix)
        stream = control.decision_stream(raw, seq.mav_sum, pc_map, cfg.rejection)
        streams[name] = stream
        sweeps[name] = analysis.sweep_rejection(
            raw.classes, raw.confidence, labels, SWEEP_THRESHOLDS
        )
        report["classifiers"][name] = {
            "frame_accuracy": float(np.mean(raw.classes == labels)),
            "total_error_rate": analysis.total_error_rate(stream.classes, labels),
            "offline_instability": analysis.offline_instability(stream.classes),
        }

        csv_path = odir / f"{name}.decisions.csv"
        with csv_path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["frame", "time_s", "label", "class", "confidence",
                             "rejected", "velocity"])
            for i in range(len(stream)):
                writer.writerow([
                    i,
                    repr(float(seq.times[i])),
                    MotionClass(int(labels[i])).name,
                    MotionClass(int(stream.classes[i])).name,
                    repr(float(stream.confidence[i])),
                    int(stream.rejected[i]),
                    repr(float(stream.velocity[i])),
                ])
        written.append(csv_path)

    sweep_path = odir / "rejection_sweep.csv"
    with sweep_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["threshold"] + list(roster))
        for i, th in enumerate(SWEEP_THRESHOLDS):
            writer.writerow([repr(float(th))] + [repr(float(sweeps[n][i])) for n in roster])
    report_path = odir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    written += [sweep_path, report_path]
    _record_files(sdir, written)

    report["_streams"] = streams
    report["_labels"] = labels
    report["_sweeps"] = sweeps
    return report


# ---------------------------------------------------------------------------
# closed-loop runs
# ---------------------------------------------------------------------------

def fitts_subject(
    cfg: ExperimentConfig, subject: int, out: Path, roster: tuple[str, ...] | None = None
) -> list[dict]:
    """Run the target test for each classifier in this subject's Latin-square order."""
    with _single_threaded_torch():
        return _fitts_subject(cfg, subject, out, roster)


def _fitts_subject(
    cfg: ExperimentConfig, subject: int, out: Path, roster: tuple[str, ...] | None = None
) -> list[dict]:
    roster = cfg.roster if roster is None else roster
    sdir = subject_dir(out, subject)
    fdir = sdir / "fitts"
    fdir.mkdir(parents=True, exist_ok=True)

    if len(roster) > 1:
        square = analysis.balanced_latin_square(len(roster))
        order = [roster[i] for i in square[subject % square.shape[0]]]
    else:
        order = list(roster)
    # Online use happens in the drifted (post-ramp) recording conditions.
    profile = cfg.profile.with_seed(
        seed_for(cfg.master_seed, subject, "fitts-emg")
    ).with_drift(subject_drift(cfg, subject))

    rows = []
    written = []
    for position, name in enumerate(order):
        model, pc_map = load_classifier(sdir, name)
        result = fitts.run_fitts(
            make_decoder(model),
            pc_map,
            profile,
            cfg.fitts_cfg,
            cfg.persona,
            cfg.rejection,
            cfg.filter_spec,
            cfg.frame_spec,
            seed=seed_for(cfg.master_seed, subject, f"fitts-{name}"),
        )
        scored = [log for log in result.logs if log.scored]
        metrics = fitts.compute_metrics(scored, cfg.fitts_cfg)
        summary = {
            "subject": subject,
            "classifier": name,
            "position": position,
            "metrics": metrics.as_dict(),
            "n_targets": len(result.logs),
            "n_scored": len(scored),
        }
        spath = fdir / f"{name}.summary.json"
        spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        cpath = fdir / f"{name}.run.csv"
        _write_run_csv(cpath, result.logs, cfg.fitts_cfg)
        written += [spath, cpath]
        if name == "LSTM-V" and len(result.frames):
            fpath = fdir / "LSTM-V.frames.npy"
            ppath = fdir / "LSTM-V.predictions.npy"
            np.save(fpath, result.frames)
            np.save(ppath, result.frame_predictions)
            written += [fpath, ppath]
        rows.append(summary)
    _record_files(sdir, written)
    return rows


def _write_run_csv(path: Path, logs, cfg: fitts.FittsConfig) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([
            "trial", "scored", "tick", "x", "y", "diameter", "raw_class",
            "confidence", "rejected", "command_class", "velocity",
            "pos_ok", "size_ok", "target_x", "target_y", "target_diameter", "outcome",
        ])
        for trial_idx, log in enumerate(logs):
            for i in range(log.n_ticks):
                writer.writerow([
                    trial_idx,
                    int(log.scored),
                    i,
                    repr(float(log.x[i])),
                    repr(float(log.y[i])),
                    repr(float(log.diameter[i])),
                    MotionClass(int(log.raw_class[i])).name,
                    repr(float(log.confidence[i])),
                    int(log.rejected[i]),
                    MotionClass(int(log.command_class[i])).name,
                    repr(float(log.velocity[i])),
                    int(log.pos_ok[i]),
                    int(log.size_ok[i]),
                    repr(float(log.target.x)),
                    repr(float(log.target.y)),
                    repr(float(log.target.diameter)),
                    log.outcome,
                ])


def write_metrics_csv(out: Path, rows: list[dict]) -> Path:
    path = Path(out) / "metrics.csv"
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["subject", "classifier", "metric", "value"])
        for row in rows:
            for metric, value in row["metrics"].items():
                writer.writerow([row["subject"], row["classifier"], metric, repr(float(value))])
    return path


def read_metrics_csv(path: Path) -> dict[str, dict[tuple[int, str], float]]:
    """metric -> {(subject, classifier): value}."""
    table: dict[str, dict[tuple[int, str], float]] = {}
    with Path(path).open() as handle:
        for row in csv.DictReader(handle):
            table.setdefault(row["metric"], {})[
                (int(row["subject"]), row["classifier"])
            ] = float(row["value"])
    return table


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def run_stats(
    metrics_path: Path, baseline: str = BASELINE, alpha: float = 0.05
) -> dict[str, analysis.StatResult]:
    """Per-metric repeated-measures ANOVA with gated baseline comparisons."""
    table = read_metrics_csv(metrics_path)
    results: dict[str, analysis.StatResult] = {}
    for metric, cells in table.items():
        subjects = sorted({s for s, _ in cells})
        classifiers = sorted({c for _, c in cells})
        data = np.array([[cells[(s, c)] for c in classifiers] for s in subjects])
        result = analysis.rm_anova(data)
        if result.p < alpha and baseline in classifiers and len(classifiers) > 1:
            others = [c for c in classifiers if c != baseline]
            base_col = np.array([cells[(s, baseline)] for s in subjects])
            raw_ps, effects = [], []
            for other in others:
                col = np.array([cells[(s, other)] for s in subjects])
                _, p_raw = analysis.paired_t(col, base_col)
                raw_ps.append(p_raw)
                effects.append(analysis.cohens_d(col, base_col))
            adjusted = analysis.benjamini_yekutieli(np.array(raw_ps))
            result.posthoc = [
                analysis.PosthocResult(
                    pair=(other, baseline),
                    p_raw=float(p_raw),
                    p_adjusted=float(p_adj),
                    cohens_d=eff.d,
                    effect_label=eff.label,
                    degenerate=eff.degenerate,
                )
                for other, p_raw, p_adj, eff in zip(others, raw_ps, adjusted, effects)
            ]
        results[metric] = result
    return results


def write_stats(out: Path, results: dict[str, analysis.StatResult]) -> list[Path]:
    json_path = Path(out) / "stats.json"
    payload = {
        metric: {
            "F": r.F,
            "df": list(r.df),
            "p": r.p,
            "posthoc": [
                {
                    "pair": list(ph.pair),
                    "p_raw": ph.p_raw,
                    "p_adjusted": ph.p_adjusted,
                    "cohens_d": ph.cohens_d,
                    "effect_label": ph.effect_label,
                    "degenerate": ph.degenerate,
                }
                for ph in r.posthoc
            ],
        }
        for metric, r in sorted(results.items())
    }
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    csv_path = Path(out) / "stats.csv"
    with csv_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric", "F", "df_num", "df_den", "p",
                         "pair", "p_raw", "p_adjusted", "cohens_d", "effect_label"])
        for metric, r in sorted(results.items()):
            if not r.posthoc:
                writer.writerow([metric, repr(r.F), r.df[0], r.df[1], repr(r.p),
                                 "", "", "", "", ""])
            for ph in r.posthoc:
                writer.writerow([
                    metric, repr(r.F), r.df[0], r.df[1], repr(r.p),
                    f"{ph.pair[0]} vs {ph.pair[1]}", repr(ph.p_raw),
                    repr(ph.p_adjusted), repr(ph.cohens_d), ph.effect_label,
                ])
    return [json_path, csv_path]


# ---------------------------------------------------------------------------
# latent-space export
# ---------------------------------------------------------------------------

def latent_subject(cfg: ExperimentConfig, subject: int, out: Path) -> dict[str, Path]:
    """2D projections of the pre-trained backbone's embeddings, per data source."""
    sdir = subject_dir(out, subject)
    model, _ = load_classifier(sdir, "LSTM-V")
    ldir = sdir / "latent"
    ldir.mkdir(parents=True, exist_ok=True)
    data = load_subject_data(cfg, sdir)
    roles = data.roles
    cont_train_idx = [
        i for i in range(cfg.continuous_trials)
        if i not in (roles["cont_val"], roles["cont_test"])
    ][:4]

    ramp_labeled = _labeled_ramp(data)
    cont_labeled = _labeled_cont(data, cfg)

    def windows_for(seqs) -> tuple[np.ndarray, np.ndarray]:
        return models.build_sequences(
            [apply_standardizer(model.standardizer, s.matrix) for s in seqs],
            [s.labels for s in seqs],
            model.sequence_len,
            cfg.anchor_stride,
        )

    sources: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    sources["ramp_train"] = windows_for(ramp_labeled)
    sources["continuous_train"] = windows_for([cont_labeled[i] for i in cont_train_idx])
    sources["continuous_test"] = windows_for([cont_labeled[roles["cont_test"]]])

    frames_path = sdir / "fitts" / "LSTM-V.frames.npy"
    if frames_path.exists():
        frames = np.load(frames_path)
        preds = np.load(sdir / "fitts" / "LSTM-V.predictions.npy")
        xw, yw = models.build_sequences(
            [apply_standardizer(model.standardizer, frames)],
            [preds],
            model.sequence_len,
            cfg.anchor_stride,
        )
        sources["fitts"] = (xw, yw)

    embeddings = {
        name: vicreg.export_embeddings(model.net.backbone, xw)
        for name, (xw, _) in sources.items()
    }
    stacked = np.concatenate(list(embeddings.values()))
    scores, ratio = analysis.pca_project(stacked, k=2)

    written: dict[str, Path] = {}
    offset = 0
    for name, (xw, tags) in sources.items():
        n = len(xw)
        block = scores[offset : offset + n]
        offset += n
        path = ldir / f"{name}.csv"
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["pc1", "pc2", "tag"])
            for row, tag in zip(block, tags):
                writer.writerow([repr(float(row[0])), repr(float(row[1])),
                                 MotionClass(int(tag)).name])
        written[name] = path
    meta = ldir / "explained_variance.json"
    meta.write_text(json.dumps({"explained_variance_ratio": [float(r) for r in ratio]},
                               indent=2) + "\n")
    _record_files(sdir, list(written.values()) + [meta])
    return written
