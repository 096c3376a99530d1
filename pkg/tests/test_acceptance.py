"""Acceptance suite: one test per acceptance criterion, each printing a PASS/FAIL line.

The training-dependent criteria share one session-scoped toy pipeline (base
pretraining, stage 1, stage 2 and the ablation runs), about three minutes on
one core.
"""
import json
import time

import numpy as np
import pytest
import torch

from cuereenact.cli import main
from cuereenact.ingest import MappingConfig, RawKeypointTrack, load_keypoints, map_to_canonical, save_keypoints
from cuereenact.losses import grad_check, loss_3d_align, loss_ortho
from cuereenact.metrics import ContactModel, evaluate, ffl, fsd, relative_report
from cuereenact.model import (
    KIND_GA3D,
    KIND_LA2D,
    KIND_LA3D,
    GeneratorConfig,
    base_forward,
    cfg_sample,
    conditional_sample,
    conditioned_forward,
    init_adapter,
    init_base,
)
from cuereenact.motion import MotionSequence, RootTrajectory, SparseCue2D, SparseCue3D, anchor_and_normalize
from cuereenact.projection import CameraRanges, project, project_raw, sample_camera, subject_centroid, to_pixels
from cuereenact.skeleton import CUE_SLOTS, N_SLOTS
from cuereenact.synth import PATTERNS, synth_motion
from cuereenact.training import (
    ROLE_GA,
    ROLE_LA2D,
    ROLE_LA3D,
    TrainConfig,
    make_clips,
    make_datasets,
    pretrain_base,
    train_stage_2d,
    train_stage_3d,
)

from conftest import SK, motion_from, static_motion
from toys import PROBLEMS

# desk-scale configuration used for every training-based criterion
ACCEPT_CFG = TrainConfig(
    learning_rate=3e-3, batch_size=64, epochs=60, n_clips=256, n_val=32,
    model=GeneratorConfig(d=64, n_blocks=2, n_max=64),
)
N_HELDOUT = 50

RESULTS = []


@pytest.fixture
def report(capsys):
    def _report(n, title, ok, detail=""):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
        RESULTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return _report


# ------------------------------------------------------------------ pipeline


@pytest.fixture(scope="session")
def pipeline():
    t0 = time.time()
    cfg = ACCEPT_CFG
    data = make_datasets(cfg)
    sb = pretrain_base(cfg, data)
    h_base = sb.hashes()["base"]
    s3 = train_stage_3d(sb.base, cfg, data)
    h3 = s3.hashes()
    s2 = train_stage_2d(sb.base, s3, cfg, data)
    h2 = s2.hashes()
    t_main = time.time() - t0
    s3_no_lo = train_stage_3d(sb.base, cfg.with_(lambda1=0.0), data)
    s2_no_l3d = train_stage_2d(sb.base, s3, cfg.with_(no_L3d=True), data)
    t_total = time.time() - t0
    return dict(cfg=cfg, data=data, base=sb, s3=s3, s2=s2, h_base=h_base, h3=h3, h2=h2,
                s3_no_lo=s3_no_lo, s2_no_l3d=s2_no_l3d, t_main=t_main, t_total=t_total)


@pytest.fixture(scope="session")
def heldout(pipeline):
    cfg = pipeline["cfg"]
    clips = make_clips(N_HELDOUT, 999, cfg.clip_seconds, cfg.fps, "heldout")
    cues = [project(m, sample_camera(m.n_frames, m.fps, 1000 + i, cfg.camera, centroid=subject_centroid(m)))
            for i, m in enumerate(clips.motions)]
    return clips, cues


# ------------------------------------------------------------------ criteria


def _random_condition(kind, n, rng):
    if kind == KIND_GA3D:
        return RootTrajectory(20.0, rng.normal(size=(n, 3)))
    dim = 2 if kind == KIND_LA2D else 3
    valid = rng.random((n, N_SLOTS)) > 0.1
    valid[:, 0] = True
    c = anchor_and_normalize(rng.normal(size=(n, N_SLOTS, dim)), valid)
    return (SparseCue2D if dim == 2 else SparseCue3D)(20.0, c, valid)


def test_zero_init_identity(report):
    t0 = time.time()
    rng = np.random.default_rng(1)
    mismatches = 0
    for trial in range(100):
        cfg = GeneratorConfig(n_joints=int(rng.integers(1, 23)), d=int(rng.integers(1, 17)),
                              n_blocks=int(rng.integers(1, 4)), n_max=32, kernel=int(rng.choice([1, 3, 5])))
        base = init_base(cfg, trial)
        kinds = [k for k in (KIND_LA2D, KIND_LA3D, KIND_GA3D) if rng.random() < 0.7] or [KIND_LA2D]
        adapters = [init_adapter(base, k, 1000 + 10 * trial + i) for i, k in enumerate(kinds)]
        n = int(rng.integers(2, 33))
        conds = [_random_condition(a.kind, n, rng) for a in adapters]
        x = rng.normal(size=(n, cfg.pose_dim))
        mask = rng.random(n) < 0.5
        text = None if rng.random() < 0.2 else int(rng.integers(0, 4))
        a = conditioned_forward(base, adapters, conds, x, text, mask)
        b = base_forward(base, x, text, mask)
        mismatches += not np.array_equal(a, b)
    dt = time.time() - t0
    report(1, "zero-init adapters leave the base output bitwise unchanged", mismatches == 0 and dt < 10,
           f"100 triples, {mismatches} mismatches, {dt:.1f}s")


def test_normalization_invariants(report):
    t0 = time.time()
    rng = np.random.default_rng(2)
    worst_root, worst_norm, degenerate = 0.0, 0.0, 0
    for i in range(1000):
        m = synth_motion(PATTERNS[i % 4], duration=float(rng.uniform(0.5, 2.0)), fps=float(rng.choice([15, 20, 30])),
                         seed=int(rng.integers(0, 2**31)))
        ranges = CameraRanges(distance=(2.0, 6.0), drift_speed=(0.0, 0.5))
        c = project(m, sample_camera(m.n_frames, m.fps, int(rng.integers(0, 2**31)), ranges,
                                     centroid=subject_centroid(m)))
        worst_root = max(worst_root, float(np.max(np.abs(c.cues[:, 0]))))
        norm = c.global_norm()
        if norm == 0:
            degenerate += 1
        else:
            worst_norm = max(worst_norm, abs(norm - 1))
    dt = time.time() - t0
    ok = worst_root == 0 and worst_norm <= 1e-9 and dt < 30
    report(2, "projected cues are root-anchored with unit global norm", ok,
           f"1000 cases, max|root|={worst_root:g}, max|norm-1|={worst_norm:.1e}, all-zero={degenerate}, {dt:.1f}s")


def test_gradient_correctness(report):
    t0 = time.time()
    errs = {}
    for name, make in PROBLEMS.items():
        loss_fn, params = make(0)
        errs[name] = grad_check(loss_fn, params, eps=1e-5, n_coords=200, seed=0)
    dt = time.time() - t0
    ok = max(errs.values()) < 1e-4 and dt < 60
    report(3, "analytic gradients match central finite differences", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f", d=8 N=6 eps=1e-5, {dt:.1f}s")


def test_loss_unit_values(report):
    f = torch.as_tensor(np.random.default_rng(3).normal(size=(2, 4, 5, 8)))
    e = np.zeros(8)
    e[0] = 1.0
    x = torch.as_tensor(np.tile(e, (2, 3, 1)))
    y = torch.as_tensor(np.tile(np.roll(e, 1), (2, 3, 1)))
    vals = {
        "L_3D(f,f)": (loss_3d_align(f, f).item(), 0.0),
        "L_O orthogonal": (loss_ortho(x, y).item(), 0.0),
        "L_O parallel": (loss_ortho(f, 2.5 * f).item(), 1.0),
        "L_O anti-parallel": (loss_ortho(f, -f).item(), 1.0),
    }
    worst = max(abs(v - target) for v, target in vals.values())
    report(4, "loss terms hit their exact values", worst <= 1e-12, f"max deviation {worst:.1e}")


def test_default_constants(report, capsys):
    code = main(["train", "--dump-config"])
    dump = json.loads(capsys.readouterr().out)
    t, s = dump["train"], dump["sampling"]
    got = {"lambda1": t["lambda1"], "lambda2": t["lambda2"], "lr": t["learning_rate"], "batch": t["batch_size"],
           "epochs": t["epochs"], "cfg-motion": s["cfg_motion"], "cfg-text": s["cfg_text"]}
    want = {"lambda1": 0.01, "lambda2": 10.0, "lr": 2e-4, "batch": 64, "epochs": 30, "cfg-motion": 2.0,
            "cfg-text": 4.0}
    report(5, "default config dump carries the published constants", code == 0 and got == want,
           ", ".join(f"{k}={v}" for k, v in got.items()))


def test_progressive_training_effect(report, pipeline):
    v = [r["val_L_3D"] for r in pipeline["s2"].val_history]
    drop = 1 - v[-1] / v[0]
    ablated = pipeline["s2_no_l3d"].val_history[-1]["val_L_3D"]
    n_clips = len(pipeline["data"][0])
    ok = drop >= 0.5 and ablated > v[-1] and n_clips >= 200 and pipeline["t_total"] < 15 * 60
    report(6, "stage-2 alignment loss falls by half and the no-L3D ablation ends higher", ok,
           f"val L_3D epoch1 {v[0]:.4f} -> final {v[-1]:.4f} ({100 * drop:.0f}% drop); "
           f"no_L3d final {ablated:.4f}; {n_clips} clips; pipeline {pipeline['t_total']:.0f}s")


def test_orthogonality_effect(report, pipeline):
    with_lo = pipeline["s3"].val_history[-1]["val_L_O"]
    without = pipeline["s3_no_lo"].val_history[-1]["val_L_O"]
    report(7, "orthogonality weight lowers held-out cos^2 between global and local features", with_lo < without,
           f"lambda1=0.01: {with_lo:.4f}, lambda1=0: {without:.4f}")


def test_freeze_invariants(report, pipeline):
    h_base, h3, h2 = pipeline["h_base"], pipeline["h3"], pipeline["h2"]
    cfg = pipeline["cfg"].with_(epochs=2, freeze_3dga=True)
    s3 = pipeline["s3"]
    # a fresh copy of stage 1 so the shared pipeline state stays untouched
    s3_copy = train_stage_3d(pipeline["base"].base, pipeline["cfg"].with_(epochs=1), pipeline["data"])
    ga_before = s3_copy.hashes()[ROLE_GA]
    frozen = train_stage_2d(pipeline["base"].base, s3_copy, cfg, pipeline["data"])
    checks = {
        "base across stage 1": h3["base"] == h_base,
        "base across stage 2": h2["base"] == h_base,
        "3D-LA across stage 2": h2[ROLE_LA3D] == h3[ROLE_LA3D],
        "3D-LA still in stage-1 state": s3.hashes()[ROLE_LA3D] == h3[ROLE_LA3D],
        "3D-GA with freeze_3dga": frozen.hashes()[ROLE_GA] == ga_before,
        "3D-GA trains by default": h2[ROLE_GA] != h3[ROLE_GA],
    }
    report(8, "frozen weights keep identical hashes", all(checks.values()),
           ", ".join(f"{k}: {'ok' if v else 'CHANGED'}" for k, v in checks.items()))


def test_cfg_degeneracies(report, pipeline, heldout):
    clips, cues = heldout
    base, la = pipeline["s2"].base, pipeline["s2"].adapters[ROLE_LA2D]
    independent, worst = 0, 0.0
    for i in range(10):
        t = int(clips.text[i])
        a = cfg_sample(base, la, cues[i], t, s_motion=0.0, s_text=4.0, seed=i)
        b = cfg_sample(base, la, cues[(i + 7) % N_HELDOUT], t, s_motion=0.0, s_text=4.0, seed=i)
        independent += a.frames.tobytes() == b.frames.tobytes()
        full = cfg_sample(base, la, cues[i], t, s_motion=1.0, s_text=1.0, seed=i)
        direct = conditional_sample(base, la, cues[i], t, seed=i)
        worst = max(worst, float(np.max(np.abs(full.frames - direct.frames))))
    ok = independent == 10 and worst <= 1e-12
    report(9, "guidance degeneracies hold on the trained model", ok,
           f"s_motion=0 cue-independent {independent}/10; s=(1,1) vs conditioned max diff {worst:.1e}")


def test_metric_oracles(report):
    checks = {}
    r = evaluate(static_motion(n=30))
    checks["static all zero"] = (r.jitter, r.fsr, r.ffl, r.fsd) == (0.0, 0.0, 0.0, 0.0)
    n, fps = 10, 20.0
    frames = static_motion(n=n, fps=fps).frames.copy()
    frames[:, SK.cue_slots["left_foot"], 0] += np.linspace(0.0, 0.2, n)
    frames[:, SK.cue_slots["right_foot"], 1] = 1.0
    slide = fsd(motion_from(frames, fps))
    checks[f"sliding fsd {slide!r}"] = abs(slide - 0.4) <= 1e-9
    n = 40
    frames = static_motion(n=n).frames.copy()
    airborne = np.zeros(n, bool)
    airborne[10:22] = True  # 12 of 40 frames
    frames[airborne, :, 1] += 0.3
    f = ffl(motion_from(frames))
    checks[f"jump ffl {f}"] = abs(f - 0.3) <= 1 / n
    w = evaluate(synth_motion("walk", seed=3))
    rel = relative_report(w, w).relative
    checks["self-relative zero"] = all(rel[k] == 0.0 for k in ("r_jitter", "r_fsr", "r_ffl", "r_fsd"))
    report(10, "metric oracles", all(checks.values()), ", ".join(f"{k}: {'ok' if v else 'BAD'}" for k, v in checks.items()))


def test_cross_module_consistency(report, tmp_path):
    rng = np.random.default_rng(11)
    worst = 0.0
    for i in range(50):
        m = synth_motion(PATTERNS[i % 4], seed=int(rng.integers(0, 2**31)), duration=float(rng.uniform(0.5, 2.0)))
        cam = sample_camera(m.n_frames, m.fps, int(rng.integers(0, 2**31)), centroid=subject_centroid(m))
        px = to_pixels(project_raw(m, cam), 1920, 1080)
        path = tmp_path / f"kp{i}.json"
        save_keypoints(RawKeypointTrack(m.fps, CUE_SLOTS, px, None), path)
        cues = map_to_canonical(load_keypoints(path), MappingConfig.identity())
        worst = max(worst, float(np.max(np.abs(cues.cues - project(m, cam).cues))))
    report(11, "pixel export then identity ingest reproduces projected cues", worst < 1e-6,
           f"50 cases, max abs diff {worst:.1e}")


def test_end_to_end_conditioning(report, pipeline, heldout):
    t0 = time.time()
    clips, cues = heldout
    base, la = pipeline["s2"].base, pipeline["s2"].adapters[ROLE_LA2D]

    def errors(s_motion, s_text):
        out = {"matching": [], "shuffled": [], "unconditional": []}
        for i, m in enumerate(clips.motions):
            t = int(clips.text[i])
            runs = {"matching": (cues[i], t), "shuffled": (cues[(i + 7) % N_HELDOUT], t), "unconditional": (None, None)}
            for k, (c, tt) in runs.items():
                s = cfg_sample(base, la, c, tt, s_motion, s_text, seed=i, n_frames=m.n_frames)
                out[k].append(float(np.mean((s.frames - m.frames) ** 2)))
        return {k: float(np.mean(v)) for k, v in out.items()}

    e = errors(2.0, 1.0)
    e_default = errors(2.0, 4.0)
    dt = time.time() - t0
    ok = e["matching"] < e["shuffled"] and e["matching"] < e["unconditional"] and dt + pipeline["t_main"] < 20 * 60
    report(12, "matching cues reconstruct held-out clips better than shuffled cues or no conditioning", ok,
           f"{N_HELDOUT} clips at s_motion=2 s_text=1: matching {e['matching']:.4f}, shuffled {e['shuffled']:.4f}, "
           f"unconditional {e['unconditional']:.4f}; at s_text=4 (not scored): matching {e_default['matching']:.4f}, "
           f"shuffled {e_default['shuffled']:.4f}, unconditional {e_default['unconditional']:.4f}")


def test_cli_replay_determinism(report, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    tiny = {"epochs": 1, "n_clips": 8, "n_val": 4, "batch_size": 4, "clip_seconds": 1.0,
            "model": {"d": 8, "n_blocks": 1, "n_max": 20, "kernel": 3}}
    (tmp_path / "tiny.json").write_text(json.dumps(tiny))
    frames = static_motion(n=20).frames.copy()
    runs = [
        ["synth", "--pattern", "walk", "--seed", "3", "--duration", "1", "--out", "m.json"],
        ["project", "m.json", "--seed", "4", "--augment", "on", "--export-keypoints", "kp.json",
         "--camera-out", "cam.json", "--out", "c.json"],
        ["ingest", "kp.json", "--mapping", "identity", "--out", "i.json"],
        ["validate", "c.json", "--out", "v.json"],
        ["train", "--stage", "base", "--config", "tiny.json", "--out", "b.npz"],
        ["train", "--stage", "3d", "--config", "tiny.json", "--from", "b.npz", "--out", "k3.npz"],
        ["train", "--stage", "2d", "--config", "tiny.json", "--from", "k3.npz", "--out", "k2.npz"],
        ["sample", "k2.npz", "--cues", "c.json", "--text", "walk forward", "--seed", "5", "--out", "s.json"],
        ["eval", "s.json", "--baseline", "m.json", "--csv", "t.csv", "--out", "e.json"],
        ["edit", "m.json", "--scale-root-y", "1.5", "--arm-spread", "30", "--out", "ed.json"],
    ]
    failures = []
    for args in runs:
        assert main(args) == 0, args
        out = args[args.index("--out") + 1]
        manifest = json.loads((tmp_path / f"{out}.manifest.json").read_text())
        assert main(["replay", f"{out}.manifest.json", "--outdir", "replay"]) == 0
        again = json.loads((tmp_path / "replay" / f"{out}.manifest.json").read_text())
        for key, rec in manifest["outputs"].items():
            if again["outputs"][key]["sha256"] != rec["sha256"]:
                failures.append(f"{args[0]}:{key}")
    subs = sorted({a[0] for a in runs})
    report(13, "every subcommand replays bitwise from its manifest", not failures,
           f"{len(runs)} runs over {', '.join(subs)}; differing outputs: {failures or 'none'}")
