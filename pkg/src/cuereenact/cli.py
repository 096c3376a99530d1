"""Command-line entry point: ``cuereenact <subcommand>``.

Every run writes ``<output>.manifest.json`` next to its primary output. The
manifest records the fully resolved parameters, so ``cuereenact replay`` can
re-run any invocation and reproduce its outputs bit for bit.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error, 3 internal error.
"""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .edit import edit_arm_spread, edit_root_vertical
from .errors import ValidationError
from .ingest import (
    DEFAULT_JUMP_THRESHOLD,
    RawKeypointTrack,
    load_keypoints,
    load_mapping,
    map_to_canonical,
    save_keypoints,
    validate_cues,
)
from .manifest import build_manifest, manifest_path, read_manifest, write_manifest
from .metrics import ContactModel, evaluate, relative_report, write_table
from .model import PROMPTS, cfg_sample, load_checkpoint, save_checkpoint
from .motion import load_cues, load_motion, save_cues, save_motion, write_json
from .projection import (
    AugmentConfig,
    CameraRanges,
    augment,
    project,
    project_raw,
    sample_camera,
    subject_centroid,
    to_pixels,
)
from .skeleton import CUE_SLOTS
from .synth import PATTERNS, synth_motion
from .training import (
    ABLATIONS,
    ROLE_LA3D,
    TrainConfig,
    make_datasets,
    pretrain_base,
    state_from_checkpoint,
    substream_seed,
    train_stage_2d,
    train_stage_3d,
    write_loss_table,
)

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3
OUTDIR_ENV = "CUEREENACT_OUTDIR"
SAMPLING_DEFAULTS = {"cfg_motion": 2.0, "cfg_text": 4.0, "steps": 4}

# parameters holding output paths, per subcommand (replay may relocate them)
OUTPUT_PARAMS = {
    "synth": ("out",),
    "project": ("out", "export_keypoints", "camera_out"),
    "ingest": ("out",),
    "validate": ("out",),
    "train": ("out", "loss_table"),
    "sample": ("out",),
    "eval": ("out", "csv"),
    "edit": ("out",),
}


def default_config() -> dict:
    return {"train": TrainConfig().to_dict(), "sampling": dict(SAMPLING_DEFAULTS)}


def _out(path):
    if path is None:
        return None
    p = Path(path)
    root = os.environ.get(OUTDIR_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return str(p)


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: malformed JSON config at line {e.lineno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return data


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _text_id(text):
    if text is None:
        return None
    if isinstance(text, int) or str(text).isdigit():
        i = int(text)
        if not 0 <= i < len(PROMPTS):
            raise ValidationError(f"text id {i} out of range 0..{len(PROMPTS) - 1}")
        return i
    if text not in PROMPTS:
        raise ValidationError(f"unknown prompt {text!r}; choose from {list(PROMPTS)}")
    return PROMPTS.index(text)


# ----------------------------------------------------------- subcommand bodies
# each takes the resolved parameter dict and returns (inputs, outputs, extra)


def do_synth(p):
    m = synth_motion(p["pattern"], p["amplitude"], p["period"], p["duration"], p["fps"], p["seed"], p["heading"])
    save_motion(m, p["out"])
    return {}, {"out": p["out"]}, {}


def do_project(p):
    motion = load_motion(p["motion"])
    cfg = p["config"]
    ranges = CameraRanges.from_dict(cfg["camera"])
    cam = sample_camera(motion.n_frames, motion.fps, substream_seed(p["seed"], "camera"), ranges,
                        centroid=subject_centroid(motion))
    cues = project(motion, cam)
    if p["augment"]:
        cues = augment(cues, AugmentConfig.from_dict(cfg["augment"]), substream_seed(p["seed"], "augment"))
    save_cues(cues, p["out"])
    outputs = {"out": p["out"]}
    if p.get("export_keypoints"):
        px = to_pixels(project_raw(motion, cam), p["width"], p["height"])
        track = RawKeypointTrack(motion.fps, CUE_SLOTS, px, np.ones(px.shape[:2]))
        save_keypoints(track, p["export_keypoints"])
        outputs["export_keypoints"] = p["export_keypoints"]
    if p.get("camera_out"):
        write_json(p["camera_out"], cam.to_dict())
        outputs["camera_out"] = p["camera_out"]
    return {"motion": p["motion"]}, outputs, {}


def do_ingest(p):
    track = load_keypoints(p["keypoints"])
    mapping = load_mapping(p["mapping"])
    if p.get("confidence_floor") is not None:
        mapping = type(mapping)(mapping.entries, p["confidence_floor"])
    cues = map_to_canonical(track, mapping)
    save_cues(cues, p["out"])
    inputs = {"keypoints": p["keypoints"]}
    if Path(str(p["mapping"])).is_file():
        inputs["mapping"] = p["mapping"]
    return inputs, {"out": p["out"]}, {"mapping": mapping.to_dict()}


def do_validate(p):
    report = validate_cues(load_cues(p["cues"]), p["jump_threshold"])
    text = json.dumps(report, indent=2, sort_keys=True)
    if p.get("out"):
        Path(p["out"]).write_text(text + "\n")
    click.echo(text)
    if p["strict"] and not report["ok"]:
        raise ValidationError("cue file failed validation")
    return {"cues": p["cues"]}, {"out": p.get("out")}, {}


def do_train(p):
    cfg = TrainConfig.from_dict(p["config"])
    stage = p["stage"]
    cfg = cfg.with_(stage=stage)
    cfg.validate()
    data = make_datasets(cfg)
    extra = {}
    if stage == "base":
        state = pretrain_base(cfg, data)
    elif stage == "3d":
        if p.get("from"):
            base = load_checkpoint(p["from"]).base
        else:
            base = pretrain_base(cfg, data).base
            extra["base_pretrained_inline"] = True
        state = train_stage_3d(base, cfg, data)
    else:
        prev = None
        if p.get("from"):
            ck = load_checkpoint(p["from"])
            prev = state_from_checkpoint(ck, cfg)
            base = ck.base
        elif cfg.no_L3d and cfg.allow_cold_start:
            base = pretrain_base(cfg, data).base
        else:
            raise ValidationError("stage 2d needs --from <stage-3d checkpoint>")
        before = prev.hashes() if prev is not None else {}
        state = train_stage_2d(base, prev, cfg, data)
        after = state.hashes()
        extra["frozen_hashes"] = {
            k: {"before": before[k], "after": after.get(k)} for k in ("base", ROLE_LA3D) if k in before
        }
    save_checkpoint(state.checkpoint(), p["out"])
    write_loss_table(state.history, p["loss_table"])
    extra["weight_hashes"] = state.hashes()
    extra["objective_weights"] = state.weights
    extra["validation"] = state.val_history
    return ({"from": p.get("from")}, {"out": p["out"], "loss_table": p["loss_table"]}, extra)


def do_sample(p):
    ck = load_checkpoint(p["checkpoint"])
    role = ck.meta.get("inference_adapter")
    la = ck.adapters.get(role) if role else None
    cues = load_cues(p["cues"]) if p.get("cues") else None
    if cues is not None and la is None:
        raise ValidationError("checkpoint has no local adapter for cue conditioning")
    m = cfg_sample(ck.base, la, cues, _text_id(p.get("text")), p["cfg_motion"], p["cfg_text"], p["seed"],
                   p["steps"], p.get("n_frames"), p.get("fps"))
    save_motion(m, p["out"])
    inputs = {"checkpoint": p["checkpoint"], "cues": p.get("cues")}
    return inputs, {"out": p["out"]}, {"adapter": role, "guidance": "p_uu + s_text*(p_tu-p_uu) + s_motion*(p_tc-p_tu)"}


def do_eval(p):
    model = ContactModel(**p["contact"])
    report = evaluate(load_motion(p["motion"]), model)
    inputs = {"motion": p["motion"]}
    if p.get("baseline"):
        report = relative_report(report, evaluate(load_motion(p["baseline"]), model))
        inputs["baseline"] = p["baseline"]
    d = report.to_dict()
    d["inputs"] = {k: v for k, v in inputs.items()}
    Path(p["out"]).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    outputs = {"out": p["out"]}
    if p.get("csv"):
        if report.relative is None:
            raise ValidationError("--csv needs --baseline (the table holds relative metrics)")
        write_table([(Path(p["motion"]).stem, report)], p["csv"])
        outputs["csv"] = p["csv"]
    return inputs, outputs, {}


def do_edit(p):
    if p.get("scale_root_y") is None and p.get("arm_spread") is None:
        raise ValidationError("give --scale-root-y and/or --arm-spread")
    m = load_motion(p["motion"])
    if p.get("scale_root_y") is not None:
        m = edit_root_vertical(m, p["scale_root_y"])
    if p.get("arm_spread") is not None:
        m = edit_arm_spread(m, p["arm_spread"])
    save_motion(m, p["out"])
    return {"motion": p["motion"]}, {"out": p["out"]}, {"order": ["scale_root_y", "arm_spread"]}


RUNNERS = {
    "synth": do_synth,
    "project": do_project,
    "ingest": do_ingest,
    "validate": do_validate,
    "train": do_train,
    "sample": do_sample,
    "eval": do_eval,
    "edit": do_edit,
}


def run(subcommand: str, params: dict) -> dict:
    inputs, outputs, extra = RUNNERS[subcommand](params)
    manifest = build_manifest(subcommand, params, inputs, outputs, extra)
    primary = outputs.get("out") or params.get("cues")
    write_manifest(manifest_path(primary), manifest)
    return manifest


# ------------------------------------------------------------------- click


@click.group()
@click.version_option(__version__)
def cli():
    """Sparse-cue motion reenactment toolkit."""


@cli.command()
@click.option("--pattern", type=click.Choice(PATTERNS), required=True)
@click.option("--amplitude", type=float, default=None, help="Pattern amplitude (m); pattern default if omitted.")
@click.option("--period", type=float, default=None, help="Pattern period (s).")
@click.option("--duration", type=float, default=2.0, show_default=True)
@click.option("--fps", type=float, default=20.0, show_default=True)
@click.option("--heading", type=float, default=None, help="Facing direction in degrees (0 = +Z); seeded if omitted.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def synth(**kw):
    """Write a procedural motion file."""
    kw["out"] = _out(kw["out"])
    run("synth", kw)


@cli.command("project")
@click.argument("motion", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True, help="Seeds the camera and augmentation substreams.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="JSON with optional 'camera' and 'augment' sections.")
@click.option("--augment", "augment_flag", type=click.Choice(["on", "off"]), default=None,
              help="Apply augmentations (default: on only when the config has an 'augment' section).")
@click.option("--export-keypoints", type=click.Path(dir_okay=False), default=None,
              help="Also write the raw projection as a pixel keypoint file.")
@click.option("--camera-out", type=click.Path(dir_okay=False), default=None)
@click.option("--width", type=int, default=1920, show_default=True)
@click.option("--height", type=int, default=1080, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def project_cmd(motion, seed, config_path, augment_flag, export_keypoints, camera_out, width, height, out):
    """Project a motion through a sampled virtual camera into 2D cues."""
    file_cfg = _read_config(config_path)
    cfg = {
        "camera": _merge({k: list(v) if isinstance(v, tuple) else v
                          for k, v in CameraRanges().__dict__.items()}, file_cfg.get("camera", {})),
        "augment": _merge(AugmentConfig().to_dict(), file_cfg.get("augment", {})),
    }
    cfg["augment"] = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg["augment"].items()}
    use_aug = ("augment" in file_cfg) if augment_flag is None else augment_flag == "on"
    params = {
        "motion": motion, "seed": seed, "config": cfg, "augment": use_aug,
        "export_keypoints": _out(export_keypoints), "camera_out": _out(camera_out),
        "width": width, "height": height, "out": _out(out),
    }
    run("project", params)


@cli.command()
@click.argument("keypoints", type=click.Path(dir_okay=False))
@click.option("--mapping", default="identity", show_default=True,
              help="Mapping JSON path or built-in name: identity, coco17_human, ap10k_quadruped.")
@click.option("--confidence-floor", type=float, default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def ingest(keypoints, mapping, confidence_floor, out):
    """Map an external 2D keypoint file onto the canonical cue slots."""
    run("ingest", {"keypoints": keypoints, "mapping": mapping, "confidence_floor": confidence_floor,
                   "out": _out(out)})


@cli.command("validate")
@click.argument("cues", type=click.Path(dir_okay=False))
@click.option("--jump-threshold", type=float, default=DEFAULT_JUMP_THRESHOLD, show_default=True)
@click.option("--strict", is_flag=True, help="Exit with status 1 when anything is flagged.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the JSON report here.")
def validate_cmd(cues, jump_threshold, strict, out):
    """Report cue invariant violations, validity rates and tracking jumps."""
    run("validate", {"cues": cues, "jump_threshold": jump_threshold, "strict": strict, "out": _out(out)})


_ABLATE_FLAGS = {a.replace("_", "-").lower(): a for a in ABLATIONS}


@cli.command()
@click.option("--stage", type=click.Choice(["base", "3d", "2d"]), default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="JSON training config (keys of the 'train' section of --dump-config).")
@click.option("--from", "from_", type=click.Path(dir_okay=False), default=None,
              help="Input checkpoint (base for --stage 3d, stage-3d for --stage 2d).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output checkpoint (.npz).")
@click.option("--ablate", multiple=True, type=click.Choice(sorted(_ABLATE_FLAGS)))
@click.option("--cold-start", is_flag=True, help="Allow --stage 2d without --from when no-l3d is set.")
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lambda1", type=float, default=None)
@click.option("--lambda2", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--dump-config", is_flag=True, help="Print the default configuration and exit.")
def train(stage, config_path, from_, out, ablate, cold_start, lr, batch_size, epochs, lambda1, lambda2, seed,
          dump_config):
    """Train the base generator or one adapter stage."""
    if dump_config:
        click.echo(json.dumps(default_config(), indent=2, sort_keys=True))
        return
    if stage is None or out is None:
        raise click.UsageError("--stage and --out are required")
    cfg = _merge(TrainConfig().to_dict(), _read_config(config_path))
    flags = {"learning_rate": lr, "batch_size": batch_size, "epochs": epochs, "lambda1": lambda1,
             "lambda2": lambda2, "seed": seed}
    cfg.update({k: v for k, v in flags.items() if v is not None})
    for a in ablate:
        cfg[_ABLATE_FLAGS[a]] = True
    if cold_start:
        cfg["allow_cold_start"] = True
    cfg["stage"] = stage
    out = _out(out)
    params = {"stage": stage, "config": cfg, "from": from_, "out": out,
              "loss_table": str(Path(out).with_suffix("")) + ".losses.csv", "seed": cfg["seed"]}
    run("train", params)


@cli.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option("--cues", type=click.Path(dir_okay=False), default=None)
@click.option("--text", default=None, help=f"Prompt or prompt index: {list(PROMPTS)}.")
@click.option("--cfg-motion", type=float, default=SAMPLING_DEFAULTS["cfg_motion"], show_default=True)
@click.option("--cfg-text", type=float, default=SAMPLING_DEFAULTS["cfg_text"], show_default=True)
@click.option("--steps", type=int, default=SAMPLING_DEFAULTS["steps"], show_default=True)
@click.option("--n-frames", type=int, default=None, help="Length when sampling without cues.")
@click.option("--fps", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def sample(**kw):
    """Sample a motion with classifier-free guidance over text and cue conditions."""
    kw["out"] = _out(kw["out"])
    run("sample", kw)


@cli.command("eval")
@click.argument("motion", type=click.Path(dir_okay=False))
@click.option("--baseline", type=click.Path(dir_okay=False), default=None)
@click.option("--contact-config", type=click.Path(dir_okay=False), default=None,
              help="JSON with contact_height, skate_speed, float_height.")
@click.option("--contact-height", type=float, default=None)
@click.option("--skate-speed", type=float, default=None)
@click.option("--float-height", type=float, default=None)
@click.option("--csv", type=click.Path(dir_okay=False), default=None, help="Relative-metric table.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def eval_cmd(motion, baseline, contact_config, contact_height, skate_speed, float_height, csv, out):
    """Physical metrics of a motion, optionally relative to a baseline."""
    contact = _merge(ContactModel().__dict__, _read_config(contact_config))
    flags = {"contact_height": contact_height, "skate_speed": skate_speed, "float_height": float_height}
    contact.update({k: v for k, v in flags.items() if v is not None})
    run("eval", {"motion": motion, "baseline": baseline, "contact": contact, "csv": _out(csv), "out": _out(out)})


@cli.command()
@click.argument("motion", type=click.Path(dir_okay=False))
@click.option("--scale-root-y", type=float, default=None, help="Scale vertical root offset (applied first).")
@click.option("--arm-spread", type=float, default=None, help="Arm-to-forward angle in degrees (applied second).")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def edit(**kw):
    """Trajectory-free edits: jump height and arm spread."""
    kw["out"] = _out(kw["out"])
    run("edit", kw)


@cli.command()
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.option("--outdir", type=click.Path(file_okay=False), default=None,
              help="Write outputs into this directory instead of their recorded paths.")
def replay(manifest, outdir):
    """Re-run an invocation from its manifest."""
    m = read_manifest(manifest)
    sub = m["subcommand"]
    if sub not in RUNNERS:
        raise ValidationError(f"manifest names unknown subcommand {sub!r}")
    params = dict(m["params"])
    if outdir:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        for key in OUTPUT_PARAMS[sub]:
            if params.get(key):
                params[key] = str(Path(outdir) / Path(params[key]).name)
    new = run(sub, params)
    for key, rec in m["outputs"].items():
        got = new["outputs"].get(key, {}).get("sha256")
        status = "identical" if got == rec["sha256"] else "DIFFERENT"
        click.echo(f"{key}: {status}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="cuereenact", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_VALIDATION
    except click.ClickException as e:
        e.show()
        return EXIT_VALIDATION
    except ValidationError as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_VALIDATION
    except OSError as e:
        click.echo(f"I/O error: {e}", err=True)
        return EXIT_IO
    except Exception as e:  # noqa: BLE001
        click.echo(f"internal error: {type(e).__name__}: {e}", err=True)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
