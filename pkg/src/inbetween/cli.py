"""Command-line entry points: training, generation, evaluation,
benchmarking, and the HTTP service.

Run configuration is a JSON object::

    {
      "corpus": "path/to/manifest.json",   // default: bundled corpus
      "style": "30hz-22joint",             // optional rig check
      "seed": 0,
      "out": "runs/exp1",
      "manifold": { ...ManifoldConfig fields... },
      "sampler": { ...SamplerConfig fields... }
    }

Unknown keys anywhere are rejected; omitted hyperparameters take the
full-scale defaults.  The corpus path is resolved relative to the
config file; ``out`` is resolved relative to the working directory.
``--seed`` and ``--out`` override the config.

Every command is deterministic given (config, seed, corpus): training
emits one ``iter=...`` loss line per iteration (also written to
``<out>/train_*.log``), and resuming from a checkpoint continues the
exact uninterrupted run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
from dataclasses import dataclass, field, fields as dc_fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import kinematics as kin
from .autodiff import NonFiniteError
from .bvh import load_bvh_file, write_bvh
from .checkpoint import load_checkpoint, skeleton_to_dict
from .data import (NormStats, bundled_corpus_path, extract_features,
                   load_corpus, make_windows)
from .engine import (ModelBundle, bench_latency, decanonicalize_state,
                     generate)
from .manifold import (Manifold, ManifoldConfig, ManifoldTrainer,
                       SequenceSet, manifold_sequences,
                       reconstruction_error_cm)
from .metrics import bone_length_error, evaluate, foot_skate
from .sampler import (Sampler, SamplerConfig, SamplerTrainer,
                      final_frame_error_cm, sampler_sequences)

__all__ = ["RunConfig", "load_run_config", "main"]

# windows used for normalization statistics (matches sampler training)
NORM_WINDOW_LEN = 50
NORM_OVERLAP = 25

_RUN_KEYS = {"corpus", "style", "seed", "out", "manifold", "sampler"}
_STYLES = {"30hz-22joint": (30.0, 22), "25hz-21joint": (25.0, 21)}

# fields a --resume run may change (they only shape the remaining
# schedule); everything else must match the checkpoint
_MANIFOLD_SCHEDULE = {"stage1_iters", "stage2_iters", "eval_every",
                      "stop_recon_cm"}
_SAMPLER_SCHEDULE = {"iterations", "eval_every", "stop_target_cm"}

_POSITIVE_INTS = {
    "d_z", "n_experts", "encoder_hidden", "expert_hidden",
    "gating_hidden", "seq_len", "batch_size", "enc_hidden", "enc_out",
    "lstm_hidden", "dec_hidden", "dec_hidden2", "eval_every",
}
_POSITIVE_FLOATS = {"lr", "lr_start", "lr_end", "scale_floor"}


# ---------------------------------------------------------------------
# run configuration

@dataclass
class RunConfig:
    corpus: Path
    seed: int = 0
    out: Path | None = None
    style: str | None = None
    manifold: ManifoldConfig = field(default_factory=ManifoldConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    # keys the user spelled out (for default inheritance)
    manifold_keys: frozenset = frozenset()
    sampler_keys: frozenset = frozenset()


def _section_config(cls, raw, label):
    if not isinstance(raw, dict):
        raise ValueError(f"config section {label!r} must be an object")
    allowed = {f.name for f in dc_fields(cls)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ValueError(f"config section {label!r} has unknown keys: "
                         + ", ".join(unknown))
    try:
        cfg = cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"config section {label!r}: {exc}") from exc
    for f in dc_fields(cls):
        v = getattr(cfg, f.name)
        if f.name in _POSITIVE_INTS and (not isinstance(v, int)
                                         or v < 1):
            raise ValueError(f"config section {label!r}: {f.name} must "
                             f"be a positive integer, got {v!r}")
        if f.name in _POSITIVE_FLOATS and not v > 0:
            raise ValueError(f"config section {label!r}: {f.name} must "
                             f"be positive, got {v!r}")
        if isinstance(v, float) and not np.isfinite(v):
            raise ValueError(f"config section {label!r}: {f.name} must "
                             f"be finite")
    return cfg


def load_run_config(path=None, seed=None, out=None) -> RunConfig:
    """Parse and validate a run-config JSON file (all keys optional);
    ``seed``/``out`` are command-line overrides."""
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValueError(f"config file {path}: root must be a JSON "
                             "object")
        unknown = sorted(set(raw) - _RUN_KEYS)
        if unknown:
            raise ValueError(f"config file {path}: unknown keys: "
                             + ", ".join(unknown))
        base = path.parent

    corpus = (base / raw["corpus"] if "corpus" in raw
              else bundled_corpus_path())
    style = raw.get("style")
    if style is not None and style not in _STYLES:
        raise ValueError(f"unknown dataset style {style!r}; expected "
                         "one of: " + ", ".join(sorted(_STYLES)))
    if seed is None:
        seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, "
                         f"got {seed!r}")
    if out is None:
        out = raw.get("out")
    return RunConfig(
        corpus=corpus, seed=seed,
        out=Path(out) if out is not None else None, style=style,
        manifold=_section_config(ManifoldConfig,
                                 raw.get("manifold", {}), "manifold"),
        sampler=_section_config(SamplerConfig,
                                raw.get("sampler", {}), "sampler"),
        manifold_keys=frozenset(raw.get("manifold", {})),
        sampler_keys=frozenset(raw.get("sampler", {})))


def _load_clips(cfg: RunConfig):
    if not cfg.corpus.exists():
        raise FileNotFoundError(f"corpus manifest not found: "
                                f"{cfg.corpus}")
    clips = load_corpus(cfg.corpus)
    if cfg.style:
        rate, joints = _STYLES[cfg.style]
        for c in clips:
            if c.skeleton.n_joints != joints or c.frame_rate != rate:
                raise ValueError(
                    f"clip {c.name!r} is {c.skeleton.n_joints} joints "
                    f"at {c.frame_rate:g} Hz, but style {cfg.style!r} "
                    f"expects {joints} joints at {rate:g} Hz")
    return clips


def _norm_stats(clips):
    windows = [w for c in clips
               for w in make_windows(c, NORM_WINDOW_LEN, NORM_OVERLAP)]
    if not windows:
        raise ValueError(f"corpus has no {NORM_WINDOW_LEN}-frame "
                         "windows for normalization statistics")
    return NormStats.from_windows(windows)


def _require_out(cfg: RunConfig) -> Path:
    if cfg.out is None:
        raise ValueError("an output directory is required "
                         "(--out or config key 'out')")
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def _check_resume_config(old: dict, want, schedule_fields, label):
    """A resumed run may reshape the remaining schedule but must keep
    the architecture/optimization fields of the checkpoint."""
    want_d = want.to_dict()
    bad = sorted(k for k in want_d
                 if k not in schedule_fields and want_d[k] != old.get(k))
    if bad:
        raise ValueError(f"--resume cannot change non-schedule "
                         f"{label} fields: " + ", ".join(bad))


def _params_digest(params) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


class _Logger:
    """Collects log lines and mirrors them to stdout."""

    def __init__(self):
        self.lines = []

    def __call__(self, line):
        self.lines.append(line)
        print(line, flush=True)


# ---------------------------------------------------------------------
# bundle loading

def _bundle_paths(args):
    if getattr(args, "bundle", None):
        d = Path(args.bundle)
        m, s = d / "manifold.npz", d / "sampler.npz"
    else:
        if not (getattr(args, "manifold", None)
                and getattr(args, "sampler", None)):
            raise ValueError("provide --bundle DIR (holding manifold.npz"
                             " and sampler.npz) or both --manifold and "
                             "--sampler")
        m, s = Path(args.manifold), Path(args.sampler)
    for p in (m, s):
        if not p.exists():
            raise FileNotFoundError(f"checkpoint not found: {p}")
    return m, s


def _load_bundle(args) -> ModelBundle:
    m, s = _bundle_paths(args)
    return ModelBundle.load(m, s)


def _synthetic_bundle(seed=0) -> ModelBundle:
    """Untrained bundle at the full-scale layer sizes (benchmarks)."""
    sk = kin.skeleton_22()
    manifold = Manifold(sk, ManifoldConfig(), seed=seed)
    sampler = Sampler(sk, SamplerConfig(), seed=seed + 1)
    dim = 3 * len(sk.pos_joints)
    return ModelBundle(skeleton=sk, manifold=manifold, sampler=sampler,
                       norm_stats=NormStats(np.zeros(dim), np.ones(dim)))


# ---------------------------------------------------------------------
# commands

def cmd_train_manifold(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, out=args.out)
    out = _require_out(cfg)
    clips = _load_clips(cfg)
    sk = clips[0].skeleton
    mc = cfg.manifold
    feats = manifold_sequences(clips, seq_len=mc.seq_len,
                               window_len=2 * mc.seq_len,
                               overlap=mc.seq_len)
    seqs = SequenceSet(feats, clips[0].frame_rate)
    log = _Logger()
    if args.resume:
        ckpt = load_checkpoint(Path(args.resume), expect_kind="manifold")
        if ckpt.meta["skeleton"] != skeleton_to_dict(sk):
            raise ValueError("the checkpoint was trained against a "
                             "different skeleton than this corpus")
        _check_resume_config(ckpt.config, mc, _MANIFOLD_SCHEDULE,
                             "manifold")
        trainer = ManifoldTrainer.restore(ckpt, seqs)
        trainer.m.config = mc
        log(f"resumed {args.resume} at iteration {trainer.iteration} "
            f"(stage {trainer.stage})")
    else:
        manifold = Manifold(sk, mc, seed=cfg.seed)
        trainer = ManifoldTrainer(manifold, seqs, seed=cfg.seed,
                                  norm_stats=_norm_stats(clips))
    log(f"corpus clips={len(clips)} sequences={seqs.n} "
        f"seq_len={seqs.T} seed={trainer.seed}")

    def stop(tr):
        err = reconstruction_error_cm(tr.m, tr.seqs)
        log(f"probe iter={tr.iteration} recon_cm={err:.6f}")
        return err < tr.m.config.stop_recon_cm

    trainer.run_two_stage(log_fn=log, stop_fn=stop)
    path = out / "manifold.npz"
    trainer.save(path)
    (out / "train_manifold.log").write_text(
        "\n".join(trainer.log_lines) + "\n", encoding="utf-8")
    log(f"final recon_cm={reconstruction_error_cm(trainer.m, seqs):.6f}")
    log(f"saved {path} at iteration {trainer.iteration}")
    return 0


def cmd_train_sampler(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, out=args.out)
    out = _require_out(cfg)
    clips = _load_clips(cfg)
    sk = clips[0].skeleton
    mckpt = load_checkpoint(Path(args.manifold), expect_kind="manifold")
    if mckpt.meta["skeleton"] != skeleton_to_dict(sk):
        raise ValueError("the manifold checkpoint was trained against "
                         "a different skeleton than this corpus")
    manifold = Manifold(mckpt.skeleton,
                        ManifoldConfig.from_dict(mckpt.config),
                        params=mckpt.params)
    log = _Logger()
    sc = cfg.sampler
    if "d_z" not in cfg.sampler_keys and sc.d_z != manifold.config.d_z:
        sc = replace(sc, d_z=manifold.config.d_z)
        log(f"sampler d_z={sc.d_z} (inherited from the manifold)")
    freeze_before = _params_digest(manifold.params)

    seqs = sampler_sequences(clips)
    if args.resume:
        sckpt = load_checkpoint(Path(args.resume), expect_kind="sampler")
        if sckpt.meta["skeleton"] != skeleton_to_dict(sk):
            raise ValueError("the sampler checkpoint was trained "
                             "against a different skeleton than this "
                             "corpus")
        _check_resume_config(sckpt.config, sc, _SAMPLER_SCHEDULE,
                             "sampler")
        trainer = SamplerTrainer.restore(sckpt, manifold, seqs)
        trainer.s.config = sc
        log(f"resumed {args.resume} at iteration {trainer.iteration}")
    else:
        sampler = Sampler(sk, sc, seed=cfg.seed)
        trainer = SamplerTrainer(sampler, manifold, seqs,
                                 _norm_stats(clips), seed=cfg.seed)
    log(f"corpus clips={len(clips)} sequences={seqs.n} "
        f"seq_len={seqs.T} seed={trainer.seed}")
    probe_len = min(15, sc.len_max)

    def stop(tr):
        err = final_frame_error_cm(tr.m, tr.s, tr.seqs, tr.norm,
                                   length=probe_len, seed=0)
        log(f"probe iter={tr.iteration} target_cm={err:.6f}")
        return err < tr.s.config.stop_target_cm

    trainer.run_training(log_fn=log, stop_fn=stop)
    if _params_digest(manifold.params) != freeze_before:
        print("error: manifold parameters changed during sampler "
              "training (freeze violated)", file=sys.stderr)
        return 1
    log(f"manifold_freeze=verified digest={freeze_before[:16]}")
    path = out / "sampler.npz"
    trainer.save(path)
    (out / "train_sampler.log").write_text(
        "\n".join(trainer.log_lines) + "\n", encoding="utf-8")
    copied = out / "manifold.npz"
    if copied.resolve() != Path(args.manifold).resolve():
        shutil.copyfile(args.manifold, copied)
        log(f"copied the frozen manifold next to it: {copied}")
    log(f"saved {path} at iteration {trainer.iteration}")
    return 0


def _clip_frame_state(clip, i):
    """World-space FrameState at clip frame ``i`` (true finite-
    difference velocities where available)."""
    if not 0 <= i < clip.n_frames:
        raise ValueError(f"frame index {i} outside the clip "
                         f"(0..{clip.n_frames - 1})")
    lo = max(0, i - 1)
    feats = extract_features(clip, lo, min(2, clip.n_frames - lo))
    return decanonicalize_state(feats.frame(i - lo), feats.transform)


def cmd_generate(args) -> int:
    bundle = _load_bundle(args)
    path = Path(args.bvh)
    if not path.exists():
        raise FileNotFoundError(f"BVH file not found: {path}")
    _, clip_in = load_bvh_file(path, name=path.name)
    if skeleton_to_dict(clip_in.skeleton) != skeleton_to_dict(
            bundle.skeleton):
        raise ValueError("the input rig does not match the skeleton "
                         "the models were trained on")
    start = _clip_frame_state(clip_in, args.start_frame)
    target = _clip_frame_state(clip_in, args.target_frame)
    clip = generate(bundle, start, target, args.duration,
                    seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / "generated.bvh"
    dest.write_text(write_bvh(clip), encoding="utf-8")
    print(f"frames={clip.n_frames} extrapolation={clip.extrapolation} "
          f"per_frame_ms={clip.per_frame_ms:.3f}")
    print(f"self_report.bone_cm={bone_length_error(clip):.10e}")
    print(f"self_report.skate={foot_skate(clip):.10e}")
    print(f"wrote {dest}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, out=args.out)
    bundle = _load_bundle(args)
    clips = _load_clips(cfg)
    try:
        lengths = tuple(int(s) for s in args.lengths.split(","))
    except ValueError as exc:
        raise ValueError(f"--lengths must be comma-separated integers, "
                         f"got {args.lengths!r}") from exc
    report = evaluate(bundle, clips, lengths=lengths, seed=cfg.seed,
                      window_len=args.window_len, overlap=args.overlap)
    print(report.to_table(), end="")
    if cfg.out is not None:
        out = _require_out(cfg)
        (out / "report.txt").write_text(report.to_text(),
                                        encoding="utf-8")
        (out / "report_table.txt").write_text(report.to_table(),
                                              encoding="utf-8")
        rows = {src: {str(n): row.values() for n, row in by_n.items()}
                for src, by_n in report.rows.items()}
        (out / "report.json").write_text(json.dumps(
            {"window_len": report.window_len,
             "overlap": report.overlap,
             "lengths": list(report.lengths),
             "units": report.UNITS,
             "rows": rows,
             "latency_ms": report.latency_ms},
            indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"wrote {out / 'report.txt'}, report_table.txt, "
              "report.json")
    return 0


def cmd_bench(args) -> int:
    if getattr(args, "bundle", None) or getattr(args, "manifold", None):
        bundle = _load_bundle(args)
    else:
        bundle = _synthetic_bundle(seed=args.seed)
    from .kernels import load_backend
    backends = []
    try:
        load_backend("compiled")
        backends.append("compiled")
    except Exception:
        print("note: compiled backend unavailable, benchmarking the "
              "numpy fallback only")
    backends.append("numpy")
    results = {}
    for backend in backends:
        stats = bench_latency(bundle, iterations=args.iterations,
                              seed=args.seed, backend=backend)
        results[backend] = stats
        print(f"backend={stats['backend']} "
              f"mean_ms={stats['mean']:.4f} "
              f"median_ms={stats['median']:.4f} "
              f"p99_ms={stats['p99']:.4f} "
              f"iterations={stats['iterations']}")
    if len(results) == 2:
        ratio = results["numpy"]["p99"] / results["compiled"]["p99"]
        print(f"compiled speedup over numpy: {ratio:.2f}x (p99)")
    print("context: reference GPU implementations report about "
          "2.1 ms/frame")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    bundle = _load_bundle(args)
    viewer = Path(args.viewer) if args.viewer else None
    app = create_app(bundle, viewer_dir=viewer)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------
# argument parsing

def _add_config_flags(sp):
    sp.add_argument("--config", type=Path, default=None,
                    help="run-config JSON file")
    sp.add_argument("--seed", type=int, default=None,
                    help="seed override (unsigned 64-bit)")
    sp.add_argument("--out", type=Path, default=None,
                    help="output directory override")


def _add_bundle_flags(sp):
    sp.add_argument("--bundle", type=Path, default=None,
                    help="directory holding manifold.npz + sampler.npz")
    sp.add_argument("--manifold", type=Path, default=None,
                    help="manifold checkpoint path")
    sp.add_argument("--sampler", type=Path, default=None,
                    help="sampler checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="inbetween",
        description="Motion in-betweening: train, generate, evaluate, "
                    "benchmark, serve.")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    tm = sub.add_parser("train-manifold",
                        help="train the pose-manifold autoencoder")
    _add_config_flags(tm)
    tm.add_argument("--resume", type=Path, default=None,
                    help="continue from a manifold checkpoint")
    tm.set_defaults(fn=cmd_train_manifold)

    ts = sub.add_parser("train-sampler",
                        help="train the transition sampler against a "
                             "frozen manifold")
    _add_config_flags(ts)
    ts.add_argument("--manifold", type=Path, required=True,
                    help="trained manifold checkpoint")
    ts.add_argument("--resume", type=Path, default=None,
                    help="continue from a sampler checkpoint")
    ts.set_defaults(fn=cmd_train_sampler)

    g = sub.add_parser("generate",
                       help="synthesize a transition between two "
                            "frames of a BVH clip")
    _add_bundle_flags(g)
    g.add_argument("--bvh", type=Path, required=True,
                   help="input BVH providing start/target frames")
    g.add_argument("--start-frame", type=int, default=0)
    g.add_argument("--target-frame", type=int, required=True)
    g.add_argument("--duration", type=int, required=True,
                   help="transition length in frames (start included, "
                        "target excluded)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True,
                   help="output directory for generated.bvh")
    g.set_defaults(fn=cmd_generate)

    ev = sub.add_parser("evaluate",
                        help="windowed evaluation against a corpus, "
                             "with the interpolation baseline")
    _add_config_flags(ev)
    _add_bundle_flags(ev)
    ev.add_argument("--lengths", default="5,15,30",
                    help="comma-separated transition lengths")
    ev.add_argument("--window-len", type=int, default=65)
    ev.add_argument("--overlap", type=int, default=25)
    ev.set_defaults(fn=cmd_evaluate)

    b = sub.add_parser("bench",
                       help="per-frame latency of both kernel backends")
    _add_bundle_flags(b)
    b.add_argument("--iterations", type=int, default=200)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(fn=cmd_bench)

    sv = sub.add_parser("serve", help="run the HTTP generation service")
    _add_bundle_flags(sv)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    sv.add_argument("--viewer", type=Path, default=None,
                    help="directory of built viewer assets to serve "
                         "at /viewer")
    sv.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, NotADirectoryError,
            NonFiniteError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
