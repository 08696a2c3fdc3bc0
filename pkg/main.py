#!/usr/bin/env python3
"""
UBGAN toolkit - command-line entry point

Streaming subband bandwidth extension from 16 kHz to 32 kHz: filter bank
design, feature dumps, side-info encoding, extension, complexity reports,
gradient checks, toy training and metrics.
"""

import os
import sys
import json
import argparse
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple

import adversary
import conditioning
import generator
import pqmf
import sideinfo
from audioio import AudioBuffer, align_and_snr, read_wav, write_wav
from config import Config, ModelConfig
from errors import UbganError, UsageError
from weight_store import read_weights, write_weights

FLOP_CONVENTION = "MAC = 2 FLOPs; bias, activation and normalization = 1 FLOP per scalar op; features and PQMF included"


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that reports usage problems as UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="main.py",
        description="UBGAN streaming subband bandwidth extension toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Design the 8-band prototype filter and report its reconstruction SNR
  python main.py design-pqmf --bands 8 --taps 16

  # Blind extension of one or more 16 kHz files
  python main.py extend --in wb.wav --out swb.wav --weights blind.ubw
  python main.py extend --in a.wav b.wav --out out_dir/ --weights blind.ubw

  # Guided extension: encode side-info from the 32 kHz original first
  python main.py sideinfo-encode --in swb.wav --weights guided.ubw --out side.ubs
  python main.py extend --mode guided --in wb.wav --sideinfo side.ubs --out swb.wav --weights guided.ubw

  # Complexity and parameter count
  python main.py report-complexity --weights blind.ubw --json

  # Gradient checks and a toy overfit run
  python main.py gradcheck --seed 7
  python main.py train-toy --clip swb.wav --mode blind --steps 500 --out toy.ubw --trace trace.csv
        """
    )
    parser.add_argument("--verbose", action="store_true", help="Enable verbose output")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    design = sub.add_parser("design-pqmf", help="Design a PQMF prototype filter")
    design.add_argument("--bands", type=int, default=8, help="Number of bands, 4 or 8 (default: 8)")
    design.add_argument("--taps", type=int, default=16, help="Taps per band (default: 16)")
    design.add_argument("--attenuation", type=float, help="Stop-band attenuation in dB (sets the Kaiser beta)")
    design.add_argument("--out", help="Write the prototype to a UBW1 weight file")
    design.add_argument("--json", action="store_true", help="Machine-readable output")

    features = sub.add_parser("features", help="Dump the log-mel conditioning of a 16 kHz file")
    features.add_argument("--in", dest="inputs", required=True, help="16 kHz mono WAV")
    features.add_argument("--out", required=True, help="Raw float32 output (shape in OUT.json)")

    encode = sub.add_parser("sideinfo-encode", help="Encode guided-mode side-info from a 32 kHz file")
    encode.add_argument("--in", dest="inputs", required=True, help="32 kHz mono WAV")
    encode.add_argument("--out", required=True, help="Output .ubs bitstream")
    encode.add_argument("--weights", help="Guided weights (default: $UBGAN_WEIGHTS)")

    extend = sub.add_parser("extend", help="Extend 16 kHz audio to 32 kHz")
    extend.add_argument("--in", dest="inputs", nargs="+", required=True, help="16 kHz mono WAV file(s)")
    extend.add_argument("--out", required=True, help="Output WAV, or a directory for several inputs")
    extend.add_argument("--mode", choices=["blind", "guided"], help="Extension mode (default: from the weights)")
    extend.add_argument("--sideinfo", nargs="+", help="One .ubs bitstream per input (guided mode)")
    extend.add_argument("--weights", help="Weights file (default: $UBGAN_WEIGHTS)")
    extend.add_argument("--compensate-delay", action="store_true", help="Drop the filter delay from the output")
    extend.add_argument("--streaming", action="store_true", help="Process frame by frame")
    extend.add_argument("--pcm16", action="store_true", help="Write 16-bit PCM instead of float")

    report = sub.add_parser("report-complexity", help="Parameter count and GFLOPS")
    report.add_argument("--weights", help="Weights file (default: $UBGAN_WEIGHTS)")
    report.add_argument("--mode", choices=["blind", "guided"], help="Architecture when no weights are given")
    report.add_argument("--json", action="store_true", help="Machine-readable output")

    grad = sub.add_parser("gradcheck", help="Finite-difference gradient checks")
    grad.add_argument("--seed", type=int, default=Config.UBGAN_SEED, help="Seed for probes and inputs")
    grad.add_argument("--skip-model", action="store_true", help="Only check the individual ops")

    train = sub.add_parser("train-toy", help="Overfit the generator on one clip")
    train.add_argument("--clip", required=True, help="32 kHz mono WAV, a whole number of 20 ms frames")
    train.add_argument("--mode", choices=["blind", "guided"], default="blind")
    train.add_argument("--steps", type=int, default=500, help="Pre-training steps (default: 500)")
    train.add_argument("--adversarial", choices=["on", "off"], default="off", help="Run the adversarial phase")
    train.add_argument("--adversarial-steps", type=int, default=50, help="Adversarial steps when enabled")
    train.add_argument("--wb", help="Coded 16 kHz version of the clip (default: subband-zeroing surrogate)")
    train.add_argument("--out", required=True, help="Output weights file")
    train.add_argument("--trace", required=True, help="Output loss trace CSV")
    train.add_argument("--codes-out", help="Write the trained side-info codes (guided mode)")
    train.add_argument("--seed", type=int, default=Config.UBGAN_SEED)

    metrics = sub.add_parser("metrics", help="Align two signals and report SNR and spectral losses")
    metrics.add_argument("--ref", required=True, help="Reference WAV")
    metrics.add_argument("--test", required=True, help="WAV under test")
    metrics.add_argument("--max-lag", type=int, default=256, help="Largest lag searched (default: 256)")
    metrics.add_argument("--json", action="store_true", help="Machine-readable output")
    return parser


def _load_model(weights_arg: Optional[str], mode: Optional[str] = None) -> generator.Generator:
    path = Config.get_weights_path(weights_arg)
    if not path:
        raise UsageError("No weights given: use --weights or set UBGAN_WEIGHTS")
    store = read_weights(path)
    if mode and store.config.mode != mode:
        raise UsageError(f"{path} holds {store.config.mode} weights but --mode is {mode}")
    return generator.build(store.config, store)


def _write_all(writes: List[Tuple[str, Callable[[str], None]]]):
    """
    Write several outputs all or nothing

    Each writer fills a temporary file next to its destination; the
    destinations are replaced only after every writer succeeded.
    """
    staged = []
    try:
        for path, write in writes:
            fd, tmp_path = tempfile.mkstemp(suffix='.part', dir=os.path.dirname(os.path.abspath(path)))
            os.close(fd)
            staged.append((tmp_path, path))
            write(tmp_path)
        for tmp_path, path in staged:
            os.replace(tmp_path, path)
    except BaseException:
        for tmp_path, _ in staged:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
        raise


def cmd_design_pqmf(args) -> int:
    if args.taps < 2:
        raise UsageError("--taps must be at least 2")
    p = pqmf.design_prototype(args.bands, args.taps, args.attenuation)
    snr = pqmf.reconstruction_snr(p)
    if args.out:
        pqmf.write_prototype(args.out, p)
    summary = {
        'bands': p.num_bands,
        'length': p.length,
        'cutoff': p.cutoff,
        'window_beta': p.window_beta,
        'delay_samples': p.delay,
        'snr_db': snr,
    }
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(f"✅ {p.num_bands}-band prototype, {p.length} taps")
        print(f"   Cutoff: {p.cutoff:.6f} (relative to Nyquist), Kaiser beta {p.window_beta:.2f}")
        print(f"   Delay: {p.delay} samples")
        print(f"   Reconstruction SNR: {snr:.1f} dB")
    return 0


def cmd_features(args) -> int:
    x = read_wav(args.inputs)
    mel = conditioning.mel_matrix(x)
    conditioning.write_feature_matrix(args.out, mel)
    print(f"✅ {mel.shape[0]} frames x {mel.shape[1]} mel bands written to {args.out}")
    return 0


def cmd_sideinfo_encode(args) -> int:
    model = _load_model(args.weights)
    if model.mode != 'guided':
        raise UsageError("sideinfo-encode needs guided weights")
    x = read_wav(args.inputs)
    stream = sideinfo.encode(x, model.encoder, model.prototype)
    sideinfo.write_bitstream(args.out, stream)
    print(f"✅ {stream.num_frames} frames, {stream.payload_bits} bits ({stream.bitrate:.0f} bit/s) written to {args.out}")
    return 0


def _extend_one(model: generator.Generator, in_path: str, side_path: Optional[str], args) -> AudioBuffer:
    x = read_wav(in_path)
    codes = sideinfo.read_bitstream(side_path).codes if side_path else None
    if args.streaming:
        samples = generator.extend_streaming(x, model, codes)
        if args.compensate_delay:
            samples = samples[model.prototype.delay:]
        return AudioBuffer(samples, Config.SWB_RATE)
    return generator.extend(x, model, codes, compensate_delay=args.compensate_delay).audio


def _output_paths(inputs: List[str], out: str) -> List[str]:
    if len(inputs) == 1 and not os.path.isdir(out):
        return [out]
    if not os.path.isdir(out):
        raise UsageError(f"--out must be an existing directory for {len(inputs)} inputs")
    names = [os.path.basename(p) for p in inputs]
    if len(set(names)) != len(names):
        raise UsageError("Input files share a name; outputs would collide")
    return [os.path.join(out, name) for name in names]


def cmd_extend(args) -> int:
    mode = args.mode
    if mode == 'guided' and not args.sideinfo:
        raise UsageError("extend --mode guided requires --sideinfo")
    if args.sideinfo and len(args.sideinfo) != len(args.inputs):
        raise UsageError(f"{len(args.inputs)} inputs but {len(args.sideinfo)} side-info files")
    outputs = _output_paths(args.inputs, args.out)

    model = _load_model(args.weights, mode)
    if model.mode == 'guided' and not args.sideinfo:
        raise UsageError("Guided weights require --sideinfo")
    sides = args.sideinfo if model.mode == 'guided' else [None] * len(args.inputs)

    # nothing is written unless every input extends
    if len(args.inputs) == 1:
        results = [_extend_one(model, args.inputs[0], sides[0], args)]
    else:
        with ThreadPoolExecutor(max_workers=Config.UBGAN_WORKERS) as pool:
            futures = [pool.submit(_extend_one, model, i, s, args) for i, s in zip(args.inputs, sides)]
            results = [future.result() for future in futures]

    subtype = 'PCM_16' if args.pcm16 else 'FLOAT'
    _write_all([(path, lambda tmp, audio=audio: write_wav(tmp, audio, subtype)) for path, audio in zip(outputs, results)])
    for path in outputs:
        print(f"✅ {path}")
    return 0


def cmd_report_complexity(args) -> int:
    path = Config.get_weights_path(args.weights)
    if path:
        store = read_weights(path)
        config = store.config
        if args.mode and args.mode != config.mode:
            raise UsageError(f"{path} holds {config.mode} weights but --mode is {args.mode}")
    else:
        config = ModelConfig.for_mode(args.mode or 'blind')

    params = generator.param_breakdown(config)
    flops = generator.flop_breakdown(config)
    report = {
        'mode': config.mode,
        'params': sum(params.values()),
        'gflops': sum(flops.values()) / 1e9,
        'param_breakdown': params,
        'flop_breakdown': flops,
        'convention': FLOP_CONVENTION,
    }
    if args.json:
        print(json.dumps(report, indent=2))
        return 0

    print(f"UBGAN {config.mode} complexity")
    print("=" * 50)
    print(f"Parameters: {report['params']:,}")
    print(f"GFLOPS:     {report['gflops']:.3f}")
    print(f"Convention: {FLOP_CONVENTION}")
    print("\nParameters per block:")
    for name, count in params.items():
        print(f"  {name:<18} {count:>9,}")
    print("\nMFLOPS per stage:")
    for name, value in flops.items():
        print(f"  {name:<18} {value / 1e6:>9.3f}")
    return 0


def cmd_gradcheck(args) -> int:
    results = adversary.gradcheck_suite(args.seed, include_model=not args.skip_model)
    for r in results:
        print(f"{r.name:<18} {r.error:.3e}  {'ok' if r.passed else 'FAIL'} (< {r.tolerance:g})")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"❌ {len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return 3
    print(f"✅ {len(results)} checks passed")
    return 0


def cmd_train_toy(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be positive")
    if args.adversarial == 'on' and args.adversarial_steps < 1:
        raise UsageError("--adversarial-steps must be positive")
    if args.codes_out and args.mode != 'guided':
        raise UsageError("--codes-out only applies to guided mode")

    clip = read_wav(args.clip)
    wb = read_wav(args.wb) if args.wb else None
    result = adversary.toy_train(
        clip,
        mode=args.mode,
        steps=args.steps,
        adversarial_steps=args.adversarial_steps if args.adversarial == 'on' else 0,
        seed=args.seed,
        wb_input=wb,
    )
    writes = [
        (args.out, lambda tmp: write_weights(tmp, result.store)),
        (args.trace, lambda tmp: adversary.write_trace_csv(tmp, result.trace)),
    ]
    if args.codes_out:
        writes.append((args.codes_out, lambda tmp: sideinfo.write_bitstream(tmp, sideinfo.SideInfoBitstream(result.codes))))
    _write_all(writes)

    first, last = result.trace[0], result.trace[-1]
    print(f"✅ Trained {len(result.trace)} steps ({args.mode})")
    print(f"   L_sc + L_mag: {first[1] + first[2]:.4f} -> {last[1] + last[2]:.4f}")
    if result.codes:
        print(f"   Distinct side-info codes: {len(set(result.codes))}")
    return 0


def cmd_metrics(args) -> int:
    if args.max_lag < 0:
        raise UsageError("--max-lag must not be negative")
    report = align_and_snr(read_wav(args.ref), read_wav(args.test), args.max_lag)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
        return 0
    print(f"Delay:     {report.delay_samples} samples")
    print(f"SNR:       {report.snr_db:.2f} dB")
    print(f"Band SNR:  {', '.join(f'{v:.1f}' for v in report.band_snr_db)} dB")
    print(f"L_sc:      {report.sc:.4f}")
    print(f"L_mag:     {report.mag:.4f}")
    return 0


COMMANDS = {
    'design-pqmf': cmd_design_pqmf,
    'features': cmd_features,
    'sideinfo-encode': cmd_sideinfo_encode,
    'extend': cmd_extend,
    'report-complexity': cmd_report_complexity,
    'gradcheck': cmd_gradcheck,
    'train-toy': cmd_train_toy,
    'metrics': cmd_metrics,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
    except UbganError as e:
        print(f"Error: {str(e)}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return e.exit_code
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    logging.basicConfig(
        level=Config.get_log_level(args.verbose),
        format='%(asctime)s - %(levelname)s - %(message)s'
    )

    try:
        return COMMANDS[args.command](args)
    except UbganError as e:
        print(f"Error: {str(e)}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {str(e)}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("\n\nOperation cancelled by user", file=sys.stderr)
        return 1
    except Exception as e:
        logging.error(f"Unexpected error in {args.command}: {str(e)}")
        print(f"Unexpected error: {str(e)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(run())
