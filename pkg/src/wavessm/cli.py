"""Batch command-line tool: enhancement, analysis, metrics, verification.

Commands are deterministic given their flags (and WAVE_SSM_THREADS never
changes results, only the worker count).  PPM (P6) is the native image
format; PNG inputs work when Pillow is installed.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import checks, metrics, network, ppm, train, wavelet

REPORT_BINS = 256


def _load_unit_image(path, dtype=np.float64) -> np.ndarray:
    return ppm.to_unit(ppm.read_image(path), dtype=dtype)


def cmd_enhance(args) -> int:
    model = network.load(args.ckpt)
    img = _load_unit_image(args.input, dtype=np.float32)
    out = network.forward(model, img)
    ppm.write_ppm(args.output, ppm.quantize(out))
    print(f"wrote {args.output}")
    return 0


def _pad_even(img: np.ndarray) -> np.ndarray:
    ph, pw = img.shape[0] % 2, img.shape[1] % 2
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return img


def _hist_list(img: np.ndarray) -> dict:
    h = metrics.histogram(np.clip(img, 0.0, 1.0), bins=REPORT_BINS)
    return {"bins": REPORT_BINS, "channels": h.bins.tolist()}


def _image_section(path, img: np.ndarray) -> tuple[dict, wavelet.WaveletSubbands]:
    sub = wavelet.dwt2(_pad_even(img))
    energy = wavelet.subband_energies(sub)
    total = sum(energy.values())
    high = energy["cH"] + energy["cV"] + energy["cD"]
    section = {
        "path": str(path),
        "height": img.shape[0],
        "width": img.shape[1],
        "subband_energy": energy,
        "low_energy_fraction": energy["cA"] / total if total > 0 else 1.0,
        "high_energy_fraction": high / total if total > 0 else 0.0,
        "histogram": _hist_list(img),
    }
    return section, sub


def _swap_distance(base_img, own: wavelet.WaveletSubbands, other: wavelet.WaveletSubbands,
                   swap_low: bool) -> float:
    if swap_low:
        mixed = wavelet.WaveletSubbands(other.ca, own.ch, own.cv, own.cd)
    else:
        mixed = wavelet.WaveletSubbands(own.ca, other.ch, other.cv, other.cd)
    recon = np.clip(wavelet.iwt2(mixed), 0.0, 1.0)
    return metrics.hist_distance(
        metrics.histogram(np.clip(base_img, 0.0, 1.0), bins=REPORT_BINS),
        metrics.histogram(recon, bins=REPORT_BINS),
    )


def cmd_analyze(args) -> int:
    img_a = _load_unit_image(args.a)
    report = {}
    report["a"], sub_a = _image_section(args.a, img_a)
    if args.b is not None:
        img_b = _load_unit_image(args.b)
        report["b"], sub_b = _image_section(args.b, img_b)
        if sub_a.shape != sub_b.shape:
            raise ValueError(
                f"--a and --b must have matching sizes, got "
                f"{img_a.shape} vs {img_b.shape}"
            )
        swap = {
            "a_swap_high": _swap_distance(img_a, sub_a, sub_b, swap_low=False),
            "a_swap_low": _swap_distance(img_a, sub_a, sub_b, swap_low=True),
            "b_swap_high": _swap_distance(img_b, sub_b, sub_a, swap_low=False),
            "b_swap_low": _swap_distance(img_b, sub_b, sub_a, swap_low=True),
        }
        swap["high_swap_less_disruptive"] = bool(
            swap["a_swap_high"] < swap["a_swap_low"]
            and swap["b_swap_high"] < swap["b_swap_low"]
        )
        report["swap"] = swap
    with open(args.report, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"wrote {args.report}")
    return 0


def cmd_metrics(args) -> int:
    a = _load_unit_image(args.a)
    b = _load_unit_image(args.b)
    p = metrics.psnr(a, b)
    s = metrics.ssim(a, b)
    print(f"PSNR: {'inf' if p == float('inf') else f'{p:.4f}'} dB")
    print(f"SSIM: {s:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    results = checks.run_gradchecks(args.ops)
    width = max(len(r.op) for r in results)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        where = f"  ({r.worst_input}{list(r.worst_index)})" if not r.passed else ""
        print(f"{r.op:<{width}}  max_err {r.max_err:.3e}  tol {r.tol:.0e}  {status}{where}")
        failed += not r.passed
    if failed:
        print(f"{failed} op(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_init(args) -> int:
    model = network.build(network.ModelConfig(seed=args.seed))
    network.save(model, args.out)
    print(f"wrote {args.out} ({network.param_count(model)} parameters)")
    return 0


def cmd_train_toy(args) -> int:
    low = _load_unit_image(args.input[0])
    target = _load_unit_image(args.input[1])
    model = network.build(network.TOY_CONFIG)
    initial, final = train.train_pair(model, low, target, steps=args.steps)
    network.save(model, args.out)
    print(f"initial L1: {initial:.6f}")
    print(f"final L1:   {final:.6f}")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavessm",
        description="Wavelet-domain state-space low-light image enhancement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance one image with a checkpoint")
    p.add_argument("--input", required=True, help="input image (PPM/PNG)")
    p.add_argument("--output", required=True, help="output image (PPM)")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("analyze", help="wavelet subband/histogram report")
    p.add_argument("--a", required=True, help="image to analyze")
    p.add_argument("--b", help="optional second image for band-swap analysis")
    p.add_argument("--report", required=True, help="output JSON path")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--ops", default="all", help="'all' or one op name")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("init", help="write a seeded checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("train-toy", help="overfit one small image pair")
    p.add_argument("--input", nargs=2, required=True,
                   metavar=("LOW", "TARGET"), help="input image pair")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", required=True, help="output checkpoint")
    p.set_defaults(fn=cmd_train_toy)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
