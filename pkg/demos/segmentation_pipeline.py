"""Run the two-stage segmentation pipeline end to end at toy scale.

Stage 1 fits the frequency-stream network on a pair of small scenes.
Stage 2 freezes it, carves the low-confidence/boundary pixels into an
uncertain set, and trains the noise predictor that re-estimates exactly
those pixels by reverse diffusion. The script then evaluates with and
without refinement and leaves logs, checkpoints, metrics, and label
rasters under ``out/segmentation/``.

The configuration here is deliberately small so the demo finishes in about
a minute; see the training harness defaults for the full toy scale.
"""

from pathlib import Path

from udhf2.config import RunConfig, config_text, parse_config
from udhf2.train import evaluate, train_stage1, train_stage2

OUT = Path(__file__).parent / "out" / "segmentation"

OVERRIDES = dict(image_size=32, channels="8,16,16,16", blocks_per_stage=1,
                 num_scenes=2, batch_size=2, steps=120, stage2_steps=40,
                 diffusion_steps=10)


def main():
    text = config_text(RunConfig())
    text += "".join(f"{k}={v}\n" for k, v in OVERRIDES.items())
    cfg = parse_config(text)

    print("stage 1: fitting the segmentation network")
    net, info = train_stage1(cfg, "seg", OUT)
    print(f"  stopped at step {info['steps']}, training mIoU {info['score']:.3f}")

    print("stage 2: training the uncertainty-region noise predictor")
    train_stage2(cfg, "seg", OUT, str(OUT / "stage1.ckpt"))

    print("evaluation with refinement")
    result = evaluate(cfg, "seg", OUT, str(OUT / "stage1.ckpt"),
                      stage2_checkpoint=str(OUT / "stage2.ckpt"),
                      with_refine=True)
    base, refined = result["report"], result["refined_report"]
    print(f"  initial: oa={base.oa:.3f} miou={base.miou:.3f}")
    print(f"  refined: oa={refined.oa:.3f} miou={refined.miou:.3f}")
    print(f"outputs under {OUT}")


if __name__ == "__main__":
    main()
