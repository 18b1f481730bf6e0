"""Show the recorded-tape autodiff core fitting a small convolution.

A two-layer network is trained to reproduce a fixed random convolution's
output from random inputs. Gradients flow only while a ``record()`` context
is active, and only ``Parameter`` leaves accumulate them — the same
machinery every network in the package trains with. The script finishes
with a miniature finite-difference audit over each differentiable operator
family.
"""

import numpy as np

from udhf2 import tensor as T
from udhf2.gradcheck import run_sweep
from udhf2.nn import Conv2d
from udhf2.train import AdamW


def main():
    rng = np.random.default_rng(3)
    target_conv = Conv2d(3, 8, 3, rng)
    student = [Conv2d(3, 8, 3, rng), Conv2d(8, 8, 1, rng)]
    params = [p for layer in student for _, p in layer.named_parameters()]
    opt = AdamW(params, lr=3e-3)

    x = rng.standard_normal((4, 3, 12, 12)).astype(np.float32)
    with T.record():
        want = target_conv(T.Tensor(x))
    want = want.data

    print("fitting a 2-layer student to a frozen random convolution:")
    for step in range(1, 201):
        opt.zero_grad()
        with T.record():
            out = student[1](T.relu(student[0](T.Tensor(x))))
            diff = out - T.Tensor(want)
            loss = (diff * diff).mean()
        loss.backward()
        opt.step()
        if step % 40 == 0 or step == 1:
            print(f"  step {step:3d}  mse={loss.item():.6f}")

    print("\nfinite-difference audit (worst relative error per family):")
    for name, err in run_sweep(instances=3).items():
        print(f"  {name:24s} {err:.3e}")


if __name__ == "__main__":
    main()
