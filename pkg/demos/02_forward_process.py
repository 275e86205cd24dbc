"""Walk a clean map through the forward corruption and invert it back.

The forward process mixes the normalized map with Gaussian noise at a
schedule-controlled ratio: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
By t = T the map is statistically indistinguishable from pure noise, yet
knowing the injected eps lets you solve for x0 exactly at any t.

Run:  python demos/02_forward_process.py
"""

import pathlib

import numpy as np
from PIL import Image

from remdiff import (GRAYSCALE_8BIT, SceneSpec, TxCoordinate, build_schedule,
                     generate_scene, invert_q_sample, normalize, q_sample)

OUT = pathlib.Path(__file__).parent / "output"


def to_u8(normalized):
    raw = (np.clip(normalized, -1, 1) + 1.0) * 127.5
    return np.clip(np.round(raw), 0, 255).astype(np.uint8)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rec = generate_scene(SceneSpec(height=64, width=64, seed=3),
                         TxCoordinate(20, 40))
    x0 = normalize(rec.map, GRAYSCALE_8BIT).values

    schedule = build_schedule(T=1000)
    print(f"linear schedule: beta in [{schedule.beta[0]:.1e}, "
          f"{schedule.beta[-1]:.2e}], abar_T = {schedule.alpha_bar_at(1000):.2e}")

    rng = np.random.default_rng(0)
    eps = rng.normal(size=x0.shape)
    panels, worst = [], 0.0
    for t in (1, 100, 250, 500, 750, 1000):
        x_t = q_sample(schedule, x0, t, eps)
        back = invert_q_sample(schedule, x_t, t, eps)
        worst = max(worst, float(np.max(np.abs(back - x0))))
        panels.append(to_u8(x_t))
        signal = schedule.alpha_bar_at(t) ** 0.5
        print(f"  t={t:4d}: signal scale {signal:.3f}, "
              f"noisy range [{x_t.min():+.2f}, {x_t.max():+.2f}]")

    Image.fromarray(np.concatenate(panels, axis=1), mode="L").save(
        OUT / "forward_noising.png")
    print(f"noising strip -> {OUT / 'forward_noising.png'}")
    print(f"max |inverted - original| over all t shown: {worst:.2e}")


if __name__ == "__main__":
    main()
