import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent / "flows"))

from experiment import Inclusion, Phantom, default_phantom, write_phantom_csv  # noqa: E402
from fem import Rectangle  # noqa: E402


def generate_random_phantom(n_inclusions: int, seed: int, rect: Rectangle = Rectangle(),
                            max_value: float = 4.0) -> Phantom:
    """
    Random axis-aligned inclusions inside rect.

    Args:
        n_inclusions (int): Number of rectangles
        seed (int): Seed of the PCG64 generator
        rect (Rectangle): Domain the inclusions must stay in
        max_value (float): Largest absolute inclusion value, attained by the first one

    Returns:
        Phantom: Inclusions on a zero background
    """
    if n_inclusions < 1:
        raise ValueError(f"Need at least one inclusion, got {n_inclusions}")
    rng = np.random.default_rng(seed)
    width = rect.bx - rect.ax
    height = rect.by - rect.ay

    inclusions = []
    for i in range(n_inclusions):
        w, h = rng.uniform(0.1, 0.3, size=2) * (width, height)
        x0 = rng.uniform(rect.ax, rect.bx - w)
        y0 = rng.uniform(rect.ay, rect.by - h)
        value = max_value if i == 0 else rng.uniform(-max_value, max_value)
        inclusions.append(Inclusion(float(x0), float(x0 + w), float(y0), float(y0 + h), round(float(value), 3)))

    return Phantom(inclusions=tuple(inclusions))


if __name__ == "__main__":
    output_dir = Path(__file__).parent.parent / "data" / "phantoms"

    path = write_phantom_csv(default_phantom(), output_dir / "default.csv")
    print(f"Generated default phantom -> {path}")

    random_phantom = generate_random_phantom(n_inclusions=5, seed=42)
    path = write_phantom_csv(random_phantom, output_dir / "random_42.csv")
    print(f"Generated {len(random_phantom.inclusions)} random inclusions -> {path}")
