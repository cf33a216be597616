"""Shared test helpers: synthetic track generators and gradient checking."""
import numpy as np
import pytest

from trajlab.data import RawWindow


# ---- numerical gradient checking ----------------------------------------

FD_STEP = 1e-5


def numerical_grad(f, array, h=FD_STEP):
    """Central-difference gradient of the scalar f() wrt `array` (in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(analytic, numeric):
    # worst deviation relative to the tensor's gradient scale; per-element
    # ratios on near-zero entries would only measure FD roundoff
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def check_grads(build_loss, tensors, tol=1e-4, h=1e-4):
    """`build_loss()` returns a fresh scalar Tensor touching `tensors`.

    Backward grads must match central differences on every tensor. The step
    is sized so FD roundoff sits well under the tolerance; truncation stays
    negligible at these smooth, O(1)-curvature losses.
    """
    loss = build_loss()
    loss.backward()
    for name, t in tensors.items():
        numeric = numerical_grad(lambda: float(build_loss().data), t.data, h=h)
        err = max_rel_err(t.grad, numeric)
        assert err < tol, f"{name}: relative gradient error {err:.2e}"


# ---- synthetic tracks ----------------------------------------------------


def _roll_out(origin, v, heading0, turn, n_steps):
    headings = heading0 + turn * np.arange(n_steps)
    steps = v * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    return np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)]) + origin


def arc_window(rng, t_obs=8, t_pred=12, v_range=(0.25, 0.8), turn=0.0,
               scene="syn", ped=0, start=0):
    """One constant-speed, constant-turn-rate window."""
    v = rng.uniform(*v_range)
    heading0 = rng.uniform(0.0, 2.0 * np.pi)
    origin = rng.uniform(-8.0, 8.0, size=2)
    pos = _roll_out(origin, v, heading0, turn, t_obs - 1 + t_pred)
    return RawWindow(scene_id=scene, pedestrian_id=ped, start_frame=start,
                     observed=pos[:t_obs], future=pos[t_obs:])


def arcs_and_lines(n, seed, t_obs=8, t_pred=12, scene="syn"):
    """Half straight lines, half arcs with |turn| in [0.03, 0.15] rad/step."""
    rng = np.random.default_rng(seed)
    windows = []
    for i in range(n):
        if i % 2 == 0:
            turn = 0.0
        else:
            turn = rng.uniform(0.03, 0.15) * (1.0 if rng.random() < 0.5 else -1.0)
        windows.append(arc_window(rng, t_obs=t_obs, t_pred=t_pred, turn=turn,
                                  scene=scene, ped=i, start=10 * i))
    return windows


N_HEADING_GRID = 31


def turn_grid_windows(n=32, v=0.6, t_obs=8, t_pred=12, scene="grid"):
    """Constant-turn tracks whose step vectors live on a 31-point heading grid.

    Every step is v times a grid direction, so the whole corpus uses exactly
    31 distinct nonzero step vectors (plus the zero leading step of the
    speeds representation): a 32-entry codebook covers them exactly.
    """
    grid = 2.0 * np.pi * np.arange(N_HEADING_GRID) / N_HEADING_GRID
    dirs = np.stack([np.cos(grid), np.sin(grid)], axis=1)
    windows = []
    for i in range(n):
        j0 = i % N_HEADING_GRID
        rate = (i % 5) - 2  # grid slots per step, -2..2
        slots = (j0 + rate * np.arange(t_obs - 1 + t_pred)) % N_HEADING_GRID
        steps = v * dirs[slots]
        origin = np.array([0.25 * i, -0.125 * i])
        pos = np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)]) + origin
        windows.append(RawWindow(scene_id=scene, pedestrian_id=i, start_frame=0,
                                 observed=pos[:t_obs], future=pos[t_obs:]))
    return windows


def dyadic_window(rng, t_obs=8, t_pred=12, scene="dyad", ped=0, start=0):
    """Window whose coordinates are multiples of 1/64: exact in float64, and
    short cumulative sums of them stay exact."""
    steps = rng.integers(-48, 49, size=(t_obs - 1 + t_pred, 2)) / 64.0
    origin = rng.integers(-512, 513, size=2) / 64.0
    pos = np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)]) + origin
    return RawWindow(scene_id=scene, pedestrian_id=ped, start_frame=start,
                     observed=pos[:t_obs], future=pos[t_obs:])


# ---- scene files ---------------------------------------------------------


def write_scene_file(path, n_peds, seed, n_frames=40, frame_step=10):
    """Plain-text scene: one (frame, ped, x, y) row per line, frame-sorted."""
    rng = np.random.default_rng(seed)
    rows = []
    for ped in range(1, n_peds + 1):
        v = rng.uniform(0.3, 0.7)
        heading0 = rng.uniform(0.0, 2.0 * np.pi)
        turn = rng.uniform(-0.08, 0.08)
        origin = rng.uniform(-5.0, 5.0, size=2)
        pos = _roll_out(origin, v, heading0, turn, n_frames - 1)
        for t in range(n_frames):
            rows.append((frame_step * t, ped, pos[t, 0], pos[t, 1]))
    rows.sort()
    path.write_text("\n".join(f"{f} {p} {x:.6f} {y:.6f}" for f, p, x, y in rows) + "\n")
    return path


@pytest.fixture
def scene_dir(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    for i, name in enumerate(("alpha", "beta", "gamma")):
        write_scene_file(raw / f"{name}.txt", n_peds=4, seed=100 + i)
    return raw
