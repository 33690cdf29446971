"""Finite-difference oracles for the analytic gradients.

Central differences in float64 with step h validate backward() on random
composite graphs.  Kinked ops (relu family, abs, clip) are checked away from
their kinks: a trial whose intermediate values sit within a guard band of a
kink is redrawn, since the finite-difference oracle is only valid where the
function is differentiable.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

KINKED = {"relu", "leaky_relu", "abs", "clip"}
KINK_GUARD = 1e-3


def relative_error(analytic, numeric):
    num = np.max(np.abs(analytic - numeric))
    den = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(num / den)


def finite_diff(f, arrays, h=1e-5):
    """Central-difference gradient of scalar f(list of arrays) per array."""
    grads = []
    for ai, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def _kink_distance(node):
    """Smallest margin of any kinked-op input from its kink location."""
    x = node.parents[0].data
    if node.op in ("relu", "leaky_relu", "abs"):
        return float(np.min(np.abs(x))) if x.size else np.inf
    if node.op == "clip":
        lo, hi = node.attrs["lo"], node.attrs["hi"]
        return float(min(np.min(np.abs(x - lo)), np.min(np.abs(x - hi)))) if x.size else np.inf
    return np.inf


def _collect_nodes(root):
    seen, out, stack = set(), [], [root]
    while stack:
        n = stack.pop()
        if n.node_id in seen:
            continue
        seen.add(n.node_id)
        out.append(n)
        stack.extend(n.parents)
    return out


# --- random composite graphs over the op set --------------------------------

def _rand(rng, shape, lo=0.2, hi=1.5):
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _build_random_graph(rng, leaves_out):
    """A random composition of the op set ending in a scalar.

    Shapes stay small (3..20 elements).  Returns the scalar loss tensor and
    appends the requires_grad leaf tensors to leaves_out.
    """
    kind = rng.integers(0, 6)
    if kind == 0:  # elementwise chain
        n = int(rng.integers(3, 9))
        x = ad.leaf(_rand(rng, (n,)), requires_grad=True)
        y = ad.leaf(_rand(rng, (n,)), requires_grad=True)
        leaves_out += [x, y]
        t = x * y + ad.tanh(x) - ad.sigmoid(y)
        t = ad.square(t) + ad.leaky_relu(x, 0.2) * 0.5
        t = t + ad.absolute(y)
        return t.sum()
    if kind == 1:  # dense + activations
        n, m = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        x = ad.leaf(_rand(rng, (2, n)), requires_grad=True)
        w = ad.leaf(_rand(rng, (n, m), lo=0.1, hi=0.9), requires_grad=True)
        b = ad.leaf(_rand(rng, (m,)), requires_grad=True)
        leaves_out += [x, w, b]
        h = ad.matmul(x, w) + ad.broadcast(b.reshape(1, m), (2, m))
        h = ad.relu(h) + ad.softplus(h) * 0.3
        return h.mean()
    if kind == 2:  # conv2d path
        c, o = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        x = ad.leaf(_rand(rng, (1, c, 4, 4)), requires_grad=True)
        w = ad.leaf(_rand(rng, (o, c, 3, 3), lo=0.1, hi=0.8), requires_grad=True)
        leaves_out += [x, w]
        y = ad.conv2d(x, w, stride=1, pad=1)
        return ad.tanh(y).sum() + ad.square(y).mean()
    if kind == 3:  # conv3d + upsample
        x = ad.leaf(_rand(rng, (1, 1, 2, 2, 2)), requires_grad=True)
        w = ad.leaf(_rand(rng, (2, 1, 3, 3, 3), lo=0.1, hi=0.6), requires_grad=True)
        leaves_out += [x, w]
        u = ad.upsample_nearest(x, 2)
        y = ad.conv3d(u, w, stride=2, pad=1)
        return ad.sigmoid(y).sum()
    if kind == 4:  # structural: concat / narrow / reshape / broadcast
        x = ad.leaf(_rand(rng, (2, 3)), requires_grad=True)
        y = ad.leaf(_rand(rng, (2, 2)), requires_grad=True)
        leaves_out += [x, y]
        c = ad.concat([x, y], axis=1)
        a = ad.narrow(c, 1, 1, 3)
        t = a.reshape(3, 2) * ad.broadcast(ad.constant(np.array([[0.5, 2.0]])), (3, 2))
        return ad.exp(t * 0.3).sum()
    # scalar analytic chain: exp/log/sqrt/powc on positive values
    x = ad.leaf(_rand(rng, (5,), lo=0.4, hi=1.6) ** 2 + 0.2, requires_grad=True)
    leaves_out.append(x)
    t = ad.log(x) + ad.sqrt(x) - x ** 1.5
    return (t * 0.7).sum()


def autodiff_gradcheck(trials=100, seed=0, h=1e-5):
    """Max relative error of backward() vs central differences.

    Returns (max_rel_err, details) where details lists per-trial errors.
    """
    worst = 0.0
    details = []
    trial = 0
    attempt = 0
    while trial < trials:
        rng = ad.rng_for(seed, 101, attempt)
        attempt += 1
        leaves = []
        loss = _build_random_graph(rng, leaves)
        margins = [_kink_distance(n) for n in _collect_nodes(loss) if n.op in KINKED]
        if margins and min(margins) < KINK_GUARD:
            continue  # too close to a kink for the FD oracle; redraw
        for lf in leaves:
            lf.zero_grad()
        ad.backward(loss)
        arrays = [lf.data.copy() for lf in leaves]

        def f(arrs):
            for lf, a in zip(leaves, arrs):
                lf.data[...] = a
            return _reval(loss)

        fd = finite_diff(f, arrays, h=h)
        for lf, a in zip(leaves, arrays):
            lf.data[...] = a
        err = max(relative_error(lf.grad, g) for lf, g in zip(leaves, fd))
        details.append(err)
        worst = max(worst, err)
        trial += 1
    return worst, details


def _reval(root):
    """Recompute a graph's value from current leaf data (fixed topology)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    vals = {}
    for node in order:
        if node.op == "leaf":
            vals[node.node_id] = node.data
        else:
            vals[node.node_id] = ad.OPS[node.op].forward(
                [vals[p.node_id] for p in node.parents], node.attrs
            )
    return vals[root.node_id].item()


def check_tensor_grad(build, leaves, h=1e-5):
    """FD-check an arbitrary scalar graph builder.

    ``build()`` must construct the loss from the given leaf tensors.  Returns
    the max relative error over all leaves.
    """
    for lf in leaves:
        lf.zero_grad()
    loss = build()
    ad.backward(loss)
    analytic = [np.array(lf.grad, copy=True) for lf in leaves]
    arrays = [lf.data.copy() for lf in leaves]

    def f(arrs):
        for lf, a in zip(leaves, arrs):
            lf.data[...] = a
        return build().data.item()

    fd = finite_diff(f, arrays, h=h)
    for lf, a in zip(leaves, arrays):
        lf.data[...] = a
    return max(relative_error(a, g) for a, g in zip(analytic, fd))


# --- projection gradients -----------------------------------------------------

def projection_gradcheck(trials=20, seed=0, w=8, res=16, samples=16, h=1e-6):
    """FD-check the projection adjoint on random grids and viewpoints.

    Voxel gradients are checked by perturbing every voxel; viewpoint
    gradients by perturbing elevation and azimuth.  Viewpoints whose FD
    window crosses a trilinear cell boundary are redrawn (the oracle is
    only valid away from lattice kinks).  Returns (max_rel_err, details).
    """
    from . import projection as pj

    intr = pj.CameraIntrinsics(height=res, width=res)
    cfg = pj.ProjectionConfig(samples=samples)
    worst = 0.0
    details = []
    trial = 0
    attempt = 0
    while trial < trials:
        rng = ad.rng_for(seed, 202, attempt)
        attempt += 1
        values = rng.random((w, w, w)) * 0.9
        grid = __import__("voxsynth.voxel", fromlist=["VoxelGrid"]).VoxelGrid(values)
        elev = float(rng.uniform(-1.2, 1.2))
        azim = float(rng.uniform(0.0, 2.0 * np.pi))
        if _crosses_lattice(values.shape[0], elev, azim, intr, cfg, h):
            continue
        view = pj.Viewpoint(elev, azim)
        wd = rng.standard_normal((res, res))
        ws = rng.standard_normal((res, res))

        d_vals, d_e, d_a = pj.project_backward(grid, view, intr, cfg, wd, ws)

        def loss(vals=values, e=elev, a=azim):
            sk = pj.project(
                __import__("voxsynth.voxel", fromlist=["VoxelGrid"]).VoxelGrid(np.clip(vals, 0, 1)),
                pj.Viewpoint(e, a), intr, cfg,
            )
            return float(np.sum(wd * sk.depth + ws * sk.silhouette))

        fd_vals = np.zeros_like(values)
        hv = 1e-5
        flat = values.reshape(-1)
        fdflat = fd_vals.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + hv
            fp = loss()
            flat[i] = orig - hv
            fm = loss()
            flat[i] = orig
            fdflat[i] = (fp - fm) / (2 * hv)
        fd_e = (loss(e=elev + h) - loss(e=elev - h)) / (2 * h)
        fd_a = (loss(a=azim + h) - loss(a=azim - h)) / (2 * h)

        err = max(
            relative_error(d_vals, fd_vals),
            relative_error(np.array([d_e]), np.array([fd_e])),
            relative_error(np.array([d_a]), np.array([fd_a])),
        )
        details.append(err)
        worst = max(worst, err)
        trial += 1
    return worst, details


def _crosses_lattice(w, elev, azim, intr, cfg, h):
    """True if any sample coordinate crosses an integer plane within +-h."""
    from . import projection as pj

    def coords(e, a):
        f = pj._forward_internals(np.zeros((w, w, w)), 1.0, pj.Viewpoint(e, a), intr, cfg)
        return f["q"]

    for qa, qb in (
        (coords(elev - h, azim), coords(elev + h, azim)),
        (coords(elev, azim - h), coords(elev, azim + h)),
    ):
        if np.any(np.floor(qa) != np.floor(qb)):
            return True
    return False
