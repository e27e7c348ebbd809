"""Finite-difference oracles shared by the unit and acceptance tests.

The hinge losses are piecewise smooth: central differences are valid only
away from hinge kinks, mining ties, and zero distances.  The *_fd_safe
helpers reject instances that sit within tolerance of any such point so
randomized gradient checks can resample instead of flaking.
"""

import numpy as np

from icsreid.losses import pairwise_distances

FD_STEP = 1e-5
HINGE_TOL = 1e-3
TIE_TOL = 1e-4


def fd_model_grads(model, X, loss_of_features, step=FD_STEP):
    """Central differences of loss_of_features(G, F) w.r.t. model params."""
    grads = {}
    for name, param in model.params.items():
        grad = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + step
            G, F, _ = model.forward(X)
            hi = loss_of_features(G, F)
            param[idx] = orig - step
            G, F, _ = model.forward(X)
            lo = loss_of_features(G, F)
            param[idx] = orig
            grad[idx] = (hi - lo) / (2 * step)
            it.iternext()
        grads[name] = grad
    return grads


def fd_array_grad(loss_fn, array, step=FD_STEP):
    """Central differences of a scalar function w.r.t. one array."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi, lo = array.copy(), array.copy()
        hi[idx] += step
        lo[idx] -= step
        grad[idx] = (loss_fn(hi) - loss_fn(lo)) / (2 * step)
        it.iternext()
    return grad


def grad_rel_err(analytic: dict, numeric: dict) -> float:
    """Max abs difference over the max gradient magnitude, across params."""
    scale = max(max(np.abs(v).max() for v in analytic.values()),
                max(np.abs(v).max() for v in numeric.values()), 1e-12)
    return max(np.abs(analytic[k] - numeric[k]).max() for k in analytic) / scale


def array_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return np.abs(analytic - numeric).max() / scale


def composed_model_rel_err(model, X, loss_of_features, grads_of_features):
    """Backward-through-model gradients against finite differences."""
    G, F, tape = model.forward(X)
    dG, dF = grads_of_features(G, F)
    analytic = model.backward(tape, dG, dF)
    numeric = fd_model_grads(model, X, loss_of_features)
    return grad_rel_err(analytic, numeric)


def quintuplet_fd_safe(G, F, cameras, labels, bank, cfg,
                       hinge_tol=HINGE_TOL, tie_tol=TIE_TOL) -> bool:
    """True when every quintuplet term is differentiable around this point."""
    dist = pairwise_distances(np.asarray(G, dtype=float))
    n = len(cameras)
    for a in range(n):
        pos = [i for i in range(n)
               if i != a and cameras[i] == cameras[a] and labels[i] == labels[a]]
        neg = [i for i in range(n)
               if cameras[i] == cameras[a] and labels[i] != labels[a]]
        if pos and neg:
            dpos = sorted((dist[a, i] for i in pos), reverse=True)
            dneg = sorted(dist[a, i] for i in neg)
            raw = cfg.instance_margin + dpos[0] - dneg[0]
            if abs(raw) < hinge_tol:
                return False
            if raw > 0 and (dpos[0] < tie_tol or dneg[0] < tie_tol):
                return False
            if len(dpos) > 1 and dpos[0] - dpos[1] < tie_tol:
                return False
            if len(dneg) > 1 and dneg[1] - dneg[0] < tie_tol:
                return False
        cam = int(cameras[a])
        if bank.layout.id_counts[cam - 1] >= 2:
            block = bank.camera_centroids(cam)
            own = int(labels[a]) - 1
            dists = np.linalg.norm(np.asarray(F[a], dtype=float) - block, axis=1)
            others = sorted(dists[j] for j in range(len(dists)) if j != own)
            raw = cfg.centroid_margin + dists[own] - others[0]
            if abs(raw) < hinge_tol:
                return False
            if raw > 0 and (dists[own] < tie_tol or others[0] < tie_tol):
                return False
            if len(others) > 1 and others[1] - others[0] < tie_tol:
                return False
    return True


def triplet_fd_safe(features, labels, margin,
                    hinge_tol=HINGE_TOL, tie_tol=TIE_TOL) -> bool:
    dist = pairwise_distances(np.asarray(features, dtype=float))
    n = len(labels)
    for a in range(n):
        pos = [i for i in range(n) if i != a and labels[i] == labels[a]]
        neg = [i for i in range(n) if labels[i] != labels[a]]
        dpos = sorted((dist[a, i] for i in pos), reverse=True)
        dneg = sorted(dist[a, i] for i in neg)
        raw = margin + dpos[0] - dneg[0]
        if abs(raw) < hinge_tol:
            return False
        if raw > 0 and (dpos[0] < tie_tol or dneg[0] < tie_tol):
            return False
        if len(dpos) > 1 and dpos[0] - dpos[1] < tie_tol:
            return False
        if len(dneg) > 1 and dneg[1] - dneg[0] < tie_tol:
            return False
    return True
